#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "kbvqa/error.hpp"

namespace kbvqa {

/// Dense unit-norm float vector. Construction validates finiteness and rescales to unit
/// length, so cosine similarity reduces to a dot product.
class EmbeddingVector {
public:
    EmbeddingVector() = default;

    /// Rescales `values` to unit L2 norm. Vectors already within 1e-6 of unit norm are kept
    /// bit-for-bit, which makes re-ingesting an exported store idempotent.
    static EmbeddingVector normalized(std::vector<float> values, const std::string& label = "vector") {
        if (values.empty()) {
            throw InputError("embedding '" + label + "' has dimension 0");
        }
        double sq = 0.0;
        for (float v : values) {
            if (!std::isfinite(v)) {
                throw InputError("embedding '" + label + "' contains a non-finite entry");
            }
            sq += static_cast<double>(v) * static_cast<double>(v);
        }
        const double norm = std::sqrt(sq);
        if (norm == 0.0) {
            throw InputError("embedding '" + label + "' has zero norm");
        }
        if (std::abs(norm - 1.0) > 1e-6) {
            for (float& v : values) {
                v = static_cast<float>(static_cast<double>(v) / norm);
            }
        }
        EmbeddingVector out;
        out.values_ = std::move(values);
        return out;
    }

    std::size_t dim() const noexcept { return values_.size(); }
    std::span<const float> values() const noexcept { return values_; }
    bool empty() const noexcept { return values_.empty(); }

    double norm() const noexcept {
        double sq = 0.0;
        for (float v : values_) sq += static_cast<double>(v) * static_cast<double>(v);
        return std::sqrt(sq);
    }

    friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;

private:
    std::vector<float> values_;
};

/// Cosine similarity of two unit vectors, clamped to [-1, 1].
inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim()) {
        throw InputError("cosine: dimension mismatch (" + std::to_string(a.dim()) + " vs " +
                         std::to_string(b.dim()) + ")");
    }
    const auto x = a.values();
    const auto y = b.values();
    double dot = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        dot += static_cast<double>(x[i]) * static_cast<double>(y[i]);
    }
    return std::clamp(dot, -1.0, 1.0);
}

}  // namespace kbvqa
