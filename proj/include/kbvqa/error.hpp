#pragma once

#include <stdexcept>
#include <string>

namespace kbvqa {

/// Malformed or inconsistent input (files, flags, parameters). Maps to exit code 1.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A failure that only affects one test sample; the run records it and continues.
class SampleError : public std::runtime_error {
public:
    SampleError(std::string sample_id, std::string reason, const std::string& what)
        : std::runtime_error(what), sample_id_(std::move(sample_id)), reason_(std::move(reason)) {}

    const std::string& sample_id() const noexcept { return sample_id_; }
    /// Short machine-readable tag such as "budget" or "no_neighbors".
    const std::string& reason() const noexcept { return reason_; }

private:
    std::string sample_id_;
    std::string reason_;
};

/// A completion request that could not be served (exhausted retries, malformed reply).
class BackendError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace kbvqa
