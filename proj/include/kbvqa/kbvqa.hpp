#pragma once

// Umbrella header for the engine library (everything except the CLI).

#include "kbvqa/ablation.hpp"
#include "kbvqa/caption_ranker.hpp"
#include "kbvqa/config.hpp"
#include "kbvqa/embedding.hpp"
#include "kbvqa/ensemble.hpp"
#include "kbvqa/error.hpp"
#include "kbvqa/http_backend.hpp"
#include "kbvqa/llm_backend.hpp"
#include "kbvqa/pipeline.hpp"
#include "kbvqa/prompt_builder.hpp"
#include "kbvqa/replay.hpp"
#include "kbvqa/shot_selector.hpp"
#include "kbvqa/store.hpp"
#include "kbvqa/version.hpp"
#include "kbvqa/vqa_eval.hpp"
