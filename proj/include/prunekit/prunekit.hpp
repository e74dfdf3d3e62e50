#pragma once

// Structured pruning toolkit for toy LLaMA-style decoders: similarity-scored
// head pruning with greedy refinement, PCA feature-space channel pruning,
// per-dimension linear-regression recovery, and cosine-driven layerwise ratio
// allocation.

#include "calibration.hpp"
#include "common.hpp"
#include "eval.hpp"
#include "importance.hpp"
#include "linalg.hpp"
#include "model.hpp"
#include "model_io.hpp"
#include "pruner.hpp"
#include "ratio.hpp"
#include "recovery.hpp"
#include "rng.hpp"
