#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "medvrag/types.hpp"

namespace mvrag {

// PCA reduction from the encoder's native dimension to the index
// dimension, with post-projection L2 re-normalization so dot products
// stay cosine-compatible.
struct ProjectionModel {
    std::size_t source_dim = 0;
    std::size_t target_dim = 0;
    std::vector<float> mean;          // source_dim
    Mat basis;                        // target_dim x source_dim, orthonormal rows
    std::vector<float> explained_variance;  // non-increasing
};

// Fits on the centered samples; deterministic (seed only affects callers
// that subsample before fitting). Throws on S < target_dim or non-finite
// input.
ProjectionModel fit_projection(const Mat& samples, std::size_t target_dim,
                               std::uint64_t seed = 0);

struct ProjectionResult {
    Mat projected;                       // k x target_dim, unit-norm rows
    std::vector<std::size_t> degenerate; // rows that projected to zero
};

ProjectionResult apply_projection(const ProjectionModel& model, const Mat& vectors);

void save_projection(const ProjectionModel& model, const std::string& path);
ProjectionModel load_projection(const std::string& path);

// Uniform random subsample of up to max_rows rows, seeded.
Mat sample_rows(const Mat& m, std::size_t max_rows, std::uint64_t seed);

}  // namespace mvrag
