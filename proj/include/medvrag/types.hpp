#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mvrag {

// Row-major float32 matrix. Patch matrices, query tokens, centroid sets
// and projection bases all use this layout; it is also the on-disk layout
// of the .bin blobs (f32 little-endian, row-major).
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

    float* row(std::size_t i) { return data.data() + i * cols; }
    const float* row(std::size_t i) const { return data.data() + i * cols; }
    float& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    float at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
    bool empty() const { return rows == 0 || cols == 0; }
};

// A page's n patch vectors (unit-norm rows).
using PatchMatrix = Mat;

// A query's m token vectors (unit-norm rows).
struct QueryTokens {
    Mat tokens;
    std::size_t m() const { return tokens.rows; }
    std::size_t d() const { return tokens.cols; }
};

struct PageRecord {
    std::string page_id;
    std::string article_id;
    PatchMatrix patches;
    std::string summary;
    std::size_t n_patches() const { return patches.rows; }
};

struct RankedPage {
    std::string page_id;
    double score = 0.0;
    std::size_t rank = 0;  // 1-based
};

struct Question {
    std::string question_id;
    std::string stem;
    std::vector<std::pair<std::string, std::string>> options;  // label -> text
    std::optional<std::string> gold_label;
};

// Dot product of two unit-norm float rows, accumulated in double.
inline double dot(const float* a, const float* b, std::size_t d) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += double(a[i]) * double(b[i]);
    return s;
}

inline double l2_norm(const float* a, std::size_t d) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += double(a[i]) * double(a[i]);
    return std::sqrt(s);
}

// In-place L2 normalization; returns false for a (near-)zero row.
inline bool normalize_row(float* a, std::size_t d, double eps = 1e-12) {
    double n = l2_norm(a, d);
    if (n < eps) {
        for (std::size_t i = 0; i < d; ++i) a[i] = 0.0f;
        return false;
    }
    for (std::size_t i = 0; i < d; ++i) a[i] = float(a[i] / n);
    return true;
}

// Normalizes every row of m; returns indices of degenerate (zero) rows.
inline std::vector<std::size_t> normalize_rows(Mat& m) {
    std::vector<std::size_t> degenerate;
    for (std::size_t i = 0; i < m.rows; ++i)
        if (!normalize_row(m.row(i), m.cols)) degenerate.push_back(i);
    return degenerate;
}

}  // namespace mvrag
