#pragma once

#include <atomic>
#include <cstdint>
#include <vector>

#include "medvrag/types.hpp"

namespace mvrag {

// S(q,p) = (1/m) sum_i max_j q_i.v_j + (1/n) sum_j max_i q_i.v_j
struct ScoreBreakdown {
    double query_to_page = 0.0;
    double page_to_query = 0.0;
    double total = 0.0;
};

// Counts the vector dot products spent in exact scoring. Used by the
// complexity-conformance checks; zero-cost when nobody reads it.
struct DotCounter {
    std::uint64_t dots = 0;
    void add(std::uint64_t n) { dots += n; }
};

ScoreBreakdown two_way_score(const QueryTokens& q, const PatchMatrix& p,
                             DotCounter* counter = nullptr);

// Exhaustive top-k over the whole corpus, ordered by (total desc,
// page_id asc). OpenMP-parallel over pages.
std::vector<RankedPage> exact_top_k(const QueryTokens& q,
                                    const std::vector<PageRecord>& corpus,
                                    std::size_t k, DotCounter* counter = nullptr);

// Serial reference kept for testing and for the kernel benchmark.
std::vector<RankedPage> exact_top_k_serial(const QueryTokens& q,
                                           const std::vector<PageRecord>& corpus,
                                           std::size_t k);

// Sorts (score, page_id) pairs by (score desc, id asc) and assigns ranks.
std::vector<RankedPage> rank_pages(std::vector<RankedPage> scored, std::size_t k);

}  // namespace mvrag
