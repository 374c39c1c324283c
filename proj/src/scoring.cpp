#include "medvrag/scoring.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mvrag {

ScoreBreakdown two_way_score(const QueryTokens& q, const PatchMatrix& p,
                             DotCounter* counter) {
    if (q.tokens.empty() || p.empty()) throw std::invalid_argument("two_way_score: empty matrix");
    if (q.d() != p.cols) throw std::invalid_argument("two_way_score: dimension mismatch");

    const std::size_t m = q.m(), n = p.rows, d = p.cols;
    // One m x n pass; row maxima feed the q->p term, column maxima the p->q term.
    std::vector<double> col_max(n, -std::numeric_limits<double>::infinity());
    double q2p = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const float* qi = q.tokens.row(i);
        double row_max = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            double s = dot(qi, p.row(j), d);
            if (s > row_max) row_max = s;
            if (s > col_max[j]) col_max[j] = s;
        }
        q2p += row_max;
    }
    double p2q = 0.0;
    for (std::size_t j = 0; j < n; ++j) p2q += col_max[j];

    if (counter) counter->add(std::uint64_t(m) * n);

    ScoreBreakdown b;
    b.query_to_page = q2p / double(m);
    b.page_to_query = p2q / double(n);
    b.total = b.query_to_page + b.page_to_query;
    return b;
}

std::vector<RankedPage> rank_pages(std::vector<RankedPage> scored, std::size_t k) {
    std::sort(scored.begin(), scored.end(), [](const RankedPage& a, const RankedPage& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.page_id < b.page_id;
    });
    if (scored.size() > k) scored.resize(k);
    for (std::size_t i = 0; i < scored.size(); ++i) scored[i].rank = i + 1;
    return scored;
}

std::vector<RankedPage> exact_top_k(const QueryTokens& q,
                                    const std::vector<PageRecord>& corpus,
                                    std::size_t k, DotCounter* counter) {
    if (corpus.empty()) throw std::invalid_argument("exact_top_k: empty corpus");
    if (k < 1) throw std::invalid_argument("exact_top_k: k must be >= 1");

    std::vector<RankedPage> scored(corpus.size());
    std::uint64_t dots = 0;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) reduction(+ : dots)
#endif
    for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(corpus.size()); ++i) {
        DotCounter local;
        ScoreBreakdown b = two_way_score(q, corpus[i].patches, &local);
        scored[i] = RankedPage{corpus[i].page_id, b.total, 0};
        dots += local.dots;
    }
    if (counter) counter->add(dots);
    return rank_pages(std::move(scored), k);
}

std::vector<RankedPage> exact_top_k_serial(const QueryTokens& q,
                                           const std::vector<PageRecord>& corpus,
                                           std::size_t k) {
    if (corpus.empty()) throw std::invalid_argument("exact_top_k: empty corpus");
    std::vector<RankedPage> scored;
    scored.reserve(corpus.size());
    for (const auto& page : corpus) {
        ScoreBreakdown b = two_way_score(q, page.patches);
        scored.push_back(RankedPage{page.page_id, b.total, 0});
    }
    return rank_pages(std::move(scored), k);
}

}  // namespace mvrag
