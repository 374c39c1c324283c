// Kernel microbenchmark: OpenMP-parallel corpus scoring vs the serial
// reference, and the coarse-to-fine path vs both.
#include <chrono>
#include <cstdlib>
#include <iostream>

#include "medvrag/coarse_index.hpp"
#include "medvrag/corpus.hpp"
#include "medvrag/scoring.hpp"

using namespace mvrag;
using clock_type = std::chrono::steady_clock;

static double ms_since(clock_type::time_point t0) {
    return std::chrono::duration<double, std::milli>(clock_type::now() - t0).count();
}

int main(int argc, char** argv) {
    std::size_t num_pages = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 5000;
    std::size_t d = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 64;

    SyntheticSpec spec;
    spec.num_pages = num_pages;
    spec.patches_per_page_mean = 64;
    spec.patches_per_page_spread = 16;
    spec.d = d;
    spec.num_queries = 5;
    spec.query_tokens = 8;
    SyntheticCorpus corpus = generate_synthetic_corpus(spec, 42);

    PipelineConfig cfg;
    cfg.embed_dim = int(d);
    cfg.stage1_cutoff = std::min<int>(cfg.stage1_cutoff, int(num_pages));
    cfg.shortlist_r = std::max(cfg.shortlist_r, cfg.stage1_cutoff);

    std::cout << "pages=" << num_pages << " d=" << d << " queries="
              << corpus.queries.size() << "\n";

    auto t0 = clock_type::now();
    CorpusIndex index = build_corpus_index(corpus.pages, cfg);
    std::cout << "index build: " << ms_since(t0) << " ms ("
              << index.ann.num_entries() << " centroids)\n";

    double serial_ms = 0, parallel_ms = 0, coarse_ms = 0;
    for (const auto& q : corpus.queries) {
        t0 = clock_type::now();
        auto a = exact_top_k_serial(q, index.pages, 100);
        serial_ms += ms_since(t0);

        t0 = clock_type::now();
        auto b = exact_top_k(q, index.pages, 100);
        parallel_ms += ms_since(t0);

        if (a.size() != b.size()) {
            std::cerr << "MISMATCH: result sizes differ\n";
            return 1;
        }
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a[i].page_id != b[i].page_id) {
                std::cerr << "MISMATCH at rank " << i + 1 << "\n";
                return 1;
            }
        }

        Stage1Timing timing;
        t0 = clock_type::now();
        auto c = stage1_search(q, index, cfg, &timing);
        (void)c;
        coarse_ms += ms_since(t0);
    }
    double n = double(corpus.queries.size());
    std::cout << "exact serial   : " << serial_ms / n << " ms/query\n"
              << "exact parallel : " << parallel_ms / n << " ms/query (speedup "
              << serial_ms / parallel_ms << "x)\n"
              << "coarse-to-fine : " << coarse_ms / n << " ms/query (speedup vs serial "
              << serial_ms / coarse_ms << "x)\n";
    return 0;
}
