#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "medvrag/types.hpp"

namespace mvrag {

// L2-normalized mean of a page's patch rows. Empty optional when the
// mean cancels to (near) zero.
std::optional<std::vector<float>> pooled_page_vector(const PatchMatrix& patches);

struct DropRecord {
    std::string dropped_id;
    std::string kept_id;
    double cosine = 0.0;
};

struct DedupResult {
    std::vector<PageRecord> kept;
    std::vector<DropRecord> dropped;
};

// Greedy scan in page_id order; a page is dropped iff its pooled vector
// has cosine strictly greater than threshold with an already-kept page.
DedupResult dedup_pages(std::vector<PageRecord> pages, double threshold);

struct SyntheticSpec {
    std::size_t num_pages = 1000;
    std::size_t patches_per_page_mean = 103;
    std::size_t patches_per_page_spread = 20;  // uniform in mean +/- spread
    std::size_t d = 128;
    std::size_t num_queries = 10;
    std::size_t query_tokens = 16;
    std::size_t planted_per_query = 1;
    double noise_level = 0.1;
};

struct GroundTruth {
    std::string question_id;
    std::vector<std::string> relevant_page_ids;
};

struct SyntheticCorpus {
    std::vector<PageRecord> pages;
    std::vector<QueryTokens> queries;
    std::vector<Question> questions;   // one per query; gold label "A"
    std::vector<GroundTruth> truth;
};

// Deterministic per seed. Planted pages carry noisy copies of their
// query's tokens; every summary embeds a machine-readable relevance key
// ("key=<float>") so scripted rankers can be given exact ground truth.
SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec, std::uint64_t seed);

}  // namespace mvrag
