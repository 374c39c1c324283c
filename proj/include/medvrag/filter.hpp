#pragma once

#include <optional>
#include <string>
#include <vector>

#include "medvrag/config.hpp"
#include "medvrag/gateway.hpp"
#include "medvrag/types.hpp"

namespace mvrag {

struct ShardMember {
    std::size_t candidate_rank = 0;  // 1-based Stage-1 rank
    std::string page_id;
    std::string summary;
};

struct Shard {
    std::size_t shard_index = 0;
    std::vector<ShardMember> members;
};

struct PageProvenance {
    std::string page_id;
    std::size_t shard_index = 0;
    std::size_t map_rank = 0;     // 1-based within the map selection
    std::size_t reduce_rank = 0;  // 1-based within the final selection
};

struct FilteredSet {
    std::vector<std::string> pages;  // ordered, length <= N2
    std::vector<PageProvenance> provenance;
    std::size_t map_calls = 0;
    std::size_t reduce_calls = 0;
    std::size_t parse_failures = 0;
};

// Strided assignment: candidate i (0-based) lands in shard i mod num_shards,
// so every shard sees the full spread of Stage-1 ranks. Contiguous blocks
// kept behind a flag for the comparison test.
std::vector<Shard> shard_candidates(const std::vector<RankedPage>& candidates,
                                    const std::vector<std::string>& summaries, int B,
                                    bool contiguous = false);

// The verbatim filter prompt; summaries numbered 1..pool in pool order,
// empty summaries rendered as "(no summary)".
std::string render_filter_prompt(const Question& question,
                                 const std::vector<ShardMember>& pool, int target_k,
                                 const std::string& template_override = "");

// 1-based pool indices from the first <selected_pages> span, order kept,
// duplicates and out-of-range dropped, truncated to target_k. Empty
// optional = ParseFailure.
std::optional<std::vector<std::size_t>> parse_selected_pages(const std::string& response,
                                                             std::size_t pool_size,
                                                             std::size_t target_k);

// Sharded MapReduce relevance filter. Map calls run concurrently up to
// cfg.map_in_flight; results pool in shard order regardless of completion
// order. ParseFailure falls back to Stage-1 rank order.
FilteredSet stage2_filter(const Question& question,
                          const std::vector<RankedPage>& stage1_results,
                          const std::vector<std::string>& summaries, ModelBackend& ranker,
                          const PipelineConfig& cfg, bool contiguous_shards = false,
                          const std::string& template_override = "");

}  // namespace mvrag
