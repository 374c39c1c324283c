#pragma once

#include <cstdint>
#include <string>

namespace mvrag {

// All pipeline constants in one validated record. Defaults are the
// production values; see validate_config for the cross-field constraints.
struct PipelineConfig {
    int embed_dim = 128;          // d
    int centroids_per_page = 8;   // C
    int shortlist_r = 8000;       // R, coarse shortlist handed to exact scoring
    int stage1_cutoff = 2000;     // N1
    int stage2_cutoff = 100;      // N2
    int shard_size = 256;         // B, summaries per map shard
    int map_target_k = 25;        // pages each map call keeps
    int max_iterations = 3;       // hard cap on reasoning rounds
    double dedup_threshold = 0.97;
    int images_per_round = 10;
    int summaries_per_round = 20;

    // Search tuning (not part of the published constants).
    int probe_k = 32;             // centroid neighbors retrieved per query token
    int ann_nprobe = 0;           // IVF cells probed; 0 = auto (ncells/4)
    bool exact_flat = false;      // exhaustive centroid search (oracle mode)

    // Filter fan-out and retry policy.
    int map_in_flight = 8;
    int max_retries = 2;

    std::uint64_t seed = 42;
};

// Returns cfg unchanged iff every invariant holds; otherwise throws
// std::invalid_argument naming the first failing invariant.
PipelineConfig validate_config(const PipelineConfig& cfg);

// Empty string when valid, otherwise the first violation.
std::string config_violation(const PipelineConfig& cfg);

std::string config_to_json(const PipelineConfig& cfg);
PipelineConfig config_from_json(const std::string& text);

}  // namespace mvrag
