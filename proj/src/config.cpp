#include "medvrag/config.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace mvrag {

std::string config_violation(const PipelineConfig& c) {
    auto fail = [](const std::string& msg) { return msg; };
    if (c.embed_dim <= 0) return fail("embed_dim must be positive");
    if (c.centroids_per_page <= 0) return fail("centroids_per_page must be positive");
    if (c.shortlist_r <= 0) return fail("shortlist_r must be positive");
    if (c.stage1_cutoff <= 0) return fail("stage1_cutoff must be positive");
    if (c.stage2_cutoff <= 0) return fail("stage2_cutoff must be positive");
    if (c.shard_size <= 0) return fail("shard_size must be positive");
    if (c.map_target_k <= 0) return fail("map_target_k must be positive");
    if (c.max_iterations <= 0) return fail("max_iterations must be positive");
    if (c.images_per_round <= 0) return fail("images_per_round must be positive");
    if (c.summaries_per_round <= 0) return fail("summaries_per_round must be positive");
    if (c.dedup_threshold < 0.0 || c.dedup_threshold > 1.0)
        return fail("dedup_threshold must be in [0,1]");
    if (c.stage2_cutoff > c.stage1_cutoff) {
        std::ostringstream os;
        os << "N2 <= N1 violated (N2=" << c.stage2_cutoff << ", N1=" << c.stage1_cutoff << ")";
        return os.str();
    }
    if (c.map_target_k > c.shard_size) {
        std::ostringstream os;
        os << "map_target_k <= B violated (map_target_k=" << c.map_target_k
           << ", B=" << c.shard_size << ")";
        return os.str();
    }
    if (c.shortlist_r < c.stage1_cutoff) {
        std::ostringstream os;
        os << "shortlist_R >= N1 violated (R=" << c.shortlist_r
           << ", N1=" << c.stage1_cutoff << ")";
        return os.str();
    }
    long shards = (c.stage1_cutoff + c.shard_size - 1) / c.shard_size;
    if (shards * c.map_target_k < c.stage2_cutoff) {
        std::ostringstream os;
        os << "ceil(N1/B)*map_target_k >= N2 violated (" << shards << "*" << c.map_target_k
           << " < " << c.stage2_cutoff << ")";
        return os.str();
    }
    if (c.probe_k <= 0) return fail("probe_k must be positive");
    if (c.map_in_flight <= 0) return fail("map_in_flight must be positive");
    if (c.max_retries < 0) return fail("max_retries must be non-negative");
    return "";
}

PipelineConfig validate_config(const PipelineConfig& cfg) {
    std::string v = config_violation(cfg);
    if (!v.empty()) throw std::invalid_argument("invalid config: " + v);
    return cfg;
}

std::string config_to_json(const PipelineConfig& c) {
    nlohmann::ordered_json j;
    j["embed_dim"] = c.embed_dim;
    j["centroids_per_page"] = c.centroids_per_page;
    j["shortlist_r"] = c.shortlist_r;
    j["stage1_cutoff"] = c.stage1_cutoff;
    j["stage2_cutoff"] = c.stage2_cutoff;
    j["shard_size"] = c.shard_size;
    j["map_target_k"] = c.map_target_k;
    j["max_iterations"] = c.max_iterations;
    j["dedup_threshold"] = c.dedup_threshold;
    j["images_per_round"] = c.images_per_round;
    j["summaries_per_round"] = c.summaries_per_round;
    j["probe_k"] = c.probe_k;
    j["ann_nprobe"] = c.ann_nprobe;
    j["exact_flat"] = c.exact_flat;
    j["map_in_flight"] = c.map_in_flight;
    j["max_retries"] = c.max_retries;
    j["seed"] = c.seed;
    return j.dump(2);
}

PipelineConfig config_from_json(const std::string& text) {
    auto j = nlohmann::json::parse(text);
    PipelineConfig c;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("embed_dim", c.embed_dim);
    get("centroids_per_page", c.centroids_per_page);
    get("shortlist_r", c.shortlist_r);
    get("stage1_cutoff", c.stage1_cutoff);
    get("stage2_cutoff", c.stage2_cutoff);
    get("shard_size", c.shard_size);
    get("map_target_k", c.map_target_k);
    get("max_iterations", c.max_iterations);
    get("dedup_threshold", c.dedup_threshold);
    get("images_per_round", c.images_per_round);
    get("summaries_per_round", c.summaries_per_round);
    get("probe_k", c.probe_k);
    get("ann_nprobe", c.ann_nprobe);
    get("exact_flat", c.exact_flat);
    get("map_in_flight", c.map_in_flight);
    get("max_retries", c.max_retries);
    get("seed", c.seed);
    return c;
}

}  // namespace mvrag
