#include "medvrag/filter.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace mvrag {

namespace {

const char* kFilterTemplate =
    "You are a medical document retrieval expert. Given a medical question and "
    "candidate page summaries, select the {target_k} most relevant pages. "
    "Question: {question}. Candidate page summaries: {summaries}. Select the "
    "{target_k} most relevant pages by listing their numbers in order of relevance "
    "(most relevant first). Output ONLY the page numbers inside <selected_pages> tags.";

void replace_all(std::string& text, const std::string& key, const std::string& value) {
    std::size_t pos = 0;
    while ((pos = text.find(key, pos)) != std::string::npos) {
        text.replace(pos, key.size(), value);
        pos += value.size();
    }
}

// One ranker call with retries on transport failure.
std::string call_with_retries(ModelBackend& ranker, const PromptRequest& req, int max_retries,
                              std::uint64_t jitter_seed) {
    std::mt19937_64 rng(jitter_seed);
    for (int attempt = 0;; ++attempt) {
        try {
            return ranker.complete(req);
        } catch (const TransportFailure&) {
            if (attempt >= max_retries) throw;
            auto base = std::chrono::milliseconds(50 * (1 << attempt));
            auto jitter = std::chrono::milliseconds(rng() % 50);
            std::this_thread::sleep_for(base + jitter);
        }
    }
}

}  // namespace

std::vector<Shard> shard_candidates(const std::vector<RankedPage>& candidates,
                                    const std::vector<std::string>& summaries, int B,
                                    bool contiguous) {
    if (candidates.empty()) throw std::invalid_argument("shard_candidates: empty candidates");
    if (summaries.size() != candidates.size())
        throw std::invalid_argument("shard_candidates: summaries must parallel candidates");
    std::size_t num_shards = (candidates.size() + std::size_t(B) - 1) / std::size_t(B);
    std::vector<Shard> shards(num_shards);
    for (std::size_t s = 0; s < num_shards; ++s) shards[s].shard_index = s;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        std::size_t s = contiguous ? i / std::size_t(B) : i % num_shards;
        shards[s].members.push_back(
            {candidates[i].rank ? candidates[i].rank : i + 1, candidates[i].page_id,
             summaries[i]});
    }
    return shards;
}

std::string render_filter_prompt(const Question& question,
                                 const std::vector<ShardMember>& pool, int target_k,
                                 const std::string& template_override) {
    if (std::size_t(target_k) > pool.size())
        throw std::invalid_argument("render_filter_prompt: target_k exceeds pool size");
    std::ostringstream summaries;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (i) summaries << "\n";
        summaries << (i + 1) << ". "
                  << (pool[i].summary.empty() ? "(no summary)" : pool[i].summary);
    }
    std::string text = template_override.empty() ? kFilterTemplate : template_override;
    replace_all(text, "{target_k}", std::to_string(target_k));
    replace_all(text, "{question}", question.stem);
    replace_all(text, "{summaries}", summaries.str());
    return text;
}

std::optional<std::vector<std::size_t>> parse_selected_pages(const std::string& response,
                                                             std::size_t pool_size,
                                                             std::size_t target_k) {
    const std::string open = "<selected_pages>", close = "</selected_pages>";
    auto start = response.find(open);
    if (start == std::string::npos) return std::nullopt;
    start += open.size();
    auto end = response.find(close, start);
    std::string span =
        end == std::string::npos ? response.substr(start) : response.substr(start, end - start);

    std::vector<std::size_t> indices;
    std::vector<bool> seen(pool_size + 1, false);
    std::size_t i = 0;
    while (i < span.size() && indices.size() < target_k) {
        if (std::isdigit(static_cast<unsigned char>(span[i]))) {
            std::size_t j = i;
            while (j < span.size() && std::isdigit(static_cast<unsigned char>(span[j]))) ++j;
            unsigned long v = std::stoul(span.substr(i, j - i));
            if (v >= 1 && v <= pool_size && !seen[v]) {
                seen[v] = true;
                indices.push_back(v);
            }
            i = j;
        } else {
            ++i;
        }
    }
    if (indices.empty()) return std::nullopt;
    return indices;
}

FilteredSet stage2_filter(const Question& question,
                          const std::vector<RankedPage>& stage1_results,
                          const std::vector<std::string>& summaries, ModelBackend& ranker,
                          const PipelineConfig& cfg, bool contiguous_shards,
                          const std::string& template_override) {
    if (stage1_results.empty()) throw std::invalid_argument("stage2_filter: empty candidates");
    auto shards =
        shard_candidates(stage1_results, summaries, cfg.shard_size, contiguous_shards);

    struct MapResult {
        std::vector<std::size_t> member_indices;  // 0-based into shard members
        bool parse_failed = false;
    };
    std::vector<MapResult> map_results(shards.size());

    // Map phase: one call per shard, at most map_in_flight concurrent.
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    auto worker = [&]() {
        for (;;) {
            std::size_t s = next.fetch_add(1);
            if (s >= shards.size()) return;
            try {
                const auto& shard = shards[s];
                int target = int(std::min<std::size_t>(cfg.map_target_k, shard.members.size()));
                PromptRequest req;
                req.messages = {{"user",
                                 render_filter_prompt(question, shard.members, target,
                                                      template_override),
                                 {}}};
                req.temperature = 0.0;
                req.max_new_tokens = 1024;
                req.model_tag = "stage2-filter";
                std::string response =
                    call_with_retries(ranker, req, cfg.max_retries, cfg.seed + s);
                auto parsed =
                    parse_selected_pages(response, shard.members.size(), std::size_t(target));
                MapResult r;
                if (parsed) {
                    for (std::size_t idx : *parsed) r.member_indices.push_back(idx - 1);
                } else {
                    // Fallback: the shard's top-target by Stage-1 rank.
                    std::vector<std::size_t> order(shard.members.size());
                    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
                    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                        return shard.members[a].candidate_rank < shard.members[b].candidate_rank;
                    });
                    order.resize(std::size_t(target));
                    r.member_indices = std::move(order);
                    r.parse_failed = true;
                }
                map_results[s] = std::move(r);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    std::size_t num_workers = std::min<std::size_t>(std::size_t(cfg.map_in_flight), shards.size());
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < num_workers; ++w) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);

    FilteredSet out;
    out.map_calls = shards.size();

    // Survivors pooled in (shard_index, map_rank) order.
    struct Survivor {
        ShardMember member;
        std::size_t shard_index;
        std::size_t map_rank;
    };
    std::vector<Survivor> survivors;
    for (std::size_t s = 0; s < shards.size(); ++s) {
        if (map_results[s].parse_failed) ++out.parse_failures;
        for (std::size_t r = 0; r < map_results[s].member_indices.size(); ++r) {
            std::size_t idx = map_results[s].member_indices[r];
            survivors.push_back({shards[s].members[idx], s, r + 1});
        }
    }

    // Reduce phase: one call over the pooled survivors.
    std::vector<ShardMember> pool;
    pool.reserve(survivors.size());
    for (const auto& s : survivors) pool.push_back(s.member);
    int reduce_target = int(std::min<std::size_t>(std::size_t(cfg.stage2_cutoff), pool.size()));
    PromptRequest req;
    req.messages = {{"user",
                     render_filter_prompt(question, pool, reduce_target, template_override),
                     {}}};
    req.temperature = 0.0;
    req.max_new_tokens = 1024;
    req.model_tag = "stage2-filter";
    std::string response = call_with_retries(ranker, req, cfg.max_retries, cfg.seed + 7919);
    out.reduce_calls = 1;

    std::vector<std::size_t> selection;  // 0-based into survivors
    auto parsed = parse_selected_pages(response, pool.size(), std::size_t(reduce_target));
    if (parsed) {
        for (std::size_t idx : *parsed) selection.push_back(idx - 1);
    } else {
        // Fallback: survivors in Stage-1 order, truncated.
        ++out.parse_failures;
        std::vector<std::size_t> order(survivors.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return survivors[a].member.candidate_rank < survivors[b].member.candidate_rank;
        });
        order.resize(std::size_t(reduce_target));
        selection = std::move(order);
    }

    for (std::size_t r = 0; r < selection.size(); ++r) {
        const Survivor& s = survivors[selection[r]];
        out.pages.push_back(s.member.page_id);
        out.provenance.push_back({s.member.page_id, s.shard_index, s.map_rank, r + 1});
    }
    return out;
}

}  // namespace mvrag
