#include "medvrag/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

#include "medvrag/corpus.hpp"
#include "medvrag/scoring.hpp"

namespace mvrag {

IndexRetrieval::IndexRetrieval(const CorpusIndex& index, ModelBackend& ranker,
                               PipelineConfig cfg)
    : index_(index), ranker_(ranker), cfg_(validate_config(cfg)) {
    for (const auto& page : index.pages) summary_by_page_[page.page_id] = page.summary;
}

RetrievedContext IndexRetrieval::retrieve(const QueryTokens& query, const Question& question) {
    auto stage1 = stage1_search(query, index_, cfg_, &last_timing_);
    ++stage1_calls_;
    if (stage1.empty()) return {};

    std::vector<std::string> summaries;
    summaries.reserve(stage1.size());
    for (const auto& r : stage1) summaries.push_back(summary_by_page_.at(r.page_id));

    FilteredSet filtered = stage2_filter(question, stage1, summaries, ranker_, cfg_);

    RetrievedContext ctx;
    for (const auto& page_id : filtered.pages) {
        ctx.page_ids.push_back(page_id);
        ctx.summaries.push_back(summary_by_page_.at(page_id));
        ctx.image_refs.push_back("page://" + page_id);
    }
    return ctx;
}

EvalResult evaluate(const std::vector<Question>& questions, RetrievalHandle& retrieval,
                    QueryEncoder& encoder, ModelBackend& backend,
                    const PipelineConfig& cfg) {
    EvalResult result;
    result.report.answered_in_round.assign(std::size_t(cfg.max_iterations) + 1, 0);
    result.report.correct_in_round.assign(std::size_t(cfg.max_iterations) + 1, 0);

    for (const auto& question : questions) {
        AnswerTrace trace;
        try {
            trace = answer_loop(question, retrieval, encoder, backend, cfg);
        } catch (const TransportFailure&) {
            ++result.report.backend_failures;
            ++result.report.total;
            continue;
        }
        ++result.report.total;
        bool correct = trace.final_label && question.gold_label &&
                       *trace.final_label == *question.gold_label;
        if (correct) ++result.report.correct;
        std::size_t bucket = trace.final_label ? std::size_t(trace.rounds_used) - 1
                                               : std::size_t(cfg.max_iterations);
        ++result.report.answered_in_round[bucket];
        if (correct) ++result.report.correct_in_round[bucket];
        result.traces.push_back(std::move(trace));
    }
    std::sort(result.traces.begin(), result.traces.end(),
              [](const AnswerTrace& a, const AnswerTrace& b) {
                  return a.question_id < b.question_id;
              });
    return result;
}

std::string trace_to_json(const AnswerTrace& trace, bool include_timings) {
    nlohmann::ordered_json j;
    j["question_id"] = trace.question_id;
    if (trace.final_label)
        j["final_label"] = *trace.final_label;
    else
        j["final_label"] = nullptr;
    j["rounds_used"] = trace.rounds_used;
    j["retrieval_calls"] = trace.retrieval_calls;
    auto rounds = nlohmann::ordered_json::array();
    for (const auto& r : trace.rounds) {
        nlohmann::ordered_json rj;
        rj["iteration"] = r.iteration;
        rj["image_page_ids"] = r.image_page_ids;
        rj["summary_page_ids"] = r.summary_page_ids;
        rj["outcome"] = r.outcome_kind;
        if (!r.refined_query.empty()) rj["refined_query"] = r.refined_query;
        if (include_timings) rj["elapsed_ms"] = r.elapsed_ms;
        rounds.push_back(rj);
    }
    j["rounds"] = rounds;
    j["memory"] = nlohmann::ordered_json::parse(memory_to_json(trace.memory));
    return j.dump();
}

void save_traces(const std::string& path, const std::vector<AnswerTrace>& traces,
                 bool include_timings) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    for (const auto& t : traces) f << trace_to_json(t, include_timings) << "\n";
}

std::string report_to_json(const EvalReport& report) {
    nlohmann::ordered_json j;
    j["total"] = report.total;
    j["correct"] = report.correct;
    j["accuracy"] = report.accuracy();
    j["backend_failures"] = report.backend_failures;
    auto rounds = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i + 1 < report.answered_in_round.size(); ++i)
        rounds.push_back({{"round", i + 1},
                          {"answered", report.answered_in_round[i]},
                          {"correct", report.correct_in_round[i]}});
    j["per_round"] = rounds;
    j["unanswered"] = report.answered_in_round.empty() ? 0 : report.answered_in_round.back();
    return j.dump(2);
}

BenchRow bench_corpus(std::size_t num_pages, std::size_t patches_mean, std::size_t d,
                      std::size_t num_queries, const PipelineConfig& cfg,
                      std::uint64_t seed) {
    SyntheticSpec spec;
    spec.num_pages = num_pages;
    spec.patches_per_page_mean = patches_mean;
    spec.patches_per_page_spread = patches_mean / 4;
    spec.d = d;
    spec.num_queries = num_queries;
    spec.query_tokens = 8;
    SyntheticCorpus corpus = generate_synthetic_corpus(spec, seed);

    PipelineConfig bench_cfg = cfg;
    bench_cfg.embed_dim = int(d);
    CorpusIndex index = build_corpus_index(corpus.pages, bench_cfg);

    using clock = std::chrono::steady_clock;
    BenchRow row;
    row.num_pages = num_pages;
    std::uint64_t total_dots = 0;
    double ann = 0, coarse_rank = 0, fine = 0, coarse_total = 0, exact_total = 0;
    for (const auto& q : corpus.queries) {
        Stage1Timing timing;
        auto coarse = stage1_search(q, index, bench_cfg, &timing);
        (void)coarse;
        ann += timing.ann_ms;
        coarse_rank += timing.coarse_rank_ms;
        fine += timing.fine_score_ms;
        coarse_total += timing.total_ms();
        total_dots += timing.fine_dot_products;

        auto t0 = clock::now();
        auto exact = exact_top_k(q, index.pages, std::size_t(bench_cfg.stage1_cutoff));
        (void)exact;
        auto t1 = clock::now();
        exact_total += std::chrono::duration<double, std::milli>(t1 - t0).count();
    }
    double n = double(corpus.queries.size());
    row.coarse_ms = coarse_total / n;
    row.exact_ms = exact_total / n;
    row.ann_ms = ann / n;
    row.coarse_rank_ms = coarse_rank / n;
    row.fine_ms = fine / n;
    row.fine_dots = std::uint64_t(double(total_dots) / n);
    return row;
}

}  // namespace mvrag
