#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "medvrag/coarse_index.hpp"
#include "medvrag/config.hpp"
#include "medvrag/filter.hpp"
#include "medvrag/reasoner.hpp"

namespace mvrag {

// Stage-1 + Stage-2 retrieval over an in-memory index, exposed to the
// reasoner loop. Image refs are opaque page references resolved at the
// gateway; the pipeline never touches pixels.
class IndexRetrieval : public RetrievalHandle {
public:
    IndexRetrieval(const CorpusIndex& index, ModelBackend& ranker, PipelineConfig cfg);

    RetrievedContext retrieve(const QueryTokens& query, const Question& question) override;

    std::size_t stage1_calls() const { return stage1_calls_; }
    const Stage1Timing& last_stage1_timing() const { return last_timing_; }

private:
    const CorpusIndex& index_;
    ModelBackend& ranker_;
    PipelineConfig cfg_;
    std::unordered_map<std::string, std::string> summary_by_page_;
    std::size_t stage1_calls_ = 0;
    Stage1Timing last_timing_;
};

struct EvalReport {
    std::size_t total = 0;
    std::size_t correct = 0;
    std::size_t backend_failures = 0;
    std::vector<std::size_t> answered_in_round;  // index 0 = round 1; last = unanswered
    std::vector<std::size_t> correct_in_round;
    double accuracy() const { return total ? double(correct) / double(total) : 0.0; }
};

struct EvalResult {
    EvalReport report;
    std::vector<AnswerTrace> traces;  // sorted by question_id
};

EvalResult evaluate(const std::vector<Question>& questions, RetrievalHandle& retrieval,
                    QueryEncoder& encoder, ModelBackend& backend,
                    const PipelineConfig& cfg);

// JSON-lines trace log. Wall-clock timings are excluded unless asked
// for, so logs from seeded runs compare byte-identical.
void save_traces(const std::string& path, const std::vector<AnswerTrace>& traces,
                 bool include_timings = false);

std::string trace_to_json(const AnswerTrace& trace, bool include_timings = false);

std::string report_to_json(const EvalReport& report);

struct BenchRow {
    std::size_t num_pages = 0;
    double coarse_ms = 0.0;      // mean per-query coarse-to-fine Stage-1
    double exact_ms = 0.0;       // mean per-query exhaustive scan
    double ann_ms = 0.0;
    double coarse_rank_ms = 0.0;
    double fine_ms = 0.0;
    std::uint64_t fine_dots = 0;  // mean fine-scoring dot products
    double speedup() const { return coarse_ms > 0 ? exact_ms / coarse_ms : 0.0; }
};

BenchRow bench_corpus(std::size_t num_pages, std::size_t patches_mean, std::size_t d,
                      std::size_t num_queries, const PipelineConfig& cfg,
                      std::uint64_t seed);

}  // namespace mvrag
