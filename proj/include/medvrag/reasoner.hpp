#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "medvrag/config.hpp"
#include "medvrag/gateway.hpp"
#include "medvrag/types.hpp"

namespace mvrag {

// Appendix-schema memory carried across reasoning rounds. Serialized
// with exact field names: iteration, key_findings, reasoning_history.
struct MemoryBank {
    int iteration = 1;
    std::vector<std::string> key_findings;  // each prefixed "[Round k] "
    std::vector<std::pair<int, std::string>> reasoning_history;  // (iteration, notes)
};

std::string memory_to_json(const MemoryBank& bank);
MemoryBank memory_from_json(const std::string& text);

// notes split on newlines into non-empty findings, each "[Round k] "
// prefixed; history gains one (round, notes) entry; iteration advances.
MemoryBank update_memory(MemoryBank bank, int round, const std::string& notes);

struct AnswerOutcome {
    std::string label;  // A-D uppercase, or yes/no/maybe
    std::string justification;
};
struct RefineOutcome {
    std::string query;
    std::string notes;
};
struct UnparseableOutcome {
    std::string raw;
};
using IterationOutcome = std::variant<AnswerOutcome, RefineOutcome, UnparseableOutcome>;

// First match of <answer>\s*([A-Da-d]|yes|no|maybe)\b; letters uppercased.
std::optional<std::string> extract_answer(const std::string& text);

IterationOutcome parse_outcome(const std::string& response);

// Per-round evidence handed to the prompt.
struct RetrievedContext {
    std::vector<std::string> page_ids;      // filtered rank order
    std::vector<std::string> summaries;     // parallel to page_ids
    std::vector<std::string> image_refs;    // parallel to page_ids
};

PromptRequest render_reasoner_prompt(const Question& question, const MemoryBank& memory,
                                     const RetrievedContext& ctx, int iteration,
                                     const PipelineConfig& cfg, bool backend_accepts_images);

// Maps refined query text to token vectors; the artifact ships no
// neural encoder, so implementations are a lookup table (replayed real
// traces) or a deterministic synthetic encoder (property tests).
class QueryEncoder {
public:
    virtual ~QueryEncoder() = default;
    virtual QueryTokens encode(const std::string& text) = 0;
};

class LookupEncoder : public QueryEncoder {
public:
    void add(const std::string& text, QueryTokens tokens);
    QueryTokens encode(const std::string& text) override;

private:
    std::vector<std::pair<std::string, QueryTokens>> table_;
};

// Deterministic hash-to-vectors encoder.
class HashEncoder : public QueryEncoder {
public:
    HashEncoder(std::size_t d, std::size_t m, std::uint64_t seed)
        : d_(d), m_(m), seed_(seed) {}
    QueryTokens encode(const std::string& text) override;

private:
    std::size_t d_, m_;
    std::uint64_t seed_;
};

// Retrieval pipeline handle: Stage-1 + Stage-2 for a query embedding.
class RetrievalHandle {
public:
    virtual ~RetrievalHandle() = default;
    virtual RetrievedContext retrieve(const QueryTokens& query, const Question& question) = 0;
};

struct RoundRecord {
    int iteration = 0;
    std::vector<std::string> image_page_ids;
    std::vector<std::string> summary_page_ids;
    std::string outcome_kind;  // "answer" | "refine" | "unparseable"
    std::string refined_query;
    double elapsed_ms = 0.0;
};

struct AnswerTrace {
    std::string question_id;
    std::optional<std::string> final_label;
    int rounds_used = 0;
    std::size_t retrieval_calls = 0;
    std::vector<RoundRecord> rounds;
    MemoryBank memory;
};

// The iterative loop: retrieve, prompt, parse, update memory; exits on
// an answer or at the hard cap.
AnswerTrace answer_loop(const Question& question, RetrievalHandle& retrieval,
                        QueryEncoder& encoder, ModelBackend& backend,
                        const PipelineConfig& cfg);

}  // namespace mvrag
