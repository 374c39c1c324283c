#include "medvrag/reasoner.hpp"

#include <algorithm>
#include <chrono>
#include <random>
#include <regex>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace mvrag {

std::string memory_to_json(const MemoryBank& bank) {
    nlohmann::ordered_json j;
    j["iteration"] = bank.iteration;
    j["key_findings"] = bank.key_findings;
    auto history = nlohmann::ordered_json::array();
    for (const auto& [iter, notes] : bank.reasoning_history)
        history.push_back({{"iteration", iter}, {"notes", notes}});
    j["reasoning_history"] = history;
    return j.dump();
}

MemoryBank memory_from_json(const std::string& text) {
    auto j = nlohmann::json::parse(text);
    MemoryBank bank;
    bank.iteration = j.at("iteration").get<int>();
    bank.key_findings = j.at("key_findings").get<std::vector<std::string>>();
    for (const auto& h : j.at("reasoning_history"))
        bank.reasoning_history.emplace_back(h.at("iteration").get<int>(),
                                            h.at("notes").get<std::string>());
    return bank;
}

MemoryBank update_memory(MemoryBank bank, int round, const std::string& notes) {
    if (round != bank.iteration)
        throw std::invalid_argument("update_memory: round does not match bank iteration");
    std::istringstream lines(notes);
    std::string line;
    while (std::getline(lines, line))
        if (!line.empty())
            bank.key_findings.push_back("[Round " + std::to_string(round) + "] " + line);
    bank.reasoning_history.emplace_back(round, notes);
    bank.iteration = round + 1;
    return bank;
}

std::optional<std::string> extract_answer(const std::string& text) {
    static const std::regex pattern(R"(<answer>\s*([A-Da-d]|yes|no|maybe)\b)");
    std::smatch m;
    if (!std::regex_search(text, m, pattern)) return std::nullopt;
    std::string label = m[1].str();
    if (label.size() == 1) label[0] = char(std::toupper(static_cast<unsigned char>(label[0])));
    return label;
}

namespace {

std::string tag_span(const std::string& text, const std::string& tag) {
    const std::string open = "<" + tag + ">", close = "</" + tag + ">";
    auto start = text.find(open);
    if (start == std::string::npos) return "";
    start += open.size();
    auto end = text.find(close, start);
    return end == std::string::npos ? text.substr(start) : text.substr(start, end - start);
}

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

const char* kReasonerTemplate =
    "You are a medical QA expert. Answer the multiple-choice question based on the "
    "provided document pages. Question: {question}. Options: {options}. "
    "{memory_section}. Retrieved page summaries: {summaries}. (The actual page images "
    "are also provided for your reference.) Instructions: If you have enough "
    "information to answer, output your answer inside <answer> tags with a brief "
    "justification. If you need more information, output a refined search query "
    "inside <query_update> tags and summarize your current findings inside <notes> "
    "tags. This is iteration {iteration}/{max_iterations}. {force_msg}";

const char* kForceMsg =
    "This is the final iteration: you MUST output an answer inside <answer> tags now.";

void replace_all(std::string& text, const std::string& key, const std::string& value) {
    std::size_t pos = 0;
    while ((pos = text.find(key, pos)) != std::string::npos) {
        text.replace(pos, key.size(), value);
        pos += value.size();
    }
}

}  // namespace

IterationOutcome parse_outcome(const std::string& response) {
    if (auto label = extract_answer(response))
        return AnswerOutcome{*label, trim(tag_span(response, "answer"))};
    std::string query = trim(tag_span(response, "query_update"));
    if (!query.empty()) return RefineOutcome{query, trim(tag_span(response, "notes"))};
    return UnparseableOutcome{response};
}

PromptRequest render_reasoner_prompt(const Question& question, const MemoryBank& memory,
                                     const RetrievedContext& ctx, int iteration,
                                     const PipelineConfig& cfg, bool backend_accepts_images) {
    if (iteration < 1 || iteration > cfg.max_iterations)
        throw std::invalid_argument("render_reasoner_prompt: iteration out of range");

    std::ostringstream options;
    for (std::size_t i = 0; i < question.options.size(); ++i) {
        if (i) options << " ";
        options << question.options[i].first << ") " << question.options[i].second;
    }

    std::string memory_section;
    if (memory.key_findings.empty() && memory.reasoning_history.empty()) {
        memory_section = "Memory bank: (no prior findings)";
    } else {
        memory_section = "Memory bank: " + memory_to_json(memory);
    }

    std::size_t n_sum = std::min<std::size_t>(ctx.summaries.size(),
                                              std::size_t(cfg.summaries_per_round));
    std::ostringstream summaries;
    for (std::size_t i = 0; i < n_sum; ++i) {
        if (i) summaries << "\n";
        summaries << (i + 1) << ". [" << ctx.page_ids[i] << "] "
                  << (ctx.summaries[i].empty() ? "(no summary)" : ctx.summaries[i]);
    }

    std::string text = kReasonerTemplate;
    replace_all(text, "{question}", question.stem);
    replace_all(text, "{options}", options.str());
    replace_all(text, "{memory_section}", memory_section);
    replace_all(text, "{summaries}", summaries.str());
    replace_all(text, "{iteration}", std::to_string(iteration));
    replace_all(text, "{max_iterations}", std::to_string(cfg.max_iterations));
    replace_all(text, "{force_msg}", iteration == cfg.max_iterations ? kForceMsg : "");

    Message msg{"user", text, {}};
    if (backend_accepts_images) {
        std::size_t n_img = std::min<std::size_t>(ctx.image_refs.size(),
                                                  std::size_t(cfg.images_per_round));
        msg.image_refs.assign(ctx.image_refs.begin(), ctx.image_refs.begin() + n_img);
    }

    PromptRequest req;
    req.messages = {std::move(msg)};
    req.temperature = 0.1;
    req.max_new_tokens = 2048;
    req.model_tag = "vlm-reasoner";
    return req;
}

void LookupEncoder::add(const std::string& text, QueryTokens tokens) {
    table_.emplace_back(text, std::move(tokens));
}

QueryTokens LookupEncoder::encode(const std::string& text) {
    for (const auto& [key, tokens] : table_)
        if (key == text) return tokens;
    throw std::runtime_error("LookupEncoder: no embedding for query text: " + text);
}

QueryTokens HashEncoder::encode(const std::string& text) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    std::mt19937_64 rng(seed_ ^ h);
    std::normal_distribution<double> gauss(0.0, 1.0);
    QueryTokens q;
    q.tokens = Mat(m_, d_);
    for (auto& v : q.tokens.data) v = float(gauss(rng));
    normalize_rows(q.tokens);
    return q;
}

AnswerTrace answer_loop(const Question& question, RetrievalHandle& retrieval,
                        QueryEncoder& encoder, ModelBackend& backend,
                        const PipelineConfig& cfg) {
    using clock = std::chrono::steady_clock;
    AnswerTrace trace;
    trace.question_id = question.question_id;

    RetrievedContext ctx = retrieval.retrieve(encoder.encode(question.stem), question);
    trace.retrieval_calls = 1;

    MemoryBank bank;
    for (int round = 1; round <= cfg.max_iterations; ++round) {
        auto t0 = clock::now();
        PromptRequest req = render_reasoner_prompt(question, bank, ctx, round, cfg,
                                                   backend.accepts_images());
        std::string response = backend.complete(req);
        IterationOutcome outcome = parse_outcome(response);
        auto t1 = clock::now();

        RoundRecord record;
        record.iteration = round;
        std::size_t n_img = std::min<std::size_t>(ctx.page_ids.size(),
                                                  std::size_t(cfg.images_per_round));
        std::size_t n_sum = std::min<std::size_t>(ctx.page_ids.size(),
                                                  std::size_t(cfg.summaries_per_round));
        record.image_page_ids.assign(ctx.page_ids.begin(), ctx.page_ids.begin() + n_img);
        record.summary_page_ids.assign(ctx.page_ids.begin(), ctx.page_ids.begin() + n_sum);
        record.elapsed_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        trace.rounds_used = round;

        if (auto* answer = std::get_if<AnswerOutcome>(&outcome)) {
            record.outcome_kind = "answer";
            trace.rounds.push_back(std::move(record));
            trace.final_label = answer->label;
            break;
        }
        if (round == cfg.max_iterations) {
            record.outcome_kind =
                std::holds_alternative<RefineOutcome>(outcome) ? "refine" : "unparseable";
            trace.rounds.push_back(std::move(record));
            break;  // hard cap: no answer emitted, scored incorrect
        }
        if (auto* refine = std::get_if<RefineOutcome>(&outcome)) {
            record.outcome_kind = "refine";
            record.refined_query = refine->query;
            trace.rounds.push_back(std::move(record));
            bank = update_memory(std::move(bank), round, refine->notes);
            ctx = retrieval.retrieve(encoder.encode(refine->query), question);
            ++trace.retrieval_calls;
        } else {
            // Unparseable before the cap: keep the current evidence and
            // advance the round without a fresh retrieval.
            record.outcome_kind = "unparseable";
            trace.rounds.push_back(std::move(record));
            bank = update_memory(std::move(bank), round, "");
        }
    }
    trace.memory = bank;
    return trace;
}

}  // namespace mvrag
