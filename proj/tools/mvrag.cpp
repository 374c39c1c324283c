#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "medvrag/io.hpp"
#include "medvrag/pipeline.hpp"
#include "medvrag/projection.hpp"
#include "medvrag/scoring.hpp"

namespace fs = std::filesystem;
using namespace mvrag;

namespace {

// Lookup table with deterministic synthetic fallback, so refined queries
// emitted by a backend always encode to something.
class CliEncoder : public QueryEncoder {
public:
    CliEncoder(std::size_t d, std::size_t m, std::uint64_t seed) : hash_(d, m, seed) {}
    void add(const std::string& text, QueryTokens tokens) {
        lookup_.add(text, std::move(tokens));
        known_.push_back(text);
    }
    QueryTokens encode(const std::string& text) override {
        for (const auto& k : known_)
            if (k == text) return lookup_.encode(text);
        return hash_.encode(text);
    }

private:
    LookupEncoder lookup_;
    HashEncoder hash_;
    std::vector<std::string> known_;
};

// Shrink the paper-scale cutoffs so they stay consistent on small corpora.
void clamp_to_corpus(PipelineConfig& cfg, std::size_t num_pages) {
    cfg.stage1_cutoff = std::min<int>(cfg.stage1_cutoff, int(num_pages));
    cfg.shortlist_r = std::max(cfg.shortlist_r, cfg.stage1_cutoff);
    int shards = (cfg.stage1_cutoff + cfg.shard_size - 1) / cfg.shard_size;
    cfg.stage2_cutoff = std::min(
        {cfg.stage2_cutoff, shards * cfg.map_target_k, cfg.stage1_cutoff});
}

std::unique_ptr<ModelBackend> make_backend(const std::string& spec) {
    if (spec.rfind("mock:", 0) == 0) {
        std::ifstream f(spec.substr(5));
        if (!f) throw std::runtime_error("cannot read mock script " + spec.substr(5));
        auto j = nlohmann::json::parse(f);
        std::vector<MockBackend::Rule> rules;
        for (const auto& r : j.value("rules", nlohmann::json::array()))
            rules.push_back({r.at("match").get<std::string>(),
                            r.at("response").get<std::string>()});
        return std::make_unique<MockBackend>(
            std::move(rules), j.value("default_response", std::string{}),
            j.value("accepts_images", false));
    }
    if (spec.rfind("http", 0) == 0) {
        const char* token = std::getenv("MVRAG_AUTH_TOKEN");
        const char* tag = std::getenv("MVRAG_MODEL_TAG");
        return std::make_unique<HttpBackend>(spec, token ? token : "", tag ? tag : "");
    }
    throw std::runtime_error("backend must be mock:<script.json> or an http(s) URL");
}

PipelineConfig load_config(const std::string& path) {
    if (path.empty()) return PipelineConfig{};
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read config " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return config_from_json(ss.str());
}

void print_stage1_timing(const Stage1Timing& t) {
    std::cout << "stage              time_ms\n"
              << "ANN search         " << t.ann_ms << "\n"
              << "Coarse ranking     " << t.coarse_rank_ms << "\n"
              << "Fine-grained score " << t.fine_score_ms << "\n"
              << "total              " << t.total_ms() << "\n"
              << "fine dot products  " << t.fine_dot_products << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-stage page-level multi-vector retrieval with iterative reasoning"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed = 42;
    app.add_option("--config", config_path, "pipeline config JSON")->envname("MVRAG_CONFIG");
    app.add_option("--seed", seed, "global random seed");

    // gen-corpus
    auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic corpus");
    std::string gen_out;
    SyntheticSpec spec;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--pages", spec.num_pages, "number of pages");
    gen->add_option("--patches-mean", spec.patches_per_page_mean, "mean patches per page");
    gen->add_option("--patches-spread", spec.patches_per_page_spread, "patch count spread");
    gen->add_option("--dim", spec.d, "embedding dimension");
    gen->add_option("--queries", spec.num_queries, "number of queries");
    gen->add_option("--query-tokens", spec.query_tokens, "tokens per query");
    gen->add_option("--planted", spec.planted_per_query, "planted pages per query");
    gen->add_option("--noise", spec.noise_level, "plant noise level");

    // build-index
    auto* build = app.add_subcommand("build-index", "build the retrieval index");
    std::string build_corpus_dir, build_out;
    bool build_dedup = false;
    build->add_option("--corpus", build_corpus_dir, "corpus directory")->required();
    build->add_option("--out", build_out, "index directory")->required();
    build->add_flag("--dedup", build_dedup, "drop near-duplicate pages");

    // search
    auto* search = app.add_subcommand("search", "run Stage-1 retrieval");
    std::string search_index, search_queries, search_query_id, search_out;
    bool search_exact = false, search_exact_flat = false;
    int search_n1 = 0, search_r = 0;
    search->add_option("--index", search_index)->required();
    search->add_option("--queries", search_queries, "query directory")->required();
    search->add_option("--query-id", search_query_id, "run only this query");
    search->add_flag("--exact", search_exact, "exhaustive brute-force scoring");
    search->add_flag("--exact-flat", search_exact_flat, "exhaustive centroid search");
    search->add_option("--n1", search_n1, "stage-1 cutoff override");
    search->add_option("--r", search_r, "shortlist override");
    search->add_option("--out", search_out, "write results JSONL here");

    // filter
    auto* filter_cmd = app.add_subcommand("filter", "Stage-1 + Stage-2 for one question");
    std::string f_index, f_questions, f_qid, f_backend;
    filter_cmd->add_option("--index", f_index)->required();
    filter_cmd->add_option("--questions", f_questions)->required();
    filter_cmd->add_option("--question-id", f_qid)->required();
    filter_cmd->add_option("--backend", f_backend, "mock:<file> or http(s) URL")->required();

    // answer
    auto* answer = app.add_subcommand("answer", "full iterative loop for one question");
    std::string a_index, a_questions, a_qid, a_ranker, a_reasoner, a_queries;
    answer->add_option("--index", a_index)->required();
    answer->add_option("--questions", a_questions)->required();
    answer->add_option("--question-id", a_qid)->required();
    answer->add_option("--filter-backend", a_ranker)->required();
    answer->add_option("--reasoner-backend", a_reasoner)->required();
    answer->add_option("--queries", a_queries, "precomputed query embeddings");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a question set");
    std::string e_index, e_questions, e_ranker, e_reasoner, e_queries, e_traces, e_report;
    bool e_timings = false;
    eval_cmd->add_option("--index", e_index)->required();
    eval_cmd->add_option("--questions", e_questions)->required();
    eval_cmd->add_option("--filter-backend", e_ranker)->required();
    eval_cmd->add_option("--reasoner-backend", e_reasoner)->required();
    eval_cmd->add_option("--queries", e_queries, "precomputed query embeddings");
    eval_cmd->add_option("--traces", e_traces, "write AnswerTraces JSONL here");
    eval_cmd->add_option("--report", e_report, "write metrics JSON here");
    eval_cmd->add_flag("--timings", e_timings, "include wall-clock timings in traces");

    // bench
    auto* bench = app.add_subcommand("bench", "latency scaling: coarse-to-fine vs exact");
    std::vector<std::size_t> bench_sizes{1000, 10000};
    std::size_t bench_patches = 64, bench_dim = 64, bench_queries = 20;
    std::string bench_out;
    bench->add_option("--sizes", bench_sizes, "corpus sizes");
    bench->add_option("--patches-mean", bench_patches);
    bench->add_option("--dim", bench_dim);
    bench->add_option("--queries-per-size", bench_queries);
    bench->add_option("--out", bench_out, "write table JSON here");

    CLI11_PARSE(app, argc, argv);

    try {
        PipelineConfig cfg = load_config(config_path);
        cfg.seed = seed;

        if (gen->parsed()) {
            SyntheticCorpus corpus = generate_synthetic_corpus(spec, seed);
            PipelineConfig corpus_cfg = cfg;
            corpus_cfg.embed_dim = int(spec.d);
            save_corpus(gen_out, corpus.pages, corpus_cfg);
            std::vector<std::string> ids;
            for (const auto& t : corpus.truth) ids.push_back(t.question_id);
            save_queries(gen_out, corpus.queries, ids);
            save_questions((fs::path(gen_out) / "questions.jsonl").string(), corpus.questions);
            save_ground_truth((fs::path(gen_out) / "ground_truth.jsonl").string(),
                              corpus.truth);
            std::cout << "wrote " << corpus.pages.size() << " pages to " << gen_out << "\n";
        } else if (build->parsed()) {
            auto pages = load_corpus(build_corpus_dir);
            std::unique_ptr<ProjectionModel> projection;
            if (!pages.empty() && pages.front().patches.cols > std::size_t(cfg.embed_dim)) {
                // Fit PCA on a capped patch sample, then project every page.
                std::size_t src = pages.front().patches.cols;
                std::size_t total = 0;
                for (const auto& p : pages) total += p.patches.rows;
                Mat all(total, src);
                std::size_t at = 0;
                for (const auto& p : pages)
                    for (std::size_t r = 0; r < p.patches.rows; ++r, ++at)
                        std::copy(p.patches.row(r), p.patches.row(r) + src, all.row(at));
                Mat sample = sample_rows(all, 100000, seed);
                projection = std::make_unique<ProjectionModel>(
                    fit_projection(sample, std::size_t(cfg.embed_dim), seed));
                for (auto& p : pages)
                    p.patches = apply_projection(*projection, p.patches).projected;
            }
            // The index dimension is whatever the (possibly projected)
            // patches actually carry, not the config default.
            if (!pages.empty()) cfg.embed_dim = int(pages.front().patches.cols);
            std::vector<DropRecord> drops;
            if (build_dedup) {
                auto result = dedup_pages(std::move(pages), cfg.dedup_threshold);
                pages = std::move(result.kept);
                drops = std::move(result.dropped);
            }
            CorpusIndex index = build_corpus_index(std::move(pages), cfg);
            save_index(build_out, index, cfg, projection.get(),
                       build_dedup ? &drops : nullptr);
            std::cout << "indexed " << index.pages.size() << " pages ("
                      << index.ann.num_entries() << " centroids) into " << build_out << "\n";
        } else if (search->parsed()) {
            CorpusIndex index = load_index(search_index);
            cfg.embed_dim = int(index.ann.dim());
            if (search_n1 > 0) cfg.stage1_cutoff = search_n1;
            if (search_r > 0) cfg.shortlist_r = std::max(search_r, cfg.stage1_cutoff);
            cfg.exact_flat = search_exact_flat;
            cfg.stage1_cutoff = std::min<int>(cfg.stage1_cutoff, int(index.pages.size()));
            cfg.shortlist_r = std::max(cfg.shortlist_r, cfg.stage1_cutoff);
            auto [queries, ids] = load_queries(search_queries);
            // Raw-dimension queries go through the index's stored projection.
            fs::path proj_path = fs::path(search_index) / "projection.bin";
            if (fs::exists(proj_path)) {
                ProjectionModel proj = load_projection(proj_path.string());
                for (auto& q : queries)
                    if (q.tokens.cols != index.ann.dim())
                        q.tokens = apply_projection(proj, q.tokens).projected;
            }
            std::ofstream out;
            if (!search_out.empty()) out.open(search_out);
            for (std::size_t i = 0; i < queries.size(); ++i) {
                if (!search_query_id.empty() && ids[i] != search_query_id) continue;
                std::vector<RankedPage> results;
                Stage1Timing timing;
                if (search_exact) {
                    using clock = std::chrono::steady_clock;
                    DotCounter counter;
                    auto t0 = clock::now();
                    results = exact_top_k(queries[i], index.pages,
                                          std::size_t(cfg.stage1_cutoff), &counter);
                    auto t1 = clock::now();
                    timing.fine_score_ms =
                        std::chrono::duration<double, std::milli>(t1 - t0).count();
                    timing.fine_dot_products = counter.dots;
                } else {
                    results = stage1_search(queries[i], index, cfg, &timing);
                }
                std::cout << "query " << ids[i] << ": " << results.size() << " results\n";
                print_stage1_timing(timing);
                for (std::size_t r = 0; r < std::min<std::size_t>(results.size(), 10); ++r)
                    std::cout << "  " << results[r].rank << ". " << results[r].page_id
                              << "  " << results[r].score << "\n";
                if (out.is_open()) {
                    for (const auto& r : results) {
                        nlohmann::ordered_json j;
                        j["query_id"] = ids[i];
                        j["rank"] = r.rank;
                        j["page_id"] = r.page_id;
                        j["score"] = r.score;
                        out << j.dump() << "\n";
                    }
                }
            }
        } else if (filter_cmd->parsed()) {
            CorpusIndex index = load_index(f_index);
            cfg.embed_dim = int(index.ann.dim());
            clamp_to_corpus(cfg, index.pages.size());
            auto questions = load_questions(f_questions);
            auto backend = make_backend(f_backend);
            auto it = std::find_if(questions.begin(), questions.end(),
                                   [&](const Question& q) { return q.question_id == f_qid; });
            if (it == questions.end()) throw std::runtime_error("question not found: " + f_qid);
            CliEncoder encoder(std::size_t(cfg.embed_dim), 8, cfg.seed);
            IndexRetrieval retrieval(index, *backend, cfg);
            RetrievedContext ctx = retrieval.retrieve(encoder.encode(it->stem), *it);
            for (std::size_t i = 0; i < ctx.page_ids.size(); ++i)
                std::cout << (i + 1) << ". " << ctx.page_ids[i] << "\n";
        } else if (answer->parsed() || eval_cmd->parsed()) {
            bool is_eval = eval_cmd->parsed();
            CorpusIndex index = load_index(is_eval ? e_index : a_index);
            cfg.embed_dim = int(index.ann.dim());
            clamp_to_corpus(cfg, index.pages.size());
            auto questions = load_questions(is_eval ? e_questions : a_questions);
            auto ranker = make_backend(is_eval ? e_ranker : a_ranker);
            auto reasoner = make_backend(is_eval ? e_reasoner : a_reasoner);
            CliEncoder encoder(std::size_t(cfg.embed_dim), 8, cfg.seed);
            std::string queries_dir = is_eval ? e_queries : a_queries;
            if (!queries_dir.empty()) {
                auto [queries, ids] = load_queries(queries_dir);
                for (std::size_t i = 0; i < queries.size(); ++i)
                    for (const auto& q : questions)
                        if (q.question_id == ids[i]) encoder.add(q.stem, queries[i]);
            }
            IndexRetrieval retrieval(index, *ranker, cfg);
            if (is_eval) {
                EvalResult result = evaluate(questions, retrieval, encoder, *reasoner, cfg);
                std::cout << report_to_json(result.report) << "\n";
                if (!e_traces.empty()) save_traces(e_traces, result.traces, e_timings);
                if (!e_report.empty()) {
                    std::ofstream rf(e_report);
                    rf << report_to_json(result.report) << "\n";
                }
            } else {
                auto it = std::find_if(questions.begin(), questions.end(),
                                       [&](const Question& q) { return q.question_id == a_qid; });
                if (it == questions.end())
                    throw std::runtime_error("question not found: " + a_qid);
                AnswerTrace trace = answer_loop(*it, retrieval, encoder, *reasoner, cfg);
                std::cout << trace_to_json(trace, true) << "\n";
            }
        } else if (bench->parsed()) {
            nlohmann::ordered_json table = nlohmann::ordered_json::array();
            std::cout << "pages  coarse_ms  exact_ms  speedup  ann_ms  rank_ms  fine_ms  "
                         "fine_dots\n";
            for (std::size_t n : bench_sizes) {
                PipelineConfig bcfg = cfg;
                bcfg.stage1_cutoff = std::min<int>(bcfg.stage1_cutoff, int(n));
                bcfg.shortlist_r = std::max(bcfg.shortlist_r, bcfg.stage1_cutoff);
                BenchRow row = bench_corpus(n, bench_patches, bench_dim, bench_queries,
                                            bcfg, seed);
                std::cout << row.num_pages << "  " << row.coarse_ms << "  " << row.exact_ms
                          << "  " << row.speedup() << "  " << row.ann_ms << "  "
                          << row.coarse_rank_ms << "  " << row.fine_ms << "  "
                          << row.fine_dots << "\n";
                table.push_back({{"pages", row.num_pages},
                                 {"coarse_ms", row.coarse_ms},
                                 {"exact_ms", row.exact_ms},
                                 {"speedup", row.speedup()},
                                 {"ann_ms", row.ann_ms},
                                 {"coarse_rank_ms", row.coarse_rank_ms},
                                 {"fine_ms", row.fine_ms},
                                 {"fine_dots", row.fine_dots}});
            }
            if (!bench_out.empty()) {
                std::ofstream f(bench_out);
                f << table.dump(2) << "\n";
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
