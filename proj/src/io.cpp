#include "medvrag/io.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace mvrag {

namespace {

void write_blob(std::ofstream& f, const void* data, std::size_t bytes) {
    f.write(reinterpret_cast<const char*>(data), std::streamsize(bytes));
}

std::ofstream open_out(const fs::path& p, bool binary = false) {
    std::ofstream f(p, binary ? std::ios::binary : std::ios::out);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    return f;
}

std::ifstream open_in(const fs::path& p, bool binary = false) {
    std::ifstream f(p, binary ? std::ios::binary : std::ios::in);
    if (!f) throw std::runtime_error("cannot read " + p.string());
    return f;
}

void write_pages(const fs::path& dir, const std::vector<PageRecord>& pages) {
    auto patches = open_out(dir / "patches.bin", true);
    auto jsonl = open_out(dir / "pages.jsonl");
    std::uint64_t offset = 0;
    for (const auto& page : pages) {
        std::uint64_t bytes = page.patches.data.size() * sizeof(float);
        write_blob(patches, page.patches.data.data(), bytes);
        ordered_json j;
        j["page_id"] = page.page_id;
        j["article_id"] = page.article_id;
        j["n_patches"] = page.patches.rows;
        j["summary"] = page.summary;
        j["patch_offset"] = offset;
        j["patch_length"] = bytes;
        jsonl << j.dump() << "\n";
        offset += bytes;
    }
}

std::vector<PageRecord> read_pages(const fs::path& dir, std::size_t d) {
    auto patches = open_in(dir / "patches.bin", true);
    auto jsonl = open_in(dir / "pages.jsonl");
    std::vector<PageRecord> pages;
    std::string line;
    while (std::getline(jsonl, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        PageRecord page;
        page.page_id = j.at("page_id").get<std::string>();
        page.article_id = j.at("article_id").get<std::string>();
        page.summary = j.at("summary").get<std::string>();
        std::size_t n = j.at("n_patches").get<std::size_t>();
        std::uint64_t offset = j.at("patch_offset").get<std::uint64_t>();
        page.patches = Mat(n, d);
        patches.seekg(std::streamoff(offset));
        patches.read(reinterpret_cast<char*>(page.patches.data.data()),
                     std::streamsize(page.patches.data.size() * sizeof(float)));
        if (!patches) throw std::runtime_error("truncated patches.bin");
        pages.push_back(std::move(page));
    }
    return pages;
}

ordered_json base_manifest(const std::vector<PageRecord>& pages, const PipelineConfig& cfg) {
    std::uint64_t num_patches = 0;
    for (const auto& p : pages) num_patches += p.patches.rows;
    ordered_json m;
    m["format_version"] = 1;
    m["num_pages"] = pages.size();
    m["num_patches"] = num_patches;
    m["embed_dim"] = cfg.embed_dim;
    m["config"] = nlohmann::json::parse(config_to_json(cfg));
    m["files"] = {{"patches", "patches.bin"}, {"pages", "pages.jsonl"}};
    return m;
}

}  // namespace

void save_corpus(const std::string& dir, const std::vector<PageRecord>& pages,
                 const PipelineConfig& cfg) {
    fs::create_directories(dir);
    write_pages(dir, pages);
    auto manifest = open_out(fs::path(dir) / "manifest.json");
    manifest << base_manifest(pages, cfg).dump(2) << "\n";
}

std::vector<PageRecord> load_corpus(const std::string& dir) {
    auto mf = open_in(fs::path(dir) / "manifest.json");
    auto m = nlohmann::json::parse(mf);
    std::size_t d = m.at("embed_dim").get<std::size_t>();
    return read_pages(dir, d);
}

void save_index(const std::string& dir, const CorpusIndex& index, const PipelineConfig& cfg,
                const ProjectionModel* projection,
                const std::vector<DropRecord>* dedup_report) {
    fs::create_directories(dir);
    write_pages(dir, index.pages);

    // centroids.bin mirrors the flat entry matrix (page order, c rows per
    // page with c = min(C, n_patches)); weights ride in a u32 sidecar.
    {
        auto cf = open_out(fs::path(dir) / "centroids.bin", true);
        write_blob(cf, index.ann.entries().data.data(),
                   index.ann.entries().data.size() * sizeof(float));
        auto wf = open_out(fs::path(dir) / "centroid_weights.bin", true);
        write_blob(wf, index.centroid_weights.data(),
                   index.centroid_weights.size() * sizeof(std::uint32_t));
    }
    index.ann.save((fs::path(dir) / "ann.bin").string());

    auto m = base_manifest(index.pages, cfg);
    std::uint64_t num_centroids = index.ann.num_entries();
    m["num_centroids"] = num_centroids;
    m["files"]["centroids"] = "centroids.bin";
    m["files"]["centroid_weights"] = "centroid_weights.bin";
    m["files"]["ann"] = "ann.bin";
    if (projection) {
        save_projection(*projection, (fs::path(dir) / "projection.bin").string());
        m["files"]["projection"] = "projection.bin";
    }
    if (dedup_report) {
        ordered_json drops = ordered_json::array();
        for (const auto& d : *dedup_report)
            drops.push_back({{"dropped_id", d.dropped_id},
                             {"kept_id", d.kept_id},
                             {"cosine", d.cosine}});
        m["dedup_report"] = drops;
    }
    auto manifest = open_out(fs::path(dir) / "manifest.json");
    manifest << m.dump(2) << "\n";
}

CorpusIndex load_index(const std::string& dir) {
    auto mf = open_in(fs::path(dir) / "manifest.json");
    auto m = nlohmann::json::parse(mf);
    std::size_t d = m.at("embed_dim").get<std::size_t>();
    CorpusIndex index;
    index.pages = read_pages(dir, d);
    index.ann = CentroidAnnIndex::load((fs::path(dir) / "ann.bin").string());
    index.centroid_weights.resize(index.ann.num_entries());
    auto wf = open_in(fs::path(dir) / "centroid_weights.bin", true);
    wf.read(reinterpret_cast<char*>(index.centroid_weights.data()),
            std::streamsize(index.centroid_weights.size() * sizeof(std::uint32_t)));
    if (!wf) throw std::runtime_error("truncated centroid_weights.bin");
    return index;
}

void save_queries(const std::string& dir, const std::vector<QueryTokens>& queries,
                  const std::vector<std::string>& ids) {
    fs::create_directories(dir);
    auto bin = open_out(fs::path(dir) / "queries.bin", true);
    auto jsonl = open_out(fs::path(dir) / "queries.jsonl");
    std::uint64_t offset = 0;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        const Mat& t = queries[i].tokens;
        std::uint64_t bytes = t.data.size() * sizeof(float);
        write_blob(bin, t.data.data(), bytes);
        ordered_json j;
        j["query_id"] = i < ids.size() ? ids[i] : std::to_string(i);
        j["m"] = t.rows;
        j["d"] = t.cols;
        j["offset"] = offset;
        jsonl << j.dump() << "\n";
        offset += bytes;
    }
}

std::pair<std::vector<QueryTokens>, std::vector<std::string>> load_queries(
    const std::string& dir) {
    auto bin = open_in(fs::path(dir) / "queries.bin", true);
    auto jsonl = open_in(fs::path(dir) / "queries.jsonl");
    std::vector<QueryTokens> queries;
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(jsonl, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        QueryTokens q;
        q.tokens = Mat(j.at("m").get<std::size_t>(), j.at("d").get<std::size_t>());
        bin.seekg(std::streamoff(j.at("offset").get<std::uint64_t>()));
        bin.read(reinterpret_cast<char*>(q.tokens.data.data()),
                 std::streamsize(q.tokens.data.size() * sizeof(float)));
        if (!bin) throw std::runtime_error("truncated queries.bin");
        queries.push_back(std::move(q));
        ids.push_back(j.at("query_id").get<std::string>());
    }
    return {std::move(queries), std::move(ids)};
}

std::string question_to_json(const Question& q) {
    ordered_json j;
    j["question_id"] = q.question_id;
    j["stem"] = q.stem;
    ordered_json opts = ordered_json::object();
    for (const auto& [label, text] : q.options) opts[label] = text;
    j["options"] = opts;
    if (q.gold_label) j["gold_label"] = *q.gold_label;
    return j.dump();
}

Question question_from_json(const std::string& line) {
    auto j = nlohmann::json::parse(line);
    Question q;
    q.question_id = j.at("question_id").get<std::string>();
    q.stem = j.at("stem").get<std::string>();
    for (auto it = j.at("options").begin(); it != j.at("options").end(); ++it)
        q.options.emplace_back(it.key(), it.value().get<std::string>());
    // JSON objects iterate in key order, which matches label order for
    // A/B/C/D and for the yes/no/maybe sets used here.
    std::sort(q.options.begin(), q.options.end());
    if (j.contains("gold_label")) q.gold_label = j.at("gold_label").get<std::string>();
    return q;
}

void save_questions(const std::string& path, const std::vector<Question>& questions) {
    auto f = open_out(path);
    for (const auto& q : questions) f << question_to_json(q) << "\n";
}

std::vector<Question> load_questions(const std::string& path) {
    auto f = open_in(path);
    std::vector<Question> questions;
    std::string line;
    while (std::getline(f, line))
        if (!line.empty()) questions.push_back(question_from_json(line));
    return questions;
}

void save_ground_truth(const std::string& path, const std::vector<GroundTruth>& truth) {
    auto f = open_out(path);
    for (const auto& t : truth) {
        ordered_json j;
        j["question_id"] = t.question_id;
        j["relevant_page_ids"] = t.relevant_page_ids;
        f << j.dump() << "\n";
    }
}

std::vector<GroundTruth> load_ground_truth(const std::string& path) {
    auto f = open_in(path);
    std::vector<GroundTruth> truth;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        GroundTruth t;
        t.question_id = j.at("question_id").get<std::string>();
        t.relevant_page_ids = j.at("relevant_page_ids").get<std::vector<std::string>>();
        truth.push_back(std::move(t));
    }
    return truth;
}

}  // namespace mvrag
