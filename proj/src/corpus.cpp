#include "medvrag/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace mvrag {

std::optional<std::vector<float>> pooled_page_vector(const PatchMatrix& patches) {
    if (patches.rows == 0) throw std::invalid_argument("pooled_page_vector: empty page");
    std::vector<double> acc(patches.cols, 0.0);
    for (std::size_t i = 0; i < patches.rows; ++i) {
        const float* p = patches.row(i);
        for (std::size_t j = 0; j < patches.cols; ++j) acc[j] += p[j];
    }
    std::vector<float> pooled(patches.cols);
    for (std::size_t j = 0; j < patches.cols; ++j)
        pooled[j] = float(acc[j] / double(patches.rows));
    if (!normalize_row(pooled.data(), pooled.size(), 1e-8)) return std::nullopt;
    return pooled;
}

DedupResult dedup_pages(std::vector<PageRecord> pages, double threshold) {
    if (threshold < 0.0 || threshold > 1.0)
        throw std::invalid_argument("dedup_pages: threshold must be in [0,1]");
    std::sort(pages.begin(), pages.end(),
              [](const PageRecord& a, const PageRecord& b) { return a.page_id < b.page_id; });

    DedupResult result;
    std::vector<std::vector<float>> kept_pooled;
    for (auto& page : pages) {
        auto pooled = pooled_page_vector(page.patches);
        if (!pooled) {
            // Degenerate pooled vector: keep the page, it can never match.
            result.kept.push_back(std::move(page));
            kept_pooled.push_back({});
            continue;
        }
        bool drop = false;
        for (std::size_t k = 0; k < result.kept.size(); ++k) {
            if (kept_pooled[k].empty()) continue;
            double cos = dot(pooled->data(), kept_pooled[k].data(), pooled->size());
            if (cos > threshold) {
                result.dropped.push_back({page.page_id, result.kept[k].page_id, cos});
                drop = true;
                break;
            }
        }
        if (!drop) {
            result.kept.push_back(std::move(page));
            kept_pooled.push_back(std::move(*pooled));
        }
    }
    return result;
}

namespace {

Mat random_unit_rows(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Mat m(rows, cols);
    for (auto& v : m.data) v = float(gauss(rng));
    normalize_rows(m);
    return m;
}

std::string page_name(std::size_t i) {
    std::ostringstream os;
    os << "p";
    std::string n = std::to_string(i);
    os << std::string(7 - std::min<std::size_t>(7, n.size()), '0') << n;
    return os.str();
}

}  // namespace

SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec, std::uint64_t seed) {
    if (spec.num_pages == 0 || spec.d == 0 || spec.query_tokens == 0)
        throw std::invalid_argument("generate_synthetic_corpus: sizes must be positive");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    SyntheticCorpus corpus;
    corpus.queries.reserve(spec.num_queries);
    for (std::size_t q = 0; q < spec.num_queries; ++q)
        corpus.queries.push_back({random_unit_rows(spec.query_tokens, spec.d, rng)});

    // Planted page slots, spread across the corpus.
    std::vector<std::vector<std::size_t>> planted_queries(spec.num_pages);
    corpus.truth.resize(spec.num_queries);
    for (std::size_t q = 0; q < spec.num_queries; ++q) {
        corpus.truth[q].question_id = "q" + std::to_string(q);
        for (std::size_t r = 0; r < spec.planted_per_query; ++r) {
            std::size_t slot =
                (q * spec.planted_per_query + r) * spec.num_pages /
                std::max<std::size_t>(1, spec.num_queries * spec.planted_per_query);
            slot = std::min(slot, spec.num_pages - 1);
            planted_queries[slot].push_back(q);
            corpus.truth[q].relevant_page_ids.push_back(page_name(slot));
        }
    }

    std::uniform_real_distribution<double> ukey(0.0, 1.0);
    corpus.pages.reserve(spec.num_pages);
    for (std::size_t i = 0; i < spec.num_pages; ++i) {
        PageRecord page;
        page.page_id = page_name(i);
        page.article_id = "a" + std::to_string(i / 16);
        double key;
        if (!planted_queries[i].empty()) {
            // Planted page: noisy copies of the query tokens, nothing else,
            // so the noiseless case scores exactly 2.0.
            std::size_t q = planted_queries[i].front();
            const Mat& tokens = corpus.queries[q].tokens;
            page.patches = Mat(tokens.rows, tokens.cols);
            for (std::size_t r = 0; r < tokens.rows; ++r)
                for (std::size_t c = 0; c < tokens.cols; ++c)
                    page.patches.at(r, c) =
                        tokens.at(r, c) + float(spec.noise_level * gauss(rng));
            normalize_rows(page.patches);
            key = 1000.0 + double(q);
        } else {
            std::size_t spread = spec.patches_per_page_spread;
            std::size_t lo = spec.patches_per_page_mean > spread
                                 ? spec.patches_per_page_mean - spread
                                 : 1;
            std::size_t n = lo + (spread > 0 ? rng() % (2 * spread + 1) : 0);
            page.patches = random_unit_rows(std::max<std::size_t>(1, n), spec.d, rng);
            key = ukey(rng);
        }
        std::ostringstream sum;
        sum << "Synthetic summary for page " << page.page_id << " (article "
            << page.article_id << "). key=" << key;
        page.summary = sum.str();
        corpus.pages.push_back(std::move(page));
    }

    for (std::size_t q = 0; q < spec.num_queries; ++q) {
        Question question;
        question.question_id = "q" + std::to_string(q);
        question.stem = "Which page was planted for query " + std::to_string(q) + "?";
        question.options = {{"A", "page " + corpus.truth[q].relevant_page_ids.front()},
                            {"B", "a different page"},
                            {"C", "no page"},
                            {"D", "all pages"}};
        question.gold_label = "A";
        corpus.questions.push_back(std::move(question));
    }
    return corpus;
}

}  // namespace mvrag
