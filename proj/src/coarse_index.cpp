#include "medvrag/coarse_index.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <queue>
#include <random>
#include <stdexcept>
#include <unordered_map>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mvrag {

namespace {

double u01(std::mt19937_64& rng) { return double(rng() >> 11) * 0x1.0p-53; }

double sq_dist(const float* a, const float* b, std::size_t d) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        double t = double(a[i]) - double(b[i]);
        s += t * t;
    }
    return s;
}

struct KmeansResult {
    Mat centers;                       // k x d
    std::vector<std::uint32_t> assign; // per point
    std::vector<std::uint32_t> counts; // per center
};

// Lloyd's with k-means++ seeding. Fixed iteration cap, stops early when
// assignments stabilize; empty clusters are reseeded from the farthest
// point. Deterministic per seed.
KmeansResult lloyd_kmeans(const Mat& points, std::size_t k, std::uint64_t seed,
                          int max_iter = 25) {
    const std::size_t n = points.rows, d = points.cols;
    std::mt19937_64 rng(seed);

    KmeansResult r;
    r.centers = Mat(k, d);
    r.assign.assign(n, 0);
    r.counts.assign(k, 0);

    // k-means++ seeding.
    std::size_t first = std::size_t(rng() % n);
    std::copy(points.row(first), points.row(first) + d, r.centers.row(0));
    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i) d2[i] = sq_dist(points.row(i), r.centers.row(0), d);
    for (std::size_t c = 1; c < k; ++c) {
        double total = std::accumulate(d2.begin(), d2.end(), 0.0);
        std::size_t pick = 0;
        if (total <= 0.0) {
            pick = std::size_t(rng() % n);
        } else {
            double u = u01(rng) * total, acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc >= u) { pick = i; break; }
            }
        }
        std::copy(points.row(pick), points.row(pick) + d, r.centers.row(c));
        for (std::size_t i = 0; i < n; ++i)
            d2[i] = std::min(d2[i], sq_dist(points.row(i), r.centers.row(c), d));
    }

    std::vector<double> point_d2(n, 0.0);
    for (int iter = 0; iter < max_iter; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            std::uint32_t best_c = 0;
            for (std::size_t c = 0; c < k; ++c) {
                double s = sq_dist(points.row(i), r.centers.row(c), d);
                if (s < best) { best = s; best_c = std::uint32_t(c); }
            }
            point_d2[i] = best;
            if (r.assign[i] != best_c) { r.assign[i] = best_c; changed = true; }
        }
        if (!changed && iter > 0) break;

        std::fill(r.counts.begin(), r.counts.end(), 0);
        std::vector<double> sums(k * d, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            std::uint32_t c = r.assign[i];
            ++r.counts[c];
            const float* p = points.row(i);
            double* s = &sums[c * d];
            for (std::size_t j = 0; j < d; ++j) s[j] += p[j];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (r.counts[c] == 0) {
                // Reseed from the point farthest from its center.
                std::size_t far_i = std::size_t(
                    std::max_element(point_d2.begin(), point_d2.end()) - point_d2.begin());
                std::copy(points.row(far_i), points.row(far_i) + d, r.centers.row(c));
                point_d2[far_i] = 0.0;
            } else {
                const double* s = &sums[c * d];
                for (std::size_t j = 0; j < d; ++j)
                    r.centers.at(c, j) = float(s[j] / double(r.counts[c]));
            }
        }
    }

    // Final assignment + counts for the returned centers.
    std::fill(r.counts.begin(), r.counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::uint32_t best_c = 0;
        for (std::size_t c = 0; c < k; ++c) {
            double s = sq_dist(points.row(i), r.centers.row(c), d);
            if (s < best) { best = s; best_c = std::uint32_t(c); }
        }
        r.assign[i] = best_c;
        ++r.counts[best_c];
    }
    return r;
}

}  // namespace

CentroidSet build_page_centroids(const std::string& page_id, const PatchMatrix& patches,
                                 int C, std::uint64_t seed) {
    if (patches.rows == 0) throw std::invalid_argument("build_page_centroids: empty page");
    CentroidSet set;
    set.page_id = page_id;
    const std::size_t n = patches.rows;
    if (n <= std::size_t(C)) {
        set.centroids = patches;
        set.weights.assign(n, 1);
        return set;
    }
    KmeansResult km = lloyd_kmeans(patches, std::size_t(C), seed);
    set.centroids = std::move(km.centers);
    set.weights = std::move(km.counts);
    normalize_rows(set.centroids);
    return set;
}

void CentroidAnnIndex::build_ivf(std::uint64_t seed, int nprobe) {
    const std::size_t total = entries_.rows;
    std::size_t ncells = std::max<std::size_t>(1, std::size_t(std::sqrt(double(total))));
    if (ncells > total) ncells = total;

    // Train cell centers on a capped sample, then assign every entry.
    Mat train = entries_;
    const std::size_t cap = 50000;
    if (train.rows > cap) {
        Mat sampled(cap, train.cols);
        std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
        std::size_t stride = train.rows / cap;
        for (std::size_t i = 0; i < cap; ++i)
            std::copy(train.row(i * stride), train.row(i * stride) + train.cols,
                      sampled.row(i));
        train = std::move(sampled);
    }
    KmeansResult km = lloyd_kmeans(train, ncells, seed, 10);
    cell_centers_ = std::move(km.centers);
    cell_lists_.assign(ncells, {});
    const std::size_t d = entries_.cols;
    std::vector<std::uint32_t> cell_of(total);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(total); ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::uint32_t best_c = 0;
        for (std::size_t c = 0; c < ncells; ++c) {
            double s = sq_dist(entries_.row(i), cell_centers_.row(c), d);
            if (s < best) { best = s; best_c = std::uint32_t(c); }
        }
        cell_of[i] = best_c;
    }
    for (std::size_t i = 0; i < total; ++i) cell_lists_[cell_of[i]].push_back(std::uint32_t(i));
    nprobe_ = nprobe > 0 ? nprobe : int(std::max<std::size_t>(1, ncells / 4));
    if (nprobe_ > int(ncells)) nprobe_ = int(ncells);
    build_probe_layout();
}

void CentroidAnnIndex::build_probe_layout() {
    const std::size_t d = entries_.cols;
    probe_entries_ = Mat(entries_.rows, d);
    probe_ids_.resize(entries_.rows);
    cell_starts_.assign(cell_lists_.size() + 1, 0);
    std::size_t at = 0;
    for (std::size_t c = 0; c < cell_lists_.size(); ++c) {
        cell_starts_[c] = at;
        for (std::uint32_t e : cell_lists_[c]) {
            std::copy(entries_.row(e), entries_.row(e) + d, probe_entries_.row(at));
            probe_ids_[at] = e;
            ++at;
        }
    }
    cell_starts_.back() = at;
}

CentroidAnnIndex CentroidAnnIndex::build(const std::vector<CentroidSet>& sets, std::size_t d,
                                         std::uint64_t seed, int nprobe) {
    if (sets.empty()) throw std::invalid_argument("build_centroid_index: empty corpus");
    CentroidAnnIndex idx;
    std::size_t total = 0;
    for (const auto& s : sets) total += s.centroids.rows;
    idx.entries_ = Mat(total, d);
    idx.entry_page_.resize(total);
    idx.page_ids_.reserve(sets.size());
    std::size_t at = 0;
    for (std::size_t p = 0; p < sets.size(); ++p) {
        idx.page_ids_.push_back(sets[p].page_id);
        for (std::size_t c = 0; c < sets[p].centroids.rows; ++c, ++at) {
            std::copy(sets[p].centroids.row(c), sets[p].centroids.row(c) + d,
                      idx.entries_.row(at));
            idx.entry_page_[at] = std::uint32_t(p);
        }
    }
    idx.build_ivf(seed, nprobe);
    return idx;
}

std::vector<CentroidAnnIndex::Hit> CentroidAnnIndex::search(const float* query, std::size_t k,
                                                            bool exact_flat) const {
    const std::size_t d = entries_.cols;
    // (score, entry) max-kept in a min-heap; ties resolved by entry index.
    using Item = std::pair<float, std::uint32_t>;
    auto cmp = [](const Item& a, const Item& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    };
    std::priority_queue<Item, std::vector<Item>, decltype(cmp)> heap(cmp);

    auto consider = [&](std::uint32_t e) {
        float s = float(dot(query, entries_.row(e), d));
        if (heap.size() < k) {
            heap.emplace(s, e);
        } else if (s > heap.top().first ||
                   (s == heap.top().first && e < heap.top().second)) {
            heap.pop();
            heap.emplace(s, e);
        }
    };

    if (exact_flat || cell_lists_.empty()) {
        for (std::uint32_t e = 0; e < entries_.rows; ++e) consider(e);
    } else {
        const std::size_t ncells = cell_centers_.rows;
        std::vector<std::pair<float, std::uint32_t>> cell_scores(ncells);
        for (std::size_t c = 0; c < ncells; ++c)
            cell_scores[c] = {float(dot(query, cell_centers_.row(c), d)), std::uint32_t(c)};
        std::size_t probe = std::min<std::size_t>(std::size_t(nprobe_), ncells);
        std::partial_sort(cell_scores.begin(), cell_scores.begin() + probe, cell_scores.end(),
                          [](const auto& a, const auto& b) {
                              if (a.first != b.first) return a.first > b.first;
                              return a.second < b.second;
                          });
        for (std::size_t c = 0; c < probe; ++c) {
            std::size_t cell = cell_scores[c].second;
            for (std::size_t i = cell_starts_[cell]; i < cell_starts_[cell + 1]; ++i) {
                float s = float(dot(query, probe_entries_.row(i), d));
                std::uint32_t e = probe_ids_[i];
                if (heap.size() < k) {
                    heap.emplace(s, e);
                } else if (s > heap.top().first ||
                           (s == heap.top().first && e < heap.top().second)) {
                    heap.pop();
                    heap.emplace(s, e);
                }
            }
        }
    }

    std::vector<Hit> hits(heap.size());
    std::vector<Item> items;
    items.reserve(heap.size());
    while (!heap.empty()) { items.push_back(heap.top()); heap.pop(); }
    std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (std::size_t i = 0; i < items.size(); ++i)
        hits[i] = Hit{entry_page_[items[i].second], items[i].first};
    return hits;
}

std::vector<CoarseCandidate> coarse_candidates(const QueryTokens& q,
                                               const CentroidAnnIndex& idx, std::size_t R,
                                               std::size_t probe_k, bool exact_flat) {
    if (R < 1) throw std::invalid_argument("coarse_candidates: R must be >= 1");
    std::unordered_map<std::uint32_t, double> page_score;
    std::unordered_map<std::uint32_t, float> token_best;
    for (std::size_t t = 0; t < q.m(); ++t) {
        token_best.clear();
        for (const auto& hit : idx.search(q.tokens.row(t), probe_k, exact_flat)) {
            auto [it, inserted] = token_best.emplace(hit.page, hit.score);
            if (!inserted && hit.score > it->second) it->second = hit.score;
        }
        for (const auto& [page, best] : token_best) page_score[page] += double(best);
    }
    std::vector<CoarseCandidate> cands;
    cands.reserve(page_score.size());
    for (const auto& [page, score] : page_score) cands.push_back({page, score});
    std::sort(cands.begin(), cands.end(), [&](const CoarseCandidate& a, const CoarseCandidate& b) {
        if (a.coarse_score != b.coarse_score) return a.coarse_score > b.coarse_score;
        return idx.page_ids()[a.page] < idx.page_ids()[b.page];
    });
    if (cands.size() > R) cands.resize(R);
    return cands;
}

CorpusIndex build_corpus_index(std::vector<PageRecord> pages, const PipelineConfig& cfg) {
    if (pages.empty()) throw std::invalid_argument("build_corpus_index: empty corpus");
    std::sort(pages.begin(), pages.end(),
              [](const PageRecord& a, const PageRecord& b) { return a.page_id < b.page_id; });
    std::vector<CentroidSet> sets(pages.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 64)
#endif
    for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(pages.size()); ++i) {
        sets[i] = build_page_centroids(pages[i].page_id, pages[i].patches,
                                       cfg.centroids_per_page, cfg.seed + std::uint64_t(i));
    }
    CorpusIndex index;
    index.ann = CentroidAnnIndex::build(sets, std::size_t(cfg.embed_dim), cfg.seed,
                                        cfg.ann_nprobe);
    for (const auto& s : sets)
        index.centroid_weights.insert(index.centroid_weights.end(), s.weights.begin(),
                                      s.weights.end());
    index.pages = std::move(pages);
    return index;
}

std::vector<RankedPage> stage1_search(const QueryTokens& q, const CorpusIndex& index,
                                      const PipelineConfig& cfg, Stage1Timing* timing) {
    using clock = std::chrono::steady_clock;
    auto ms = [](clock::time_point a, clock::time_point b) {
        return std::chrono::duration<double, std::milli>(b - a).count();
    };

    // ANN probe: per-token centroid retrieval.
    auto t0 = clock::now();
    std::vector<std::vector<CentroidAnnIndex::Hit>> per_token(q.m());
    for (std::size_t t = 0; t < q.m(); ++t)
        per_token[t] = index.ann.search(q.tokens.row(t), std::size_t(cfg.probe_k),
                                        cfg.exact_flat);
    auto t1 = clock::now();

    // Coarse ranking: aggregate per-page evidence, keep top-R.
    std::unordered_map<std::uint32_t, double> page_score;
    std::unordered_map<std::uint32_t, float> token_best;
    for (std::size_t t = 0; t < q.m(); ++t) {
        token_best.clear();
        for (const auto& hit : per_token[t]) {
            auto [it, inserted] = token_best.emplace(hit.page, hit.score);
            if (!inserted && hit.score > it->second) it->second = hit.score;
        }
        for (const auto& [page, best] : token_best) page_score[page] += double(best);
    }
    std::vector<CoarseCandidate> shortlist;
    shortlist.reserve(page_score.size());
    for (const auto& [page, score] : page_score) shortlist.push_back({page, score});
    std::sort(shortlist.begin(), shortlist.end(),
              [&](const CoarseCandidate& a, const CoarseCandidate& b) {
                  if (a.coarse_score != b.coarse_score) return a.coarse_score > b.coarse_score;
                  return index.pages[a.page].page_id < index.pages[b.page].page_id;
              });
    if (shortlist.size() > std::size_t(cfg.shortlist_r)) shortlist.resize(cfg.shortlist_r);
    auto t2 = clock::now();

    // Fine scoring: exact two-way score on the shortlist only.
    std::vector<RankedPage> scored(shortlist.size());
    std::uint64_t dots = 0;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 16) reduction(+ : dots)
#endif
    for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(shortlist.size()); ++i) {
        const PageRecord& page = index.pages[shortlist[i].page];
        DotCounter local;
        ScoreBreakdown b = two_way_score(q, page.patches, &local);
        scored[i] = RankedPage{page.page_id, b.total, 0};
        dots += local.dots;
    }
    auto result = rank_pages(std::move(scored), std::size_t(cfg.stage1_cutoff));
    auto t3 = clock::now();

    if (timing) {
        timing->ann_ms = ms(t0, t1);
        timing->coarse_rank_ms = ms(t1, t2);
        timing->fine_score_ms = ms(t2, t3);
        timing->fine_dot_products = dots;
    }
    return result;
}

namespace {
constexpr char kAnnMagic[8] = {'M', 'V', 'A', 'N', 'N', '0', '0', '1'};

void write_u64(std::ofstream& f, std::uint64_t v) {
    f.write(reinterpret_cast<const char*>(&v), 8);
}
std::uint64_t read_u64(std::ifstream& f) {
    std::uint64_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 8);
    return v;
}
}  // namespace

void CentroidAnnIndex::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f.write(kAnnMagic, 8);
    write_u64(f, entries_.rows);
    write_u64(f, entries_.cols);
    f.write(reinterpret_cast<const char*>(entries_.data.data()),
            entries_.data.size() * sizeof(float));
    f.write(reinterpret_cast<const char*>(entry_page_.data()),
            entry_page_.size() * sizeof(std::uint32_t));
    write_u64(f, page_ids_.size());
    for (const auto& id : page_ids_) {
        write_u64(f, id.size());
        f.write(id.data(), std::streamsize(id.size()));
    }
    write_u64(f, cell_centers_.rows);
    f.write(reinterpret_cast<const char*>(cell_centers_.data.data()),
            cell_centers_.data.size() * sizeof(float));
    for (const auto& list : cell_lists_) {
        write_u64(f, list.size());
        f.write(reinterpret_cast<const char*>(list.data()), list.size() * sizeof(std::uint32_t));
    }
    write_u64(f, std::uint64_t(nprobe_));
}

CentroidAnnIndex CentroidAnnIndex::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kAnnMagic, 8) != 0)
        throw std::runtime_error("bad ann index file: " + path);
    CentroidAnnIndex idx;
    std::uint64_t rows = read_u64(f), cols = read_u64(f);
    idx.entries_ = Mat(rows, cols);
    f.read(reinterpret_cast<char*>(idx.entries_.data.data()),
           idx.entries_.data.size() * sizeof(float));
    idx.entry_page_.resize(rows);
    f.read(reinterpret_cast<char*>(idx.entry_page_.data()), rows * sizeof(std::uint32_t));
    std::uint64_t npages = read_u64(f);
    idx.page_ids_.resize(npages);
    for (auto& id : idx.page_ids_) {
        std::uint64_t len = read_u64(f);
        id.resize(len);
        f.read(id.data(), std::streamsize(len));
    }
    std::uint64_t ncells = read_u64(f);
    idx.cell_centers_ = Mat(ncells, cols);
    f.read(reinterpret_cast<char*>(idx.cell_centers_.data.data()),
           idx.cell_centers_.data.size() * sizeof(float));
    idx.cell_lists_.resize(ncells);
    for (auto& list : idx.cell_lists_) {
        std::uint64_t len = read_u64(f);
        list.resize(len);
        f.read(reinterpret_cast<char*>(list.data()), len * sizeof(std::uint32_t));
    }
    idx.nprobe_ = int(read_u64(f));
    if (!f) throw std::runtime_error("truncated ann index file: " + path);
    idx.build_probe_layout();
    return idx;
}

}  // namespace mvrag
