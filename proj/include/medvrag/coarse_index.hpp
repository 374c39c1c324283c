#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "medvrag/config.hpp"
#include "medvrag/scoring.hpp"
#include "medvrag/types.hpp"

namespace mvrag {

// Per-page k-means summary: c = min(C, n_patches) unit-norm centroids.
struct CentroidSet {
    std::string page_id;
    Mat centroids;                     // c x d
    std::vector<std::uint32_t> weights;  // member counts, sums to n_patches
};

CentroidSet build_page_centroids(const std::string& page_id, const PatchMatrix& patches,
                                 int C, std::uint64_t seed);

// Flat store of every page's centroids plus an IVF structure for
// approximate inner-product search. exact_flat forces exhaustive scans.
class CentroidAnnIndex {
public:
    // page_ids must parallel centroid_sets.
    static CentroidAnnIndex build(const std::vector<CentroidSet>& sets, std::size_t d,
                                  std::uint64_t seed, int nprobe = 0);

    struct Hit {
        std::uint32_t page = 0;   // index into page_ids()
        float score = 0.0f;
    };

    // Top-k centroids by inner product with the query vector. Each hit
    // carries the owning page. exact_flat overrides the IVF probe.
    std::vector<Hit> search(const float* query, std::size_t k, bool exact_flat) const;

    std::size_t num_entries() const { return entries_.rows; }
    std::size_t num_pages() const { return page_ids_.size(); }
    const std::vector<std::string>& page_ids() const { return page_ids_; }
    std::size_t dim() const { return entries_.cols; }
    const Mat& entries() const { return entries_; }
    const std::vector<std::uint32_t>& entry_pages() const { return entry_page_; }

    void save(const std::string& path) const;
    static CentroidAnnIndex load(const std::string& path);

private:
    Mat entries_;                          // all centroids, row-major
    std::vector<std::uint32_t> entry_page_;  // owning page per entry
    std::vector<std::string> page_ids_;

    // IVF: coarse cells over the centroid entries.
    Mat cell_centers_;
    std::vector<std::vector<std::uint32_t>> cell_lists_;
    int nprobe_ = 0;

    // Cell-major copy of the entries so a probe scans contiguous rows
    // instead of gathering scattered ones; derived, never persisted.
    Mat probe_entries_;
    std::vector<std::uint32_t> probe_ids_;     // original entry index per row
    std::vector<std::size_t> cell_starts_;     // row offset per cell

    void build_ivf(std::uint64_t seed, int nprobe);
    void build_probe_layout();
};

struct CoarseCandidate {
    std::uint32_t page = 0;
    double coarse_score = 0.0;
};

// Per query token, top-probe_k centroids are retrieved; a page's coarse
// score is the sum over tokens of its best centroid similarity seen.
// Pages unseen by every token are unscored.
std::vector<CoarseCandidate> coarse_candidates(const QueryTokens& q,
                                               const CentroidAnnIndex& idx, std::size_t R,
                                               std::size_t probe_k, bool exact_flat);

struct Stage1Timing {
    double ann_ms = 0.0;
    double coarse_rank_ms = 0.0;
    double fine_score_ms = 0.0;
    std::uint64_t fine_dot_products = 0;
    double total_ms() const { return ann_ms + coarse_rank_ms + fine_score_ms; }
};

// Built once per corpus; pages are held in memory for fine scoring.
struct CorpusIndex {
    std::vector<PageRecord> pages;  // sorted by page_id; ann slots match
    CentroidAnnIndex ann;
    std::vector<std::uint32_t> centroid_weights;  // parallel to ann entries
};

CorpusIndex build_corpus_index(std::vector<PageRecord> pages, const PipelineConfig& cfg);

// Coarse-to-fine Stage-1 search: ANN probe, coarse ranking to top-R,
// exact two-way scoring on the shortlist, top-N1 returned.
std::vector<RankedPage> stage1_search(const QueryTokens& q, const CorpusIndex& index,
                                      const PipelineConfig& cfg,
                                      Stage1Timing* timing = nullptr);

}  // namespace mvrag
