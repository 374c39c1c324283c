#pragma once

#include <optional>
#include <string>
#include <vector>

#include "medvrag/coarse_index.hpp"
#include "medvrag/config.hpp"
#include "medvrag/corpus.hpp"
#include "medvrag/projection.hpp"
#include "medvrag/types.hpp"

namespace mvrag {

// Index directory layout:
//   manifest.json   corpus stats, config echo, file references
//   patches.bin     concatenated f32 LE row-major patch matrices
//   pages.jsonl     one page per line with byte offset/length into patches.bin
//   centroids.bin   per-page centroid rows (same layout), page order
//   centroid_weights.bin  u32 member counts, parallel to centroids.bin
//   ann.bin         serialized centroid ANN structure
//   projection.bin  optional PCA model
// A plain corpus directory is the same minus centroids/ann/projection.

void save_corpus(const std::string& dir, const std::vector<PageRecord>& pages,
                 const PipelineConfig& cfg);
std::vector<PageRecord> load_corpus(const std::string& dir);

void save_index(const std::string& dir, const CorpusIndex& index, const PipelineConfig& cfg,
                const ProjectionModel* projection = nullptr,
                const std::vector<DropRecord>* dedup_report = nullptr);
CorpusIndex load_index(const std::string& dir);

void save_queries(const std::string& dir, const std::vector<QueryTokens>& queries,
                  const std::vector<std::string>& ids);
std::pair<std::vector<QueryTokens>, std::vector<std::string>> load_queries(
    const std::string& dir);

void save_questions(const std::string& path, const std::vector<Question>& questions);
std::vector<Question> load_questions(const std::string& path);

void save_ground_truth(const std::string& path, const std::vector<GroundTruth>& truth);
std::vector<GroundTruth> load_ground_truth(const std::string& path);

std::string question_to_json(const Question& q);
Question question_from_json(const std::string& line);

}  // namespace mvrag
