#pragma once

// Ranking metrics, confusion counts, per-scene aggregation and the
// match-count baselines.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace doppel::eval {

struct ScoredPair {
  std::string pair_id;
  std::string scene;
  double score = 0.0;
  bool positive = false;
};

// Sum over the descending-score sweep of (R_n - R_{n-1}) * P_n, where tied
// scores enter the sweep together. Throws DegenerateLabels if one class is
// missing, InvalidParams on non-finite scores.
double average_precision(std::span<const ScoredPair> scored);
double average_precision(std::span<const double> scores, std::span<const bool> positive);

// Mann-Whitney statistic P(s+ > s-) + 1/2 P(s+ = s-). Throws DegenerateLabels.
double roc_auc(std::span<const ScoredPair> scored);
double roc_auc(std::span<const double> scores, std::span<const bool> positive);

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

// Predicted positive iff score >= threshold.
Confusion confusion(std::span<const ScoredPair> scored, double threshold);

enum class BaselineMode { kCount, kRatio };
enum class KeypointDenominator { kSum, kMin };

struct BaselineInput {
  std::string pair_id;
  std::string scene;
  bool positive = false;
  std::size_t num_verified = 0;
  std::size_t keypoints_a = 0;
  std::size_t keypoints_b = 0;
};

// count: |verified matches|; ratio: |verified| / keypoints, where keypoints
// is the sum (default) or minimum of both images' counts. Zero-keypoint
// pairs score 0.
std::vector<ScoredPair> baseline_scores(std::span<const BaselineInput> pairs, BaselineMode mode,
                                        KeypointDenominator denominator = KeypointDenominator::kSum);

struct SceneMetrics {
  std::string scene;
  std::size_t count = 0;
  std::size_t positives = 0;
  std::optional<double> ap;       // unset when the scene has a single class
  std::optional<double> roc_auc;
};

struct SceneReport {
  std::vector<SceneMetrics> scenes;  // sorted by scene name
  std::optional<double> mean_ap;     // unweighted mean over scenes with a value
  std::optional<double> mean_roc_auc;
  std::optional<double> pooled_ap;   // all pairs ranked together
  std::optional<double> pooled_roc_auc;
};

SceneReport per_scene_report(std::span<const ScoredPair> scored);
// One row per scene plus a final "mean" row; empty cells for unset values.
std::string render_csv(const SceneReport& report);
std::string render_text(const SceneReport& report);

struct CurvePoint {
  double x = 0.0;
  double y = 0.0;
  double threshold = 0.0;
};

// (recall, precision) after each distinct-score block of the sweep.
std::vector<CurvePoint> pr_curve(std::span<const ScoredPair> scored);
// (false positive rate, true positive rate), starting at (0, 0).
std::vector<CurvePoint> roc_curve(std::span<const ScoredPair> scored);
void write_curve(const std::filesystem::path& path, std::span<const CurvePoint> curve,
                 const std::string& x_name, const std::string& y_name);

// Scores file: pair_id,scene,label,score with label in {positive, negative}.
std::vector<ScoredPair> read_scores(const std::filesystem::path& path);
void write_scores(const std::filesystem::path& path, std::span<const ScoredPair> scored);

}  // namespace doppel::eval
