#include "doppel/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "doppel/csv.hpp"
#include "doppel/error.hpp"

namespace doppel::eval {
namespace {

struct Block {
  double score;
  std::size_t positives;
  std::size_t negatives;
};

// Groups items by distinct score, highest first.
std::vector<Block> score_blocks(std::span<const double> scores, std::span<const bool> positive) {
  if (scores.size() != positive.size()) {
    throw Error(ErrorCode::kShapeMismatch, "scores and labels differ in length");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (double s : scores) {
    if (!std::isfinite(s)) throw Error(ErrorCode::kInvalidParams, "non-finite score");
  }
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<Block> blocks;
  for (std::size_t i : order) {
    if (blocks.empty() || scores[i] != blocks.back().score) blocks.push_back({scores[i], 0, 0});
    (positive[i] ? blocks.back().positives : blocks.back().negatives) += 1;
  }
  return blocks;
}

std::pair<std::size_t, std::size_t> class_counts(std::span<const Block> blocks) {
  std::size_t p = 0, n = 0;
  for (const Block& b : blocks) {
    p += b.positives;
    n += b.negatives;
  }
  return {p, n};
}

void require_both(std::size_t p, std::size_t n) {
  if (p == 0 || n == 0) {
    throw Error(ErrorCode::kDegenerateLabels,
                "metric needs both classes (positives " + std::to_string(p) + ", negatives " +
                    std::to_string(n) + ")");
  }
}

void split(std::span<const ScoredPair> scored, std::vector<double>& scores,
           std::vector<char>& labels) {
  scores.reserve(scored.size());
  labels.reserve(scored.size());
  for (const ScoredPair& s : scored) {
    scores.push_back(s.score);
    labels.push_back(s.positive ? 1 : 0);
  }
}

std::span<const bool> as_bools(const std::vector<char>& v) {
  static_assert(sizeof(bool) == sizeof(char));
  return {reinterpret_cast<const bool*>(v.data()), v.size()};
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", *v);
  return buf;
}

std::optional<double> mean_of(const std::vector<double>& values) {
  if (values.empty()) return std::nullopt;
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

}  // namespace

double average_precision(std::span<const double> scores, std::span<const bool> positive) {
  const auto blocks = score_blocks(scores, positive);
  const auto [total_pos, total_neg] = class_counts(blocks);
  require_both(total_pos, total_neg);
  double ap = 0.0;
  double prev_recall = 0.0;
  std::size_t tp = 0, fp = 0;
  for (const Block& b : blocks) {
    tp += b.positives;
    fp += b.negatives;
    const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

double average_precision(std::span<const ScoredPair> scored) {
  std::vector<double> scores;
  std::vector<char> labels;
  split(scored, scores, labels);
  return average_precision(scores, as_bools(labels));
}

double roc_auc(std::span<const double> scores, std::span<const bool> positive) {
  const auto blocks = score_blocks(scores, positive);
  const auto [total_pos, total_neg] = class_counts(blocks);
  require_both(total_pos, total_neg);
  // Walk from the lowest score up; all counts stay integers (halves for ties)
  // so the result is exact up to the final division.
  double wins = 0.0;
  std::size_t neg_below = 0;
  for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) {
    wins += static_cast<double>(it->positives) * static_cast<double>(neg_below) +
            0.5 * static_cast<double>(it->positives) * static_cast<double>(it->negatives);
    neg_below += it->negatives;
  }
  return wins / (static_cast<double>(total_pos) * static_cast<double>(total_neg));
}

double roc_auc(std::span<const ScoredPair> scored) {
  std::vector<double> scores;
  std::vector<char> labels;
  split(scored, scores, labels);
  return roc_auc(scores, as_bools(labels));
}

Confusion confusion(std::span<const ScoredPair> scored, double threshold) {
  Confusion c;
  for (const ScoredPair& s : scored) {
    const bool predicted = s.score >= threshold;
    if (predicted && s.positive) ++c.tp;
    else if (predicted) ++c.fp;
    else if (s.positive) ++c.fn;
    else ++c.tn;
  }
  return c;
}

std::vector<ScoredPair> baseline_scores(std::span<const BaselineInput> pairs, BaselineMode mode,
                                        KeypointDenominator denominator) {
  std::vector<ScoredPair> out;
  out.reserve(pairs.size());
  for (const BaselineInput& p : pairs) {
    ScoredPair s{p.pair_id, p.scene, 0.0, p.positive};
    const auto matches = static_cast<double>(p.num_verified);
    if (mode == BaselineMode::kCount) {
      s.score = matches;
    } else {
      const std::size_t keypoints = denominator == KeypointDenominator::kSum
                                        ? p.keypoints_a + p.keypoints_b
                                        : std::min(p.keypoints_a, p.keypoints_b);
      s.score = keypoints > 0 ? matches / static_cast<double>(keypoints) : 0.0;
    }
    out.push_back(std::move(s));
  }
  return out;
}

SceneReport per_scene_report(std::span<const ScoredPair> scored) {
  std::map<std::string, std::vector<ScoredPair>> by_scene;
  for (const ScoredPair& s : scored) by_scene[s.scene].push_back(s);
  SceneReport report;
  std::vector<double> aps, aucs;
  for (const auto& [scene, items] : by_scene) {
    SceneMetrics m;
    m.scene = scene;
    m.count = items.size();
    for (const ScoredPair& s : items) m.positives += s.positive ? 1 : 0;
    if (m.positives > 0 && m.positives < m.count) {
      m.ap = average_precision(items);
      m.roc_auc = roc_auc(items);
      aps.push_back(*m.ap);
      aucs.push_back(*m.roc_auc);
    }
    report.scenes.push_back(std::move(m));
  }
  report.mean_ap = mean_of(aps);
  report.mean_roc_auc = mean_of(aucs);
  std::size_t positives = 0;
  for (const ScoredPair& s : scored) positives += s.positive ? 1 : 0;
  if (positives > 0 && positives < scored.size()) {
    report.pooled_ap = average_precision(scored);
    report.pooled_roc_auc = roc_auc(scored);
  }
  return report;
}

std::string render_csv(const SceneReport& report) {
  csv::Table table;
  table.header = {"scene", "pairs", "positives", "ap", "roc_auc"};
  for (const SceneMetrics& m : report.scenes) {
    table.rows.push_back({m.scene, std::to_string(m.count), std::to_string(m.positives),
                          fmt(m.ap), fmt(m.roc_auc)});
  }
  std::size_t total = 0, positives = 0;
  for (const SceneMetrics& m : report.scenes) {
    total += m.count;
    positives += m.positives;
  }
  table.rows.push_back({"mean", std::to_string(total), std::to_string(positives),
                        fmt(report.mean_ap), fmt(report.mean_roc_auc)});
  std::ostringstream out;
  csv::write(out, table);
  return out.str();
}

std::string render_text(const SceneReport& report) {
  std::size_t width = 5;
  for (const SceneMetrics& m : report.scenes) width = std::max(width, m.scene.size());
  auto cell = [](const std::optional<double>& v) { return v ? fmt(v) : std::string("n/a"); };
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-*s %7s %7s %10s %10s\n", static_cast<int>(width), "scene",
                "pairs", "pos", "AP", "ROC AUC");
  out << line;
  for (const SceneMetrics& m : report.scenes) {
    std::snprintf(line, sizeof(line), "%-*s %7zu %7zu %10s %10s\n", static_cast<int>(width),
                  m.scene.c_str(), m.count, m.positives, cell(m.ap).c_str(),
                  cell(m.roc_auc).c_str());
    out << line;
  }
  std::snprintf(line, sizeof(line), "%-*s %7s %7s %10s %10s\n", static_cast<int>(width), "mean",
                "", "", cell(report.mean_ap).c_str(), cell(report.mean_roc_auc).c_str());
  out << line;
  std::snprintf(line, sizeof(line), "%-*s %7s %7s %10s %10s\n", static_cast<int>(width), "pooled",
                "", "", cell(report.pooled_ap).c_str(), cell(report.pooled_roc_auc).c_str());
  out << line;
  return out.str();
}

std::vector<CurvePoint> pr_curve(std::span<const ScoredPair> scored) {
  std::vector<double> scores;
  std::vector<char> labels;
  split(scored, scores, labels);
  const auto blocks = score_blocks(scores, as_bools(labels));
  const auto [total_pos, total_neg] = class_counts(blocks);
  require_both(total_pos, total_neg);
  std::vector<CurvePoint> curve;
  std::size_t tp = 0, fp = 0;
  for (const Block& b : blocks) {
    tp += b.positives;
    fp += b.negatives;
    curve.push_back({static_cast<double>(tp) / static_cast<double>(total_pos),
                     static_cast<double>(tp) / static_cast<double>(tp + fp), b.score});
  }
  return curve;
}

std::vector<CurvePoint> roc_curve(std::span<const ScoredPair> scored) {
  std::vector<double> scores;
  std::vector<char> labels;
  split(scored, scores, labels);
  const auto blocks = score_blocks(scores, as_bools(labels));
  const auto [total_pos, total_neg] = class_counts(blocks);
  require_both(total_pos, total_neg);
  std::vector<CurvePoint> curve{{0.0, 0.0, blocks.front().score}};
  curve.front().threshold = std::numeric_limits<double>::infinity();
  std::size_t tp = 0, fp = 0;
  for (const Block& b : blocks) {
    tp += b.positives;
    fp += b.negatives;
    curve.push_back({static_cast<double>(fp) / static_cast<double>(total_neg),
                     static_cast<double>(tp) / static_cast<double>(total_pos), b.score});
  }
  return curve;
}

void write_curve(const std::filesystem::path& path, std::span<const CurvePoint> curve,
                 const std::string& x_name, const std::string& y_name) {
  csv::Table table;
  table.header = {x_name, y_name, "threshold"};
  for (const CurvePoint& p : curve) {
    table.rows.push_back(
        {csv::format_number(p.x), csv::format_number(p.y), csv::format_number(p.threshold)});
  }
  csv::write(path, table);
}

std::vector<ScoredPair> read_scores(const std::filesystem::path& path) {
  const csv::Table table = csv::read(path, {"pair_id", "scene", "label", "score"});
  std::vector<ScoredPair> out;
  out.reserve(table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    const std::string where = path.string() + ":" + std::to_string(i + 2) + ": ";
    ScoredPair s;
    s.pair_id = row[0];
    s.scene = row[1];
    if (row[2] == "positive" || row[2] == "1") {
      s.positive = true;
    } else if (row[2] == "negative" || row[2] == "0") {
      s.positive = false;
    } else {
      throw Error(ErrorCode::kParseError, where + "bad label '" + row[2] + "'");
    }
    const std::string& tok = row[3];
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), s.score);
    if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(s.score)) {
      throw Error(ErrorCode::kParseError, where + "bad score '" + tok + "'");
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_scores(const std::filesystem::path& path, std::span<const ScoredPair> scored) {
  csv::Table table;
  table.header = {"pair_id", "scene", "label", "score"};
  for (const ScoredPair& s : scored) {
    table.rows.push_back(
        {s.pair_id, s.scene, s.positive ? "positive" : "negative", csv::format_number(s.score)});
  }
  csv::write(path, table);
}

}  // namespace doppel::eval
