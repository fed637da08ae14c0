#include "doppel/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "doppel/csv.hpp"
#include "doppel/error.hpp"
#include "doppel/random.hpp"

namespace doppel::data {
namespace {

constexpr std::pair<Direction, std::string_view> kDirectionNames[] = {
    {Direction::kNorth, "north"}, {Direction::kSouth, "south"}, {Direction::kEast, "east"},
    {Direction::kWest, "west"},   {Direction::kLeft, "left"},   {Direction::kRight, "right"},
    {Direction::kFront, "front"}, {Direction::kBack, "back"},   {Direction::kNone, "none"},
};

// FNV-1a: a stable per-scene salt independent of std::hash.
std::uint64_t stable_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
std::vector<T> sample(std::vector<T> items, std::size_t n, Rng& rng) {
  rng.shuffle(std::span<T>(items));
  items.resize(std::min(n, items.size()));
  return items;
}

}  // namespace

std::string_view direction_name(Direction d) {
  for (const auto& [dir, name] : kDirectionNames) {
    if (dir == d) return name;
  }
  return "none";
}

Direction parse_direction(std::string_view text) {
  for (const auto& [dir, name] : kDirectionNames) {
    if (name == text) return dir;
  }
  if (text.empty()) return Direction::kNone;
  throw Error(ErrorCode::kParseError, "unknown direction '" + std::string(text) + "'");
}

std::optional<Direction> opposite(Direction d) {
  switch (d) {
    case Direction::kNorth: return Direction::kSouth;
    case Direction::kSouth: return Direction::kNorth;
    case Direction::kEast: return Direction::kWest;
    case Direction::kWest: return Direction::kEast;
    case Direction::kLeft: return Direction::kRight;
    case Direction::kRight: return Direction::kLeft;
    case Direction::kFront: return Direction::kBack;
    case Direction::kBack: return Direction::kFront;
    case Direction::kNone: return std::nullopt;
  }
  return std::nullopt;
}

ImageCatalog::ImageCatalog(std::vector<CatalogEntry> entries) : entries_(std::move(entries)) {
  std::set<std::pair<std::string, std::string>> seen;
  for (const CatalogEntry& e : entries_) {
    if (!seen.insert({e.scene, e.image_id}).second) {
      throw Error(ErrorCode::kInvalidParams,
                  "image '" + e.image_id + "' listed twice in scene '" + e.scene + "'");
    }
  }
}

const CatalogEntry& ImageCatalog::find(const std::string& image_id, const std::string& scene) const {
  const CatalogEntry* hit = nullptr;
  for (const CatalogEntry& e : entries_) {
    if (e.image_id != image_id || (!scene.empty() && e.scene != scene)) continue;
    if (hit) {
      throw Error(ErrorCode::kInvalidParams,
                  "image '" + image_id + "' appears in several scenes; name the scene");
    }
    hit = &e;
  }
  if (!hit) {
    throw Error(ErrorCode::kUnknownScene,
                "image '" + image_id + "' is not in the catalog" +
                    (scene.empty() ? std::string() : " for scene '" + scene + "'"));
  }
  return *hit;
}

ImageCatalog read_catalog(const std::filesystem::path& path) {
  const csv::Table table = csv::read(path, {"image_id", "scene", "direction"});
  std::vector<CatalogEntry> entries;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    try {
      entries.push_back({row[0], row[1], parse_direction(row[2])});
    } catch (const Error& e) {
      throw Error(ErrorCode::kParseError,
                  path.string() + ":" + std::to_string(i + 2) + ": " + e.what());
    }
  }
  return ImageCatalog(std::move(entries));
}

void write_catalog(const std::filesystem::path& path, const ImageCatalog& catalog) {
  csv::Table table;
  table.header = {"image_id", "scene", "direction"};
  for (const CatalogEntry& e : catalog.entries()) {
    table.rows.push_back({e.image_id, e.scene, std::string(direction_name(e.direction))});
  }
  csv::write(path, table);
}

std::vector<matchio::PairRecord> build_pairs(const ImageCatalog& catalog,
                                             std::span<const MatchedPair> matched_pairs) {
  std::vector<matchio::PairRecord> out;
  for (const MatchedPair& p : matched_pairs) {
    const CatalogEntry& a = catalog.find(p.image_a, p.scene);
    const CatalogEntry& b = catalog.find(p.image_b, p.scene);
    if (a.scene != b.scene) {
      throw Error(ErrorCode::kUnknownScene, "pair " + p.image_a + " / " + p.image_b +
                                                " spans scenes '" + a.scene + "' and '" +
                                                b.scene + "'");
    }
    matchio::Label label = matchio::Label::kUnknown;
    if (a.direction != Direction::kNone && a.direction == b.direction) {
      label = matchio::Label::kPositive;
    } else if (opposite(a.direction) == b.direction) {
      label = matchio::Label::kNegative;
    }
    if (label == matchio::Label::kUnknown) continue;
    out.push_back({a.image_id, b.image_id, a.scene, label, false});
  }
  return out;
}

matchio::PairRecord flip_augment(const matchio::PairRecord& pair, FlipSide side) {
  if (pair.flip_applied) {
    throw Error(ErrorCode::kInvalidAugmentation, "pair " + pair.pair_id() + " is already flipped");
  }
  if (pair.label != matchio::Label::kPositive) {
    throw Error(ErrorCode::kInvalidAugmentation,
                "flip augmentation needs a positive pair; " + pair.pair_id() + " is " +
                    std::string(matchio::label_name(pair.label)));
  }
  matchio::PairRecord out = pair;
  if (side == FlipSide::kA) std::swap(out.image_a, out.image_b);
  out.label = matchio::Label::kNegative;
  out.flip_applied = true;
  return out;
}

std::vector<std::size_t> knn_curate(const Eigen::MatrixXd& adjacency,
                                    std::span<const Direction> labels, int k) {
  const Eigen::Index n = adjacency.rows();
  if (adjacency.cols() != n) {
    throw Error(ErrorCode::kBadDimensions, "adjacency matrix is " + std::to_string(n) + "x" +
                                               std::to_string(adjacency.cols()));
  }
  if (static_cast<std::size_t>(n) != labels.size()) {
    throw Error(ErrorCode::kBadDimensions, "adjacency has " + std::to_string(n) +
                                               " rows but " + std::to_string(labels.size()) +
                                               " labels were given");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (adjacency(i, j) != adjacency(j, i)) {
        throw Error(ErrorCode::kBadDimensions, "adjacency matrix is not symmetric at (" +
                                                   std::to_string(i) + ", " + std::to_string(j) + ")");
      }
    }
  }
  if (k < 1 || n < k + 1) {
    throw Error(ErrorCode::kInvalidParams, "K-NN curation needs K >= 1 and at least K + 1 images");
  }

  Eigen::MatrixXd unit = adjacency;
  std::vector<bool> connected(static_cast<std::size_t>(n), false);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double norm = unit.row(i).norm();
    if (norm > 0.0) {
      unit.row(i) /= norm;
      connected[static_cast<std::size_t>(i)] = true;
    }
  }
  const Eigen::MatrixXd similarity = unit * unit.transpose();

  std::vector<std::size_t> flagged;
  std::vector<Eigen::Index> candidates;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!connected[static_cast<std::size_t>(i)]) continue;
    candidates.clear();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i && connected[static_cast<std::size_t>(j)]) candidates.push_back(j);
    }
    const std::size_t take = std::min(candidates.size(), static_cast<std::size_t>(k));
    if (take == 0) continue;
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                      candidates.end(), [&](Eigen::Index a, Eigen::Index b) {
                        if (similarity(i, a) != similarity(i, b)) return similarity(i, a) > similarity(i, b);
                        return a < b;
                      });
    std::map<Direction, std::size_t> votes;
    for (std::size_t r = 0; r < take; ++r) ++votes[labels[static_cast<std::size_t>(candidates[r])]];
    for (const auto& [label, count] : votes) {
      if (2 * count > take && label != labels[static_cast<std::size_t>(i)]) {
        flagged.push_back(static_cast<std::size_t>(i));
      }
    }
  }
  return flagged;
}

std::vector<matchio::PairRecord> remove_images(std::span<const matchio::PairRecord> pairs,
                                               const std::set<std::string>& images) {
  std::vector<matchio::PairRecord> out;
  for (const matchio::PairRecord& p : pairs) {
    if (!images.contains(p.image_a) && !images.contains(p.image_b)) out.push_back(p);
  }
  return out;
}

Split split_and_balance(std::span<const matchio::PairRecord> pairs, std::size_t max_per_scene,
                        const std::set<std::string>& test_scenes, std::uint64_t seed,
                        const std::optional<std::set<std::string>>& train_scenes) {
  if (train_scenes) {
    for (const std::string& s : *train_scenes) {
      if (test_scenes.contains(s)) {
        throw Error(ErrorCode::kSceneOverlap, "scene '" + s + "' is in both train and test splits");
      }
    }
  }
  struct SceneBucket {
    std::vector<matchio::PairRecord> positives, negatives;
  };
  std::map<std::string, SceneBucket> scenes;
  for (const matchio::PairRecord& p : pairs) {
    if (p.label == matchio::Label::kUnknown) continue;
    const bool test = test_scenes.contains(p.scene);
    if (!test && train_scenes && !train_scenes->contains(p.scene)) continue;
    if (test && p.flip_applied) continue;  // augmented pairs are for training only
    SceneBucket& b = scenes[p.scene];
    (p.label == matchio::Label::kPositive ? b.positives : b.negatives).push_back(p);
  }

  Split split;
  for (auto& [scene, bucket] : scenes) {
    Rng rng(mix_seed(seed, stable_hash(scene)));
    std::vector<matchio::PairRecord> chosen;
    if (test_scenes.contains(scene)) {
      const std::size_t per_class =
          std::min({bucket.positives.size(), bucket.negatives.size(), max_per_scene / 2});
      chosen = sample(bucket.positives, per_class, rng);
      auto neg = sample(bucket.negatives, per_class, rng);
      chosen.insert(chosen.end(), neg.begin(), neg.end());
    } else {
      const std::size_t total = bucket.positives.size() + bucket.negatives.size();
      if (total <= max_per_scene) {
        chosen = bucket.positives;
        chosen.insert(chosen.end(), bucket.negatives.begin(), bucket.negatives.end());
      } else {
        // Even split when both classes allow it; otherwise the scarcer class
        // is kept whole and the other fills the remaining quota.
        std::size_t n_pos = std::min(bucket.positives.size(), max_per_scene / 2);
        std::size_t n_neg = std::min(bucket.negatives.size(), max_per_scene - n_pos);
        n_pos = std::min(bucket.positives.size(), max_per_scene - n_neg);
        chosen = sample(bucket.positives, n_pos, rng);
        auto neg = sample(bucket.negatives, n_neg, rng);
        chosen.insert(chosen.end(), neg.begin(), neg.end());
      }
    }
    std::sort(chosen.begin(), chosen.end(),
              [](const matchio::PairRecord& a, const matchio::PairRecord& b) {
                return a.pair_id() < b.pair_id();
              });
    auto& dst = test_scenes.contains(scene) ? split.test : split.train;
    dst.insert(dst.end(), chosen.begin(), chosen.end());
  }
  return split;
}

}  // namespace doppel::data
