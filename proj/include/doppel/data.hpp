#pragma once

// Pair construction from direction-tagged catalogs, flip augmentation,
// K-NN curation of mislabeled images and train/test manifest balancing.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "doppel/matchio.hpp"

namespace doppel::data {

enum class Direction { kNorth, kSouth, kEast, kWest, kLeft, kRight, kFront, kBack, kNone };

std::string_view direction_name(Direction d);
Direction parse_direction(std::string_view text);  // throws ParseError
// Fixed involution N<->S, E<->W, L<->R, F<->B; none for kNone.
std::optional<Direction> opposite(Direction d);

struct CatalogEntry {
  std::string image_id;
  std::string scene;
  Direction direction = Direction::kNone;
};

class ImageCatalog {
 public:
  ImageCatalog() = default;
  // Throws InvalidParams on an id repeated within a scene.
  explicit ImageCatalog(std::vector<CatalogEntry> entries);

  const std::vector<CatalogEntry>& entries() const { return entries_; }
  // Entry for `image_id`, restricted to `scene` when non-empty. Throws
  // UnknownScene when absent, InvalidParams when ambiguous across scenes.
  const CatalogEntry& find(const std::string& image_id, const std::string& scene = {}) const;

 private:
  std::vector<CatalogEntry> entries_;
};

ImageCatalog read_catalog(const std::filesystem::path& path);  // image_id,scene,direction
void write_catalog(const std::filesystem::path& path, const ImageCatalog& catalog);

struct MatchedPair {
  std::string image_a;
  std::string image_b;
  std::string scene;  // optional disambiguation
};

// Same-direction pairs become positive, opposite-direction pairs negative;
// cross-axis and untagged pairs are dropped. Throws UnknownScene for ids
// absent from the catalog or pairs spanning two scenes.
std::vector<matchio::PairRecord> build_pairs(const ImageCatalog& catalog,
                                             std::span<const MatchedPair> matched_pairs);

enum class FlipSide { kA, kB };

// Positive -> negative pair whose second image is mirrored. Flipping side A
// swaps the images so the mirrored image is always image_b. Throws
// InvalidAugmentation for non-positive or already-flipped input.
matchio::PairRecord flip_augment(const matchio::PairRecord& pair, FlipSide side);

inline constexpr int kDefaultNeighbors = 10;

// Indices of images whose label differs from the strict majority label of
// their K most similar images (dot products of unit-normalized adjacency
// rows, self excluded). Rows without any matches are never flagged and never
// serve as neighbours. Throws BadDimensions for non-square/asymmetric A or a
// label count that differs from its size, InvalidParams when K < 1 or n < K + 1.
std::vector<std::size_t> knn_curate(const Eigen::MatrixXd& adjacency,
                                    std::span<const Direction> labels,
                                    int k = kDefaultNeighbors);

// Drops every pair that contains one of `images`.
std::vector<matchio::PairRecord> remove_images(std::span<const matchio::PairRecord> pairs,
                                               const std::set<std::string>& images);

inline constexpr std::size_t kDefaultMaxPerScene = 3000;

struct Split {
  std::vector<matchio::PairRecord> train;
  std::vector<matchio::PairRecord> test;
};

// Training scenes: all pairs when within the cap, otherwise exactly
// `max_per_scene` pairs split as evenly between labels as availability
// allows. Test scenes: natural (non-flipped) pairs only, equal numbers of
// positives and negatives, capped. Unknown labels are dropped. When
// `train_scenes` is given, only those scenes feed training and any overlap
// with `test_scenes` raises SceneOverlap. Deterministic in `seed`.
Split split_and_balance(std::span<const matchio::PairRecord> pairs, std::size_t max_per_scene,
                        const std::set<std::string>& test_scenes, std::uint64_t seed,
                        const std::optional<std::set<std::string>>& train_scenes = std::nullopt);

}  // namespace doppel::data
