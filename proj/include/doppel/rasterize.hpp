#pragma once

// Canvas normalization, keypoint/match mask rasterization and assembly of the
// classifier's stacked input.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "doppel/geometry.hpp"
#include "doppel/image.hpp"
#include "doppel/types.hpp"

namespace doppel::raster {

inline constexpr int kCanvasSize = 1024;

// Uniform scale with top-left anchoring; padding goes right and bottom.
struct CanvasTransform {
  double scale = 1.0;
  int pad_x = 0;  // zero columns appended on the right
  int pad_y = 0;  // zero rows appended at the bottom
  int original_height = 0;
  int original_width = 0;
  int target = kCanvasSize;

  Keypoint apply(const Keypoint& p) const { return {p.x * scale, p.y * scale}; }
  Keypoint invert(const Keypoint& p) const { return {p.x / scale, p.y / scale}; }
  int content_width() const { return target - pad_x; }
  int content_height() const { return target - pad_y; }
};

CanvasTransform canvas_transform(int height, int width, int target = kCanvasSize);

struct ResizedCanvas {
  Image image;
  KeypointSet keypoints;
  CanvasTransform transform;
};

// Scales the longer side to `target` (bilinear) and zero-pads to a square.
ResizedCanvas resize_pad(const Image& image, std::span<const Keypoint> keypoints,
                         int target = kCanvasSize);

// Sets mask[round(y), round(x)] for each point, rounding half up and
// clamping to the canvas.
Mask rasterize_points(std::span<const Keypoint> points, int height, int width);

struct MaskPair {
  Mask keypoint_a;
  Mask keypoint_b;
  Mask match_a;
  Mask match_b;
};

// Keypoint masks come from the endpoints of `all_matches` unless explicit
// detector keypoints are given; match masks come from `verified_matches`,
// which must be a subset of `all_matches` (SubsetViolation otherwise).
MaskPair build_masks(std::span<const Match> all_matches, std::span<const Match> verified_matches,
                     int height, int width, const KeypointSet* keypoints_a = nullptr,
                     const KeypointSet* keypoints_b = nullptr);

struct PairArtifacts {
  Image rgb_a;  // already warped into B's frame
  Image rgb_b;
  MaskPair masks;
  geometry::AffineTransform alignment = geometry::AffineTransform::identity();
  std::string pair_id;
  std::string matcher;
  // Match statistics kept for the count/ratio baselines.
  std::size_t num_matches_all = 0;
  std::size_t num_matches_verified = 0;
  std::size_t num_keypoints_a = 0;
  std::size_t num_keypoints_b = 0;
};

// Which channel groups reach the classifier.
struct InputConfig {
  bool rgb = true;
  bool masks = true;

  int channels() const { return (rgb ? 6 : 0) + (masks ? 4 : 0); }
  friend bool operator==(const InputConfig&, const InputConfig&) = default;
};

inline constexpr int kFullChannels = 10;

// Channel-major stack [rgb_a(3), rgb_b(3), kp_a, kp_b, match_a, match_b],
// reduced per `config`. Throws ShapeMismatch on inconsistent canvases.
std::vector<float> assemble_input(const PairArtifacts& artifacts, InputConfig config = {});

// 8-bit channel-major copy of the full 10-channel stack; what training keeps
// in memory and what the artifact store writes.
struct PackedInput {
  int size = 0;
  std::vector<std::uint8_t> planes;  // 10 * size * size

  friend bool operator==(const PackedInput&, const PackedInput&) = default;
};

PackedInput pack(const PairArtifacts& artifacts);
// Expands the selected channels to floats in [0, 1] at `out`
// (config.channels() * size * size values).
void unpack(const PackedInput& packed, InputConfig config, float* out);

}  // namespace doppel::raster
