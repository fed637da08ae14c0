#pragma once

// Procedural doppelganger scenes: a landmark whose sides share a large
// repeated structure (upper facade) but differ in small details (lower
// facade). A simulated matcher emits correspondences from the known
// cameras, so every pair comes with ground-truth labels and regions.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "doppel/image.hpp"
#include "doppel/matchio.hpp"
#include "doppel/types.hpp"

namespace doppel::synth {

enum class Symmetry {
  kTwoWay,   // two opposite sides, structure mirrored (u -> 1-u)
  kFourWay,  // four sides sharing the structure
  kReplica,  // two sides with an identical copy of the structure
};

std::string_view symmetry_name(Symmetry s);
Symmetry parse_symmetry(std::string_view text);

struct SynthParams {
  Symmetry symmetry = Symmetry::kTwoWay;
  int views_per_side = 6;
  int image_width = 400;
  int image_height = 300;
  double detail_density = 1.0;  // scales the number of lower-facade details
  double noise = 0.5;           // match localization noise, pixels (std-dev)
  double match_density = 1.0;   // scales the simulated matcher's output
  double flip_fraction = 0.0;   // fraction of positive pairs also emitted flipped
};

struct PinholeCamera {
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  int width = 0;
  int height = 0;

  // Projects a world point; false when behind the camera or off-image.
  bool project(const Eigen::Vector3d& X, Keypoint* out) const;
};

struct SynthImage {
  std::string id;         // e.g. "s03_north_2"
  std::string direction;  // catalog direction tag
  int side = 0;
  PinholeCamera camera;
  Image image;
};

struct SynthPair {
  int image_a = 0;
  int image_b = 0;
  matchio::Label label = matchio::Label::kUnknown;
  bool flipped = false;  // image_b mirrored; matches are in mirrored coordinates
  MatchSet matches;      // simulated matcher output, original pixel coordinates
  std::vector<bool> is_true;      // per match: a genuine surface correspondence
  std::vector<bool> in_repeated;  // per match: A endpoint on the repeated structure
  double overlap = 0.0;           // co-visible fraction of A's visible surface
};

struct SyntheticScene {
  std::uint64_t seed = 0;
  std::string name;
  Symmetry symmetry = Symmetry::kTwoWay;
  double facade_height = 0.7;
  double repeated_split = 0.35;  // facade rows v < split are repeated structure
  std::vector<SynthImage> images;
  std::vector<SynthPair> pairs;
};

// Deterministic in (seed, params, name). Throws InvalidParams.
SyntheticScene synth_scene(std::uint64_t seed, const SynthParams& params,
                           const std::string& name = "scene");

// Output of a sparser, noisier detector-based matcher for the same pair:
// a random subset of the pair's matches re-localized with extra noise, plus
// explicit detector keypoints per image (kept match endpoints, a share of
// the other endpoints and unmatched detections). Deterministic in `seed`.
matchio::PairMatches detector_style_matches(const SyntheticScene& scene, const SynthPair& pair,
                                            std::uint64_t seed);

// Pixel of `image` lying on the repeated structure (upper facade).
bool in_repeated_region(const SyntheticScene& scene, const SynthImage& image, const Keypoint& p);

}  // namespace doppel::synth
