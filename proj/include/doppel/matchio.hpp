#pragma once

// Match-file and pairs-manifest I/O, score filtering and geometric
// verification of putative matches.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "doppel/geometry.hpp"
#include "doppel/types.hpp"

namespace doppel::matchio {

inline constexpr double kDefaultScoreThreshold = 0.8;
inline constexpr int kMatchFileVersion = 1;

enum class Label { kPositive, kNegative, kUnknown };

std::string_view label_name(Label label);
// Accepts "positive"/"negative"/"unknown" (also "1"/"0"). Throws ParseError.
Label parse_label(std::string_view text);

struct PairRecord {
  std::string image_a;
  std::string image_b;
  std::string scene;
  Label label = Label::kUnknown;
  bool flip_applied = false;  // image_b is mirrored horizontally

  // Stable identifier derived from the image paths, e.g. "s01_north_0__s01_south_2".
  std::string pair_id() const;

  friend bool operator==(const PairRecord&, const PairRecord&) = default;
};

// Pairs manifest CSV: image_a,image_b,scene,label,flip_applied
std::vector<PairRecord> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const PairRecord> records);

struct PairMatches {
  std::string name_a;
  std::string name_b;
  KeypointSet keypoints_a;  // empty for detector-free matchers
  KeypointSet keypoints_b;
  MatchSet matches;
};

// DGMATCH text format; see write_pair_matches for the layout.
PairMatches parse_pair_matches(std::istream& in, const std::string& source = "<stream>");
PairMatches load_pair_matches(const std::filesystem::path& path);
void write_pair_matches(std::ostream& out, const PairMatches& pm);
void write_pair_matches(const std::filesystem::path& path, const PairMatches& pm);

struct VerifyParams {
  double score_threshold = kDefaultScoreThreshold;
  double reproj_error = geometry::kDefaultReprojError;
  double confidence = geometry::kDefaultConfidence;
  std::uint64_t seed = 0;
  bool geometric = true;  // false: every score-filtered match counts as verified
};

struct VerifiedMatches {
  MatchSet all;       // score >= threshold
  MatchSet verified;  // epipolar inliers of `all`
};

// Never throws on degenerate geometry: a failed estimate yields no verified
// matches.
VerifiedMatches verify_pair(std::span<const Match> matches, const VerifyParams& params = {});

}  // namespace doppel::matchio
