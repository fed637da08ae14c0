#pragma once

#include <vector>

namespace doppel {

// Pixel location; x is the column, y the row.
struct Keypoint {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

// Correspondence between a point in image A and a point in image B.
struct Match {
  Keypoint a;
  Keypoint b;
  double score = 1.0;

  friend bool operator==(const Match&, const Match&) = default;
};

using KeypointSet = std::vector<Keypoint>;
using MatchSet = std::vector<Match>;

}  // namespace doppel
