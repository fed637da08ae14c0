#pragma once

// Robust two-view estimation (fundamental matrix, affine alignment) and the
// canvas warps used to bring an image pair into a common frame.

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "doppel/image.hpp"
#include "doppel/types.hpp"

namespace doppel::geometry {

inline constexpr double kDefaultReprojError = 3.0;
inline constexpr double kDefaultConfidence = 0.99;
inline constexpr double kDefaultAffineInlierError = 20.0;
inline constexpr int kMaxFundamentalIterations = 10000;
inline constexpr int kMaxAffineIterations = 2000;

struct EpipolarModel {
  Eigen::Matrix3d F = Eigen::Matrix3d::Zero();  // rank 2, unit Frobenius norm
  std::vector<bool> inliers;                    // one flag per input match

  std::size_t num_inliers() const;
};

struct AffineTransform {
  Eigen::Matrix2d A = Eigen::Matrix2d::Identity();
  Eigen::Vector2d t = Eigen::Vector2d::Zero();

  static AffineTransform identity() { return {}; }

  Keypoint apply(const Keypoint& p) const;
  double determinant() const { return A.determinant(); }
  // Throws SingularTransform when det(A) == 0.
  AffineTransform inverse() const;
  // Same map expressed on canvases uniformly rescaled by `factor` (origin fixed).
  AffineTransform rescaled(double factor) const;
};

// Symmetric epipolar distance: sqrt(d(x_b, F x_a)^2 + d(x_a, F^T x_b)^2).
double symmetric_epipolar_distance(const Eigen::Matrix3d& F, const Keypoint& a,
                                   const Keypoint& b);

// Normalized 8-point fit over all given matches (least squares when more
// than eight). Returns a rank-2, unit-norm F. Throws DegenerateConfiguration
// when the point configuration does not determine F.
Eigen::Matrix3d fit_fundamental_8point(std::span<const Match> matches);

// RANSAC fundamental-matrix estimation. Inliers are matches whose symmetric
// epipolar distance is within `reproj_error`.
EpipolarModel estimate_fundamental(std::span<const Match> matches,
                                   double reproj_error = kDefaultReprojError,
                                   double confidence = kDefaultConfidence,
                                   std::uint64_t seed = 0);

// Least-squares affine fit mapping each match's A point onto its B point.
AffineTransform fit_affine(std::span<const Match> matches);

// RANSAC affine estimation (A -> B), refit on inliers by least squares.
AffineTransform estimate_affine(std::span<const Match> matches,
                                double inlier_error = kDefaultAffineInlierError,
                                std::uint64_t seed = 0);

// Inverse-mapped resampling. Output pixel q takes the source value at
// T^{-1}(q); samples falling outside the source are zero. RGB canvases are
// interpolated bilinearly, masks by nearest neighbour.
Image warp(const Image& image, const AffineTransform& T, int out_height, int out_width);
Mask warp(const Mask& mask, const AffineTransform& T, int out_height, int out_width);

// Mirrors column c to W-1-c; keypoint x maps to W-1-x.
std::pair<Image, KeypointSet> flip_horizontal(const Image& image,
                                              std::span<const Keypoint> keypoints);
Keypoint flip_keypoint(const Keypoint& p, int width);

}  // namespace doppel::geometry
