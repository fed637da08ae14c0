#include "doppel/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <tuple>

#include <Eigen/Dense>

#include "doppel/error.hpp"
#include "doppel/random.hpp"

namespace doppel::geometry {
namespace {

constexpr double kRankTolerance = 1e-10;

// Hartley normalization: centroid to the origin, mean distance sqrt(2).
struct Normalizer {
  Eigen::Matrix3d T = Eigen::Matrix3d::Identity();
  bool ok = false;
};

template <typename Get>
Normalizer normalizer_for(std::size_t n, Get get) {
  Normalizer out;
  double cx = 0.0, cy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Keypoint& p = get(i);
    cx += p.x;
    cy += p.y;
  }
  cx /= static_cast<double>(n);
  cy /= static_cast<double>(n);
  double mean_dist = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Keypoint& p = get(i);
    mean_dist += std::hypot(p.x - cx, p.y - cy);
  }
  mean_dist /= static_cast<double>(n);
  if (!(mean_dist > 1e-12) || !std::isfinite(mean_dist)) return out;
  const double s = std::sqrt(2.0) / mean_dist;
  out.T << s, 0, -s * cx, 0, s, -s * cy, 0, 0, 1;
  out.ok = true;
  return out;
}

std::optional<Eigen::Matrix3d> try_fit_fundamental(std::span<const Match> matches,
                                                   std::span<const std::size_t> idx) {
  const std::size_t n = idx.size();
  const Normalizer na = normalizer_for(n, [&](std::size_t i) -> const Keypoint& {
    return matches[idx[i]].a;
  });
  const Normalizer nb = normalizer_for(n, [&](std::size_t i) -> const Keypoint& {
    return matches[idx[i]].b;
  });
  if (!na.ok || !nb.ok) return std::nullopt;

  Eigen::Matrix<double, Eigen::Dynamic, 9> design(static_cast<Eigen::Index>(n), 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Match& m = matches[idx[i]];
    const Eigen::Vector3d a = na.T * Eigen::Vector3d(m.a.x, m.a.y, 1.0);
    const Eigen::Vector3d b = nb.T * Eigen::Vector3d(m.b.x, m.b.y, 1.0);
    design.row(static_cast<Eigen::Index>(i)) << b.x() * a.x(), b.x() * a.y(), b.x(),
        b.y() * a.x(), b.y() * a.y(), b.y(), a.x(), a.y(), 1.0;
  }
  Eigen::JacobiSVD<Eigen::Matrix<double, Eigen::Dynamic, 9>> svd(design, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv.size() < 8 || sv(0) <= 0.0 || sv(7) / sv(0) < kRankTolerance) return std::nullopt;

  const Eigen::Matrix<double, 9, 1> f = svd.matrixV().col(8);
  Eigen::Matrix3d Fn;
  Fn << f(0), f(1), f(2), f(3), f(4), f(5), f(6), f(7), f(8);

  Eigen::JacobiSVD<Eigen::Matrix3d> fsvd(Fn, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d s = fsvd.singularValues();
  s(2) = 0.0;
  Fn = fsvd.matrixU() * s.asDiagonal() * fsvd.matrixV().transpose();

  Eigen::Matrix3d F = nb.T.transpose() * Fn * na.T;
  const double norm = F.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) return std::nullopt;
  return F / norm;
}

double squared_symmetric_distance(const Eigen::Matrix3d& F, const Keypoint& a,
                                  const Keypoint& b) {
  const Eigen::Vector3d xa(a.x, a.y, 1.0);
  const Eigen::Vector3d xb(b.x, b.y, 1.0);
  const Eigen::Vector3d la = F * xa;
  const Eigen::Vector3d lb = F.transpose() * xb;
  const double r = xb.dot(la);
  const double da = la.x() * la.x() + la.y() * la.y();
  const double db = lb.x() * lb.x() + lb.y() * lb.y();
  if (da <= 0.0 || db <= 0.0) return std::numeric_limits<double>::infinity();
  return r * r / da + r * r / db;
}

// Order-independent processing order: sort by coordinates so that any
// permutation of the input produces the same sampling sequence.
std::vector<std::size_t> canonical_order(std::span<const Match> matches) {
  std::vector<std::size_t> order(matches.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    const Match& p = matches[i];
    const Match& q = matches[j];
    return std::tie(p.a.x, p.a.y, p.b.x, p.b.y, p.score) <
           std::tie(q.a.x, q.a.y, q.b.x, q.b.y, q.score);
  });
  return order;
}

void draw_sample(Rng& rng, std::vector<std::size_t>& pool, std::size_t k,
                 std::vector<std::size_t>& out) {
  out.clear();
  const std::size_t n = pool.size();
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(pool[i], pool[j]);
    out.push_back(pool[i]);
  }
}

int adaptive_iterations(double inlier_ratio, int sample_size, double confidence, int cap) {
  const double p_good = std::pow(std::clamp(inlier_ratio, 0.0, 1.0), sample_size);
  if (p_good >= 1.0 - 1e-12) return 1;
  if (p_good <= 0.0) return cap;
  const double needed = std::log(1.0 - confidence) / std::log(1.0 - p_good);
  if (!std::isfinite(needed) || needed >= cap) return cap;
  return std::max(1, static_cast<int>(std::ceil(needed)));
}

std::optional<AffineTransform> affine_from_three(std::span<const Match> matches,
                                                 std::span<const std::size_t> idx) {
  const Keypoint& p0 = matches[idx[0]].a;
  const Keypoint& p1 = matches[idx[1]].a;
  const Keypoint& p2 = matches[idx[2]].a;
  const double area = (p1.x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (p1.y - p0.y);
  const double extent = std::max({std::abs(p1.x - p0.x), std::abs(p1.y - p0.y),
                                  std::abs(p2.x - p0.x), std::abs(p2.y - p0.y), 1.0});
  if (std::abs(area) < 1e-9 * extent * extent) return std::nullopt;
  Eigen::Matrix3d S;
  Eigen::Matrix<double, 3, 2> D;
  for (int i = 0; i < 3; ++i) {
    const Match& m = matches[idx[i]];
    S.row(i) << m.a.x, m.a.y, 1.0;
    D.row(i) << m.b.x, m.b.y;
  }
  const Eigen::Matrix<double, 3, 2> P = S.partialPivLu().solve(D);
  AffineTransform T;
  T.A << P(0, 0), P(1, 0), P(0, 1), P(1, 1);
  T.t << P(2, 0), P(2, 1);
  if (!T.A.allFinite() || !T.t.allFinite()) return std::nullopt;
  return T;
}

std::optional<AffineTransform> affine_least_squares(std::span<const Match> matches,
                                                    std::span<const std::size_t> idx) {
  const auto n = static_cast<Eigen::Index>(idx.size());
  if (n < 3) return std::nullopt;
  Eigen::MatrixXd S(n, 3);
  Eigen::MatrixXd D(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Match& m = matches[idx[static_cast<std::size_t>(i)]];
    S.row(i) << m.a.x, m.a.y, 1.0;
    D.row(i) << m.b.x, m.b.y;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(S);
  qr.setThreshold(1e-12);
  if (qr.rank() < 3) return std::nullopt;
  const Eigen::MatrixXd P = qr.solve(D);
  AffineTransform T;
  T.A << P(0, 0), P(1, 0), P(0, 1), P(1, 1);
  T.t << P(2, 0), P(2, 1);
  if (!T.A.allFinite() || !T.t.allFinite()) return std::nullopt;
  return T;
}

double affine_residual_sq(const AffineTransform& T, const Match& m) {
  const Keypoint p = T.apply(m.a);
  const double dx = p.x - m.b.x;
  const double dy = p.y - m.b.y;
  return dx * dx + dy * dy;
}

}  // namespace

std::size_t EpipolarModel::num_inliers() const {
  return static_cast<std::size_t>(std::count(inliers.begin(), inliers.end(), true));
}

Keypoint AffineTransform::apply(const Keypoint& p) const {
  const Eigen::Vector2d q = A * Eigen::Vector2d(p.x, p.y) + t;
  return {q.x(), q.y()};
}

AffineTransform AffineTransform::inverse() const {
  const double det = A.determinant();
  if (det == 0.0 || !std::isfinite(det)) {
    throw Error(ErrorCode::kSingularTransform, "affine transform is not invertible");
  }
  AffineTransform inv;
  inv.A = A.inverse();
  inv.t = -inv.A * t;
  return inv;
}

AffineTransform AffineTransform::rescaled(double factor) const {
  AffineTransform out = *this;
  out.t *= factor;
  return out;
}

double symmetric_epipolar_distance(const Eigen::Matrix3d& F, const Keypoint& a,
                                   const Keypoint& b) {
  return std::sqrt(squared_symmetric_distance(F, a, b));
}

Eigen::Matrix3d fit_fundamental_8point(std::span<const Match> matches) {
  if (matches.size() < 8) {
    throw Error(ErrorCode::kTooFewMatches,
                "fundamental fit needs 8 matches, got " + std::to_string(matches.size()));
  }
  std::vector<std::size_t> idx(matches.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto F = try_fit_fundamental(matches, idx);
  if (!F) {
    throw Error(ErrorCode::kDegenerateConfiguration,
                "point configuration does not determine a fundamental matrix");
  }
  return *F;
}

EpipolarModel estimate_fundamental(std::span<const Match> matches, double reproj_error,
                                   double confidence, std::uint64_t seed) {
  constexpr std::size_t kSample = 8;
  const std::size_t n = matches.size();
  if (n < kSample) {
    throw Error(ErrorCode::kTooFewMatches,
                "fundamental estimation needs 8 matches, got " + std::to_string(n));
  }
  if (!(reproj_error > 0.0) || !(confidence > 0.0 && confidence < 1.0)) {
    throw Error(ErrorCode::kInvalidParams, "reprojection error must be > 0, confidence in (0,1)");
  }

  const std::vector<std::size_t> order = canonical_order(matches);
  // If the full set is rank-deficient, every subset is too.
  if (!try_fit_fundamental(matches, order)) {
    throw Error(ErrorCode::kDegenerateConfiguration,
                "all minimal samples are rank-deficient");
  }

  const double th2 = reproj_error * reproj_error;
  auto cost_of = [&](const Eigen::Matrix3d& F, std::size_t* inlier_count) {
    double cost = 0.0;
    std::size_t count = 0;
    for (std::size_t i : order) {
      const double d2 = squared_symmetric_distance(F, matches[i].a, matches[i].b);
      if (d2 <= th2) {
        cost += d2;
        ++count;
      } else {
        cost += th2;
      }
    }
    if (inlier_count) *inlier_count = count;
    return cost;
  };

  Rng rng(seed);
  std::vector<std::size_t> pool = order;
  std::vector<std::size_t> sample;
  sample.reserve(kSample);

  std::optional<Eigen::Matrix3d> best;
  double best_cost = std::numeric_limits<double>::infinity();
  int needed = kMaxFundamentalIterations;
  for (int it = 0; it < needed && it < kMaxFundamentalIterations; ++it) {
    draw_sample(rng, pool, kSample, sample);
    auto F = try_fit_fundamental(matches, sample);
    if (!F) continue;
    std::size_t count = 0;
    const double cost = cost_of(*F, &count);
    if (cost < best_cost) {
      best_cost = cost;
      best = F;
      needed = adaptive_iterations(static_cast<double>(count) / static_cast<double>(n),
                                   static_cast<int>(kSample), confidence,
                                   kMaxFundamentalIterations);
    }
  }
  if (!best) {
    throw Error(ErrorCode::kDegenerateConfiguration, "no non-degenerate minimal sample found");
  }

  // Local refinement: refit on the inlier set while the truncated cost drops.
  for (int round = 0; round < 5; ++round) {
    std::vector<std::size_t> inl;
    for (std::size_t i : order) {
      if (squared_symmetric_distance(*best, matches[i].a, matches[i].b) <= th2) inl.push_back(i);
    }
    if (inl.size() < kSample) break;
    auto refit = try_fit_fundamental(matches, inl);
    if (!refit) break;
    const double cost = cost_of(*refit, nullptr);
    if (!(cost < best_cost)) break;
    best_cost = cost;
    best = refit;
  }

  EpipolarModel model;
  model.F = *best;
  model.inliers.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    model.inliers[i] = squared_symmetric_distance(model.F, matches[i].a, matches[i].b) <= th2;
  }
  return model;
}

AffineTransform fit_affine(std::span<const Match> matches) {
  if (matches.size() < 3) {
    throw Error(ErrorCode::kTooFewMatches,
                "affine fit needs 3 matches, got " + std::to_string(matches.size()));
  }
  std::vector<std::size_t> idx(matches.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto T = affine_least_squares(matches, idx);
  if (!T) throw Error(ErrorCode::kFitFailed, "collinear points do not determine an affine map");
  return *T;
}

AffineTransform estimate_affine(std::span<const Match> matches, double inlier_error,
                                std::uint64_t seed) {
  constexpr std::size_t kSample = 3;
  const std::size_t n = matches.size();
  if (n < kSample) {
    throw Error(ErrorCode::kTooFewMatches,
                "affine estimation needs 3 matches, got " + std::to_string(n));
  }
  if (!(inlier_error > 0.0)) {
    throw Error(ErrorCode::kInvalidParams, "inlier error must be positive");
  }
  const std::vector<std::size_t> order = canonical_order(matches);
  const double th2 = inlier_error * inlier_error;
  auto cost_of = [&](const AffineTransform& T, std::size_t* inlier_count) {
    double cost = 0.0;
    std::size_t count = 0;
    for (std::size_t i : order) {
      const double r2 = affine_residual_sq(T, matches[i]);
      if (r2 <= th2) {
        cost += r2;
        ++count;
      } else {
        cost += th2;
      }
    }
    if (inlier_count) *inlier_count = count;
    return cost;
  };

  Rng rng(seed);
  std::vector<std::size_t> pool = order;
  std::vector<std::size_t> sample;
  std::optional<AffineTransform> best;
  std::size_t best_count = 0;
  double best_cost = std::numeric_limits<double>::infinity();
  int needed = kMaxAffineIterations;
  for (int it = 0; it < needed && it < kMaxAffineIterations; ++it) {
    draw_sample(rng, pool, kSample, sample);
    auto T = affine_from_three(matches, sample);
    if (!T) continue;
    std::size_t count = 0;
    const double cost = cost_of(*T, &count);
    if (cost < best_cost) {
      best_cost = cost;
      best_count = count;
      best = T;
      needed = adaptive_iterations(static_cast<double>(count) / static_cast<double>(n),
                                   static_cast<int>(kSample), kDefaultConfidence,
                                   kMaxAffineIterations);
    }
  }
  if (!best || best_count < kSample) {
    throw Error(ErrorCode::kFitFailed, "no affine hypothesis reached 3 inliers");
  }

  // Least-squares refit on inliers; kept only while it lowers the truncated
  // cost, so stray outliers inside the threshold cannot pull an exact fit.
  for (int round = 0; round < 5; ++round) {
    std::vector<std::size_t> inl;
    for (std::size_t i : order) {
      if (affine_residual_sq(*best, matches[i]) <= th2) inl.push_back(i);
    }
    auto refit = affine_least_squares(matches, inl);
    if (!refit) break;
    const double cost = cost_of(*refit, nullptr);
    if (!(cost < best_cost)) break;
    best_cost = cost;
    best = refit;
  }
  return *best;
}

Image warp(const Image& image, const AffineTransform& T, int out_height, int out_width) {
  const AffineTransform inv = T.inverse();
  Image out(out_height, out_width, image.channels);
  const int H = image.height;
  const int W = image.width;
  const int C = image.channels;
  for (int r = 0; r < out_height; ++r) {
    for (int c = 0; c < out_width; ++c) {
      double x = inv.A(0, 0) * c + inv.A(0, 1) * r + inv.t(0);
      double y = inv.A(1, 0) * c + inv.A(1, 1) * r + inv.t(1);
      // Round-off from a fitted near-identity must not drop border pixels.
      constexpr double kEdgeSlack = 1e-6;
      if (!(x >= -kEdgeSlack && y >= -kEdgeSlack && x <= W - 1 + kEdgeSlack &&
            y <= H - 1 + kEdgeSlack)) {
        continue;
      }
      x = std::clamp(x, 0.0, static_cast<double>(W - 1));
      y = std::clamp(y, 0.0, static_cast<double>(H - 1));
      const int x0 = static_cast<int>(std::floor(x));
      const int y0 = static_cast<int>(std::floor(y));
      const int x1 = std::min(x0 + 1, W - 1);
      const int y1 = std::min(y0 + 1, H - 1);
      const float fx = static_cast<float>(x - x0);
      const float fy = static_cast<float>(y - y0);
      for (int ch = 0; ch < C; ++ch) {
        const float top = (1.0f - fx) * image.at(y0, x0, ch) + fx * image.at(y0, x1, ch);
        const float bottom = (1.0f - fx) * image.at(y1, x0, ch) + fx * image.at(y1, x1, ch);
        out.at(r, c, ch) = (1.0f - fy) * top + fy * bottom;
      }
    }
  }
  return out;
}

Mask warp(const Mask& mask, const AffineTransform& T, int out_height, int out_width) {
  const AffineTransform inv = T.inverse();
  Mask out(out_height, out_width);
  for (int r = 0; r < out_height; ++r) {
    for (int c = 0; c < out_width; ++c) {
      const double x = inv.A(0, 0) * c + inv.A(0, 1) * r + inv.t(0);
      const double y = inv.A(1, 0) * c + inv.A(1, 1) * r + inv.t(1);
      const double xr = std::floor(x + 0.5);
      const double yr = std::floor(y + 0.5);
      if (xr < 0.0 || yr < 0.0 || xr > mask.width - 1 || yr > mask.height - 1) continue;
      out.at(r, c) = mask.at(static_cast<int>(yr), static_cast<int>(xr));
    }
  }
  return out;
}

Keypoint flip_keypoint(const Keypoint& p, int width) {
  return {static_cast<double>(width - 1) - p.x, p.y};
}

std::pair<Image, KeypointSet> flip_horizontal(const Image& image,
                                              std::span<const Keypoint> keypoints) {
  Image out(image.height, image.width, image.channels);
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      for (int ch = 0; ch < image.channels; ++ch) {
        out.at(r, image.width - 1 - c, ch) = image.at(r, c, ch);
      }
    }
  }
  KeypointSet flipped;
  flipped.reserve(keypoints.size());
  for (const Keypoint& p : keypoints) flipped.push_back(flip_keypoint(p, image.width));
  return {std::move(out), std::move(flipped)};
}

}  // namespace doppel::geometry
