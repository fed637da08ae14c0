#include "doppel/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>

#include <Eigen/Dense>

#include "doppel/error.hpp"
#include "doppel/geometry.hpp"
#include "doppel/random.hpp"

namespace doppel::synth {
namespace {

using Color = std::array<float, 3>;

constexpr double kFacadeHeight = 0.7;
constexpr double kMatcherRecall = 0.75;
constexpr double kMinRecallScale = 0.1;
constexpr double kConfidentFraction = 0.85;
constexpr double kMinPositiveOverlap = 0.3;
constexpr int kMinNegativeMatches = 12;

struct Detail {
  double u = 0, v = 0, ru = 0, rv = 0;
  Color color{};
  double depth = 0;
  bool box = false;
};

struct Style {
  Color wall{}, window{}, trim{};
  int cols = 7;
  int rows = 2;
  double window_w = 0.5;  // fraction of a column
  double window_h = 0.6;  // fraction of a row
  bool arches = true;
  double door_half_width = 0.08;
  double door_top = 0.5;
  std::uint64_t noise_seed = 0;
  std::vector<std::vector<Detail>> details;  // per side
  std::vector<std::uint64_t> side_noise;     // per side
};

struct Feature {
  double u = 0, v = 0;
};

struct Surface {
  Color color{};
  double depth = 0.0;
};

double hash01(std::int64_t x, std::int64_t y, std::uint64_t seed) {
  const std::uint64_t h = mix_seed(seed, static_cast<std::uint64_t>(x) * 0x1f1f1f1fULL ^
                                             (static_cast<std::uint64_t>(y) << 32));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double value_noise(double u, double v, double cells, std::uint64_t seed) {
  const double x = u * cells;
  const double y = v * cells;
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx);
  const auto iy = static_cast<std::int64_t>(fy);
  double tx = x - fx, ty = y - fy;
  tx = tx * tx * (3 - 2 * tx);
  ty = ty * ty * (3 - 2 * ty);
  const double a = hash01(ix, iy, seed), b = hash01(ix + 1, iy, seed);
  const double c = hash01(ix, iy + 1, seed), d = hash01(ix + 1, iy + 1, seed);
  return (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
}

Color scaled(const Color& c, double s) {
  return {static_cast<float>(c[0] * s), static_cast<float>(c[1] * s), static_cast<float>(c[2] * s)};
}

Color random_wall(Rng& rng) {
  const double base = rng.uniform(0.45, 0.8);
  Color c;
  for (float& ch : c) ch = static_cast<float>(std::clamp(base + rng.uniform(-0.12, 0.12), 0.0, 1.0));
  return c;
}

// Whether blob d covers facade point (u, v); r2 is the normalized radius.
bool covers(const Detail& d, double u, double v, double* r2) {
  const double nu = (u - d.u) / d.ru;
  const double nv = (v - d.v) / d.rv;
  *r2 = d.box ? std::max(nu * nu, nv * nv) : nu * nu + nv * nv;
  return *r2 < 1.0;
}

bool occluded(const std::vector<Detail>& transients, double u, double v) {
  double r2 = 0.0;
  return std::any_of(transients.begin(), transients.end(),
                     [&](const Detail& d) { return covers(d, u, v, &r2); });
}

// Facade appearance and relief at facade coordinates (u right, v down).
Surface facade_surface(const Style& st, double split, double u, double v, int side) {
  Surface s;
  const bool upper = v < split;
  // The facade is mirror-symmetric in layout and coarse texture. Below the
  // split each side has its own fine texture: visible to a full-resolution
  // matcher, barely resolved in a downsampled view.
  const double us = std::min(u, 1.0 - u);
  const double fine = upper ? value_noise(us, v, 140.0, st.noise_seed + 1)
                            : value_noise(u, v, 140.0, st.side_noise[static_cast<std::size_t>(side)]);
  const double grain = 0.65 * value_noise(us, v, 48.0, st.noise_seed) + 0.35 * fine;
  s.color = scaled(st.wall, 0.86 + 0.28 * grain);

  if (std::abs(v - split) < 0.012 || v < 0.02) {
    s.color = scaled(st.trim, 0.9 + 0.2 * grain);
    s.depth = -0.03;
    return s;
  }
  if (upper) {
    const double row_h = (split - 0.04) / st.rows;
    const int col = std::clamp(static_cast<int>(u * st.cols), 0, st.cols - 1);
    const int row = std::clamp(static_cast<int>((v - 0.03) / row_h), 0, st.rows - 1);
    const double cu = (col + 0.5) / st.cols;
    const double cv = 0.03 + (row + 0.5) * row_h;
    const double hw = 0.5 * st.window_w / st.cols;
    const double hh = 0.5 * st.window_h * row_h;
    const double du = u - cu, dv = v - cv;
    bool inside = std::abs(du) < hw && std::abs(dv) < hh;
    if (st.arches && dv < -hh + hw) {
      // Rounded top: a half disc of radius hw sitting on the rectangle.
      const double ay = dv - (-hh + hw);
      inside = du * du + ay * ay < hw * hw;
    }
    const bool frame = !inside && std::abs(du) < hw * 1.25 && std::abs(dv) < hh + hw * 0.25;
    if (inside) {
      s.color = scaled(st.window, 0.8 + 0.4 * grain);
      s.depth = 0.04;
    } else if (frame) {
      s.color = scaled(st.trim, 0.95 + 0.1 * grain);
      s.depth = -0.01;
    } else {
      // Small ornaments between windows.
      const double ou = u * st.cols - std::floor(u * st.cols);
      const double ov = (v - cv) / row_h;
      if (std::min(ou, 1.0 - ou) < 0.08 && std::abs(ov) < 0.08) {
        s.color = scaled(st.trim, 0.7);
        s.depth = -0.015;
      }
    }
    return s;
  }

  // Lower facade: a doorway shared by all sides plus per-side details.
  if (std::abs(u - 0.5) < st.door_half_width && v > st.door_top) {
    s.color = scaled(st.window, 0.6 + 0.3 * grain);
    s.depth = 0.05;
    return s;
  }
  for (const Detail& d : st.details[static_cast<std::size_t>(side)]) {
    double r2 = 0.0;
    if (covers(d, u, v, &r2)) {
      const double shade = d.box ? 1.0 : 0.75 + 0.25 * std::sqrt(1.0 - r2);
      s.color = scaled(d.color, shade * (0.9 + 0.2 * grain));
      s.depth = -d.depth * (1.0 - r2);
      return s;
    }
  }
  if (v > kFacadeHeight - 0.03) {
    s.color = scaled(st.trim, 0.8);
    s.depth = -0.02;
  }
  return s;
}

Eigen::Vector3d facade_point(const Style& st, double split, double u, double v, int side) {
  return {u - 0.5, v - kFacadeHeight / 2.0, facade_surface(st, split, u, v, side).depth};
}

PinholeCamera random_camera(Rng& rng, int width, int height) {
  PinholeCamera cam;
  cam.width = width;
  cam.height = height;
  const double dist = rng.uniform(1.3, 2.2);
  cam.center = {rng.uniform(-0.35, 0.35), rng.uniform(-0.15, 0.1), -dist};
  const Eigen::Vector3d target(rng.uniform(-0.15, 0.15), rng.uniform(-0.08, 0.08), 0.0);
  const Eigen::Vector3d fwd = (target - cam.center).normalized();
  Eigen::Vector3d right = Eigen::Vector3d(0, 1, 0).cross(fwd).normalized();
  Eigen::Vector3d down = fwd.cross(right);
  const double roll = rng.uniform(-0.06, 0.06);
  const Eigen::Vector3d r2 = std::cos(roll) * right + std::sin(roll) * down;
  const Eigen::Vector3d d2 = -std::sin(roll) * right + std::cos(roll) * down;
  cam.R.row(0) = r2.transpose();
  cam.R.row(1) = d2.transpose();
  cam.R.row(2) = fwd.transpose();
  const double zoom = rng.uniform(0.75, 1.35);
  const double f = zoom * width * dist / 1.2;
  cam.K << f, 0, width / 2.0, 0, f, height / 2.0, 0, 0, 1;
  return cam;
}

// Facade coordinates seen through pixel p (ray hits the z = 0 plane).
bool pixel_to_facade(const PinholeCamera& cam, double px, double py, double* u, double* v) {
  const Eigen::Vector3d ray = cam.R.transpose() * (cam.K.inverse() * Eigen::Vector3d(px, py, 1.0));
  if (std::abs(ray.z()) < 1e-12) return false;
  const double s = -cam.center.z() / ray.z();
  if (s <= 0) return false;
  const Eigen::Vector3d X = cam.center + s * ray;
  *u = X.x() + 0.5;
  *v = X.y() + kFacadeHeight / 2.0;
  return true;
}

Image render(const Style& st, double split, const PinholeCamera& cam, int side,
             const std::vector<Detail>& transients, Rng& rng, std::uint64_t bg_seed) {
  Image img(cam.height, cam.width, 3);
  const double gain = rng.uniform(0.78, 1.22);
  // Uneven illumination: a linear ramp across the frame.
  const double ramp_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double ramp = rng.uniform(0.0, 0.25);
  const double ramp_x = std::cos(ramp_angle) * ramp / cam.width;
  const double ramp_y = std::sin(ramp_angle) * ramp / cam.height;
  const double bias = rng.uniform(-0.06, 0.06);
  Color cast;
  for (float& c : cast) c = static_cast<float>(rng.uniform(0.92, 1.08));
  const double sigma = rng.uniform(0.01, 0.03);
  const Eigen::Matrix3d Kinv = cam.K.inverse();
  const Eigen::Matrix3d Rt = cam.R.transpose();
  for (int r = 0; r < cam.height; ++r) {
    for (int c = 0; c < cam.width; ++c) {
      const Eigen::Vector3d ray = Rt * (Kinv * Eigen::Vector3d(c, r, 1.0));
      Color col{0.5f, 0.5f, 0.5f};
      const double s = std::abs(ray.z()) > 1e-12 ? -cam.center.z() / ray.z() : -1.0;
      const double u = cam.center.x() + s * ray.x() + 0.5;
      const double v = cam.center.y() + s * ray.y() + kFacadeHeight / 2.0;
      double r2 = 0.0;
      const auto transient = std::find_if(transients.begin(), transients.end(),
                                          [&](const Detail& d) { return covers(d, u, v, &r2); });
      if (s > 0 && transient != transients.end()) {
        col = scaled(transient->color, transient->box ? 1.0 : 0.8 + 0.2 * std::sqrt(1.0 - r2));
      } else if (s > 0 && u >= 0 && u <= 1 && v >= 0 && v <= kFacadeHeight) {
        col = facade_surface(st, split, u, v, side).color;
      } else if (s > 0 && v < 0) {
        const double t = std::clamp(-v * 1.5, 0.0, 1.0);
        col = {static_cast<float>(0.62 + 0.1 * t), static_cast<float>(0.72 + 0.08 * t), 0.88f};
      } else {
        const double g = 0.35 + 0.2 * value_noise(u, v, 20.0, bg_seed);
        col = {static_cast<float>(g), static_cast<float>(g * 0.97), static_cast<float>(g * 0.92)};
      }
      for (int ch = 0; ch < 3; ++ch) {
        const double light = gain * (1.0 + ramp_x * (c - cam.width / 2.0) + ramp_y * (r - cam.height / 2.0));
        const double val = light * col[ch] * cast[ch] + bias + sigma * rng.normal();
        img.at(r, c, ch) = static_cast<float>(std::clamp(val, 0.0, 1.0));
      }
    }
  }
  return img;
}

std::vector<std::string> directions_for(Symmetry s) {
  switch (s) {
    case Symmetry::kTwoWay: return {"north", "south"};
    case Symmetry::kFourWay: return {"north", "east", "south", "west"};
    case Symmetry::kReplica: return {"left", "right"};
  }
  return {};
}

int opposite_side(Symmetry s, int side) {
  if (s == Symmetry::kFourWay) return (side + 2) % 4;
  return 1 - side;
}

double mapped_u(Symmetry s, double u) { return s == Symmetry::kTwoWay ? 1.0 - u : u; }

Keypoint jitter(const Keypoint& p, double noise, Rng& rng) {
  if (noise <= 0.0) return p;
  return {p.x + noise * rng.normal(), p.y + noise * rng.normal()};
}

double matcher_score(Rng& rng) {
  return rng.bernoulli(kConfidentFraction) ? rng.uniform(0.8, 1.0) : rng.uniform(0.3, 0.8);
}

}  // namespace

std::string_view symmetry_name(Symmetry s) {
  switch (s) {
    case Symmetry::kTwoWay: return "two-way";
    case Symmetry::kFourWay: return "four-way";
    case Symmetry::kReplica: return "replica";
  }
  return "two-way";
}

Symmetry parse_symmetry(std::string_view text) {
  if (text == "two-way") return Symmetry::kTwoWay;
  if (text == "four-way") return Symmetry::kFourWay;
  if (text == "replica") return Symmetry::kReplica;
  throw Error(ErrorCode::kInvalidParams, "unknown symmetry '" + std::string(text) + "'");
}

bool PinholeCamera::project(const Eigen::Vector3d& X, Keypoint* out) const {
  const Eigen::Vector3d xc = R * (X - center);
  if (xc.z() <= 1e-9) return false;
  const Eigen::Vector3d p = K * xc;
  const double x = p.x() / p.z();
  const double y = p.y() / p.z();
  if (!(x >= 0.0 && y >= 0.0 && x <= width - 1 && y <= height - 1)) return false;
  *out = {x, y};
  return true;
}

bool in_repeated_region(const SyntheticScene& scene, const SynthImage& image, const Keypoint& p) {
  double u = 0, v = 0;
  if (!pixel_to_facade(image.camera, p.x, p.y, &u, &v)) return false;
  return u >= 0.0 && u <= 1.0 && v >= 0.0 && v < scene.repeated_split;
}

SyntheticScene synth_scene(std::uint64_t seed, const SynthParams& params, const std::string& name) {
  if (params.views_per_side < 2 || params.image_width < 16 || params.image_height < 16 ||
      params.detail_density < 0.0 || params.noise < 0.0 || params.match_density <= 0.0 ||
      params.flip_fraction < 0.0 || params.flip_fraction > 1.0) {
    throw Error(ErrorCode::kInvalidParams, "invalid synthetic scene parameters");
  }
  SyntheticScene scene;
  scene.seed = seed;
  scene.name = name;
  scene.symmetry = params.symmetry;
  scene.facade_height = kFacadeHeight;

  Rng rng(mix_seed(seed, 1));
  const std::vector<std::string> dirs = directions_for(params.symmetry);
  const int sides = static_cast<int>(dirs.size());
  scene.repeated_split = kFacadeHeight * rng.uniform(0.42, 0.6);
  const double split = scene.repeated_split;

  Style st;
  st.wall = random_wall(rng);
  st.trim = scaled(st.wall, rng.uniform(1.05, 1.25));
  for (float& c : st.trim) c = std::min(c, 1.0f);
  st.window = scaled(st.wall, rng.uniform(0.2, 0.4));
  st.cols = 5 + 2 * rng.uniform_int(0, 2);
  st.rows = rng.uniform_int(2, 3);
  st.window_w = rng.uniform(0.4, 0.65);
  st.window_h = rng.uniform(0.5, 0.75);
  st.arches = rng.bernoulli(0.6);
  st.door_half_width = rng.uniform(0.05, 0.09);
  st.door_top = split + (kFacadeHeight - split) * rng.uniform(0.35, 0.6);
  st.noise_seed = mix_seed(seed, 2);
  const double lower_h = kFacadeHeight - split;
  auto lower_v = [&](Rng& r) { return split + 0.03 + r.uniform(0.0, 1.0) * (lower_h - 0.07); };
  // Lower-facade ornaments shared by every side, placed in mirrored pairs.
  std::vector<Detail> shared;
  const int count = static_cast<int>(std::lround(rng.uniform(2, 4) * params.detail_density));
  for (int k = 0; k < count; ++k) {
    Detail d;
    d.u = rng.uniform(0.06, 0.4);
    d.v = lower_v(rng);
    d.ru = rng.uniform(0.02, 0.05);
    d.rv = rng.uniform(0.02, 0.05);
    d.box = rng.bernoulli(0.35);
    d.depth = rng.uniform(0.02, 0.06);
    d.color = scaled(st.wall, rng.uniform(0.55, 0.85));
    shared.push_back(d);
    d.u = 1.0 - d.u;
    shared.push_back(d);
  }
  // What tells the sides apart: fine texture and a few small, faint marks.
  for (int s = 0; s < sides; ++s) {
    st.side_noise.push_back(mix_seed(seed, 100 + static_cast<std::uint64_t>(s)));
    std::vector<Detail> details = shared;
    const int marks = static_cast<int>(std::lround(rng.uniform(1, 2) * params.detail_density));
    for (int k = 0; k < marks; ++k) {
      Detail d;
      d.u = rng.uniform(0.06, 0.94);
      d.v = lower_v(rng);
      d.ru = rng.uniform(0.012, 0.025);
      d.rv = rng.uniform(0.012, 0.025);
      d.box = rng.bernoulli(0.5);
      d.depth = rng.uniform(0.005, 0.015);
      d.color = scaled(st.wall, rng.bernoulli(0.5) ? rng.uniform(0.82, 0.92) : rng.uniform(1.08, 1.18));
      details.insert(details.begin(), d);  // marks sit on top of the ornaments
    }
    st.details.push_back(std::move(details));
  }

  // Simulated-matcher feature sites on the facade.
  const double density = params.match_density * rng.uniform(0.5, 1.5);
  const double lower_weight = rng.uniform(0.7, 1.2);
  std::vector<Feature> upper_sites;
  const int n_upper = static_cast<int>(std::lround(900.0 * density * split / kFacadeHeight));
  for (int i = 0; i < n_upper; ++i) upper_sites.push_back({rng.uniform(), rng.uniform(0.0, split)});
  std::vector<std::vector<Feature>> lower_sites(static_cast<std::size_t>(sides));
  const int n_lower =
      static_cast<int>(std::lround(900.0 * density * lower_weight * lower_h / kFacadeHeight));
  for (auto& sites : lower_sites) {
    for (int i = 0; i < n_lower; ++i) sites.push_back({rng.uniform(), rng.uniform(split, kFacadeHeight)});
  }

  // Images. Each view has its own transient occluders in front of the lower
  // facade (people, vehicles, plants); they hide features from the matcher.
  std::vector<std::vector<Detail>> transients;
  for (int s = 0; s < sides; ++s) {
    for (int k = 0; k < params.views_per_side; ++k) {
      SynthImage im;
      im.id = name + "_" + dirs[static_cast<std::size_t>(s)] + "_" + std::to_string(k);
      im.direction = dirs[static_cast<std::size_t>(s)];
      im.side = s;
      Rng cam_rng(mix_seed(seed, 1000 + static_cast<std::uint64_t>(s * 100 + k)));
      im.camera = random_camera(cam_rng, params.image_width, params.image_height);
      Rng occ_rng(mix_seed(seed, 5000 + static_cast<std::uint64_t>(s * 100 + k)));
      std::vector<Detail> occluders(static_cast<std::size_t>(occ_rng.uniform_int(2, 7)));
      for (Detail& d : occluders) {
        d.u = occ_rng.uniform(0.0, 1.0);
        d.ru = occ_rng.uniform(0.015, 0.05);
        d.rv = occ_rng.uniform(0.03, 0.09);
        d.v = kFacadeHeight + 0.02 - d.rv * occ_rng.uniform(0.6, 2.0);
        d.box = occ_rng.bernoulli(0.4);
        for (float& c : d.color) c = static_cast<float>(occ_rng.uniform(0.1, 0.9));
      }
      im.image = render(st, split, im.camera, s, occluders, cam_rng, mix_seed(seed, 3));
      transients.push_back(std::move(occluders));
      scene.images.push_back(std::move(im));
    }
  }

  auto project_site = [&](const SynthImage& im, double u, double v, int side, Keypoint* out) {
    return im.camera.project(facade_point(st, split, u, v, side), out);
  };
  auto random_pixel = [&](Rng& r, const SynthImage& im) {
    return Keypoint{r.uniform(0.0, im.camera.width - 1), r.uniform(0.0, im.camera.height - 1)};
  };
  // A spurious correspondence between lower-facade sites of two sides.
  auto spurious_end = [&](Rng& r, const SynthImage& im, int side) {
    const auto& sites = lower_sites[static_cast<std::size_t>(side)];
    for (int attempt = 0; attempt < 20; ++attempt) {
      const Feature& f = sites[r.below(sites.size())];
      Keypoint p;
      if (project_site(im, f.u, f.v, side, &p)) return p;
    }
    return random_pixel(r, im);
  };

  auto make_pair = [&](int ia, int ib, bool negative, bool flip, std::uint64_t salt) {
    const SynthImage& A = scene.images[static_cast<std::size_t>(ia)];
    const SynthImage& B = scene.images[static_cast<std::size_t>(ib)];
    Rng r(mix_seed(seed, salt));
    SynthPair pair;
    pair.image_a = ia;
    pair.image_b = ib;
    pair.flipped = flip;
    pair.label = (negative || flip) ? matchio::Label::kNegative : matchio::Label::kPositive;

    auto add = [&](const Keypoint& a, const Keypoint& b, double score, bool truth, bool upper) {
      pair.matches.push_back({a, b, score});
      pair.is_true.push_back(truth);
      pair.in_repeated.push_back(upper);
    };
    auto b_point = [&](const Keypoint& p) {
      return flip ? geometry::flip_keypoint(p, B.camera.width) : p;
    };

    // Per-pair matcher recall: lighting, blur and viewpoint make the number
    // of matches vary widely between pairs of either class.
    const double recall = kMatcherRecall * std::exp(r.uniform(std::log(kMinRecallScale), 0.0));
    std::size_t visible_a = 0, covisible = 0, n_true = 0;
    const auto& occ_a = transients[static_cast<std::size_t>(ia)];
    const auto& occ_b = transients[static_cast<std::size_t>(ib)];
    auto try_site = [&](const Feature& f, int side_a, int side_b, double ub, bool upper) {
      Keypoint pa, pb;
      if (!project_site(A, f.u, f.v, side_a, &pa) || occluded(occ_a, f.u, f.v)) return;
      ++visible_a;
      if (!project_site(B, ub, f.v, side_b, &pb) || occluded(occ_b, ub, f.v)) return;
      ++covisible;
      if (!r.bernoulli(recall)) return;
      add(jitter(pa, params.noise, r), jitter(b_point(pb), params.noise, r), matcher_score(r), true,
          upper);
      ++n_true;
    };

    if (!negative && !flip) {
      for (const Feature& f : upper_sites) try_site(f, A.side, B.side, f.u, true);
      for (const Feature& f : lower_sites[static_cast<std::size_t>(A.side)]) {
        try_site(f, A.side, B.side, f.u, false);
      }
      pair.overlap = visible_a ? static_cast<double>(covisible) / visible_a : 0.0;
      if (pair.overlap < kMinPositiveOverlap) return std::optional<SynthPair>{};
      const int n_out = static_cast<int>(std::lround(r.uniform(0.05, 0.3) * n_true));
      for (int i = 0; i < n_out; ++i) {
        const Keypoint a = random_pixel(r, A);
        add(a, random_pixel(r, B), r.uniform(0.5, 1.0), false, in_repeated_region(scene, A, a));
      }
    } else {
      // Only the shared repeated structure produces consistent matches. A
      // flipped view of the same side sees the structure mirrored.
      const Symmetry sym = flip ? Symmetry::kTwoWay : params.symmetry;
      for (const Feature& f : upper_sites) try_site(f, A.side, B.side, mapped_u(sym, f.u), true);
      std::size_t visible_lower = 0;
      for (const Feature& f : lower_sites[static_cast<std::size_t>(A.side)]) {
        Keypoint p;
        if (project_site(A, f.u, f.v, A.side, &p)) ++visible_lower;
      }
      pair.overlap = (visible_a + visible_lower) ? static_cast<double>(covisible) /
                                                       static_cast<double>(visible_a + visible_lower)
                                                 : 0.0;
      if (n_true < static_cast<std::size_t>(kMinNegativeMatches)) return std::optional<SynthPair>{};
      const int n_sp = static_cast<int>(std::lround(r.uniform(0.02, 0.08) * n_true));
      for (int i = 0; i < n_sp; ++i) {
        const Keypoint a = spurious_end(r, A, A.side);
        const Keypoint b = b_point(spurious_end(r, B, B.side));
        add(a, b, r.uniform(0.5, 1.0), false, in_repeated_region(scene, A, a));
      }
    }
    return std::optional<SynthPair>{std::move(pair)};
  };

  const int V = params.views_per_side;
  std::uint64_t salt = 10000;
  Rng flip_rng(mix_seed(seed, 4));
  for (int s = 0; s < sides; ++s) {
    for (int i = 0; i < V; ++i) {
      for (int j = i + 1; j < V; ++j) {
        const int ia = s * V + i, ib = s * V + j;
        if (auto p = make_pair(ia, ib, false, false, salt++)) scene.pairs.push_back(std::move(*p));
        if (flip_rng.bernoulli(params.flip_fraction)) {
          if (auto p = make_pair(ia, ib, false, true, salt)) scene.pairs.push_back(std::move(*p));
        }
        ++salt;
      }
    }
  }
  for (int s = 0; s < sides; ++s) {
    const int t = opposite_side(params.symmetry, s);
    if (t < s) continue;
    for (int i = 0; i < V; ++i) {
      for (int j = 0; j < V; ++j) {
        if (auto p = make_pair(s * V + i, t * V + j, true, false, salt++)) {
          scene.pairs.push_back(std::move(*p));
        }
      }
    }
  }
  return scene;
}

matchio::PairMatches detector_style_matches(const SyntheticScene& scene, const SynthPair& pair,
                                            std::uint64_t seed) {
  constexpr double kKeep = 0.35;
  constexpr double kExtraNoise = 1.0;
  constexpr double kEndpointDetections = 0.6;
  constexpr double kUnmatchedDetections = 0.4;
  const SynthImage& A = scene.images.at(static_cast<std::size_t>(pair.image_a));
  const SynthImage& B = scene.images.at(static_cast<std::size_t>(pair.image_b));
  Rng rng(mix_seed(seed, 0xd37ec7));
  matchio::PairMatches out;
  out.name_a = A.id;
  out.name_b = B.id;
  auto clamp_to = [](const Keypoint& p, const SynthImage& im) {
    return Keypoint{std::clamp(p.x, 0.0, im.camera.width - 1.0),
                    std::clamp(p.y, 0.0, im.camera.height - 1.0)};
  };
  for (const Match& m : pair.matches) {
    if (rng.bernoulli(kKeep)) {
      const Keypoint a = clamp_to(jitter(m.a, kExtraNoise, rng), A);
      const Keypoint b = clamp_to(jitter(m.b, kExtraNoise, rng), B);
      out.matches.push_back({a, b, 1.0});
      out.keypoints_a.push_back(a);
      out.keypoints_b.push_back(b);
    } else {
      if (rng.bernoulli(kEndpointDetections)) out.keypoints_a.push_back(m.a);
      if (rng.bernoulli(kEndpointDetections)) out.keypoints_b.push_back(m.b);
    }
  }
  const auto extra = static_cast<std::size_t>(kUnmatchedDetections * static_cast<double>(pair.matches.size()));
  for (std::size_t i = 0; i < extra; ++i) {
    out.keypoints_a.push_back({rng.uniform(0.0, A.camera.width - 1.0), rng.uniform(0.0, A.camera.height - 1.0)});
    out.keypoints_b.push_back({rng.uniform(0.0, B.camera.width - 1.0), rng.uniform(0.0, B.camera.height - 1.0)});
  }
  return out;
}

}  // namespace doppel::synth
