#include "doppel/rasterize.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

#include "doppel/error.hpp"

namespace doppel::raster {
namespace {

void check_same_shape(const Mask& m, int h, int w, const char* what) {
  if (m.height != h || m.width != w) {
    throw Error(ErrorCode::kShapeMismatch, std::string(what) + " does not match the canvas size");
  }
}

void check_same_shape(const Image& im, int h, int w, const char* what) {
  if (im.height != h || im.width != w || im.channels != 3) {
    throw Error(ErrorCode::kShapeMismatch, std::string(what) + " does not match the canvas size");
  }
}

std::uint8_t quantize(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

CanvasTransform canvas_transform(int height, int width, int target) {
  if (height <= 0 || width <= 0) {
    throw Error(ErrorCode::kEmptyImage, "image has a zero dimension");
  }
  if (target <= 0) throw Error(ErrorCode::kInvalidParams, "canvas target must be positive");
  CanvasTransform t;
  t.original_height = height;
  t.original_width = width;
  t.target = target;
  t.scale = static_cast<double>(target) / std::max(height, width);
  const int content_w = std::clamp(static_cast<int>(std::lround(width * t.scale)), 1, target);
  const int content_h = std::clamp(static_cast<int>(std::lround(height * t.scale)), 1, target);
  t.pad_x = target - content_w;
  t.pad_y = target - content_h;
  return t;
}

ResizedCanvas resize_pad(const Image& image, std::span<const Keypoint> keypoints, int target) {
  if (image.empty() || image.channels <= 0) {
    throw Error(ErrorCode::kEmptyImage, "image has a zero dimension");
  }
  ResizedCanvas out;
  out.transform = canvas_transform(image.height, image.width, target);
  const CanvasTransform& t = out.transform;
  out.image = Image(target, target, image.channels);

  if (t.scale == 1.0) {
    for (int r = 0; r < image.height; ++r) {
      std::copy_n(&image.data[static_cast<std::size_t>(r) * image.width * image.channels],
                  image.width * image.channels,
                  &out.image.data[static_cast<std::size_t>(r) * target * image.channels]);
    }
  } else {
    // Destination pixel (r, c) samples the source at (r, c) / scale, the
    // same map keypoints follow.
    const int W = image.width;
    const int H = image.height;
    for (int r = 0; r < t.content_height(); ++r) {
      const double y = std::min(r / t.scale, static_cast<double>(H - 1));
      const int y0 = static_cast<int>(std::floor(y));
      const int y1 = std::min(y0 + 1, H - 1);
      const float fy = static_cast<float>(y - y0);
      for (int c = 0; c < t.content_width(); ++c) {
        const double x = std::min(c / t.scale, static_cast<double>(W - 1));
        const int x0 = static_cast<int>(std::floor(x));
        const int x1 = std::min(x0 + 1, W - 1);
        const float fx = static_cast<float>(x - x0);
        for (int ch = 0; ch < image.channels; ++ch) {
          const float top = (1.0f - fx) * image.at(y0, x0, ch) + fx * image.at(y0, x1, ch);
          const float bot = (1.0f - fx) * image.at(y1, x0, ch) + fx * image.at(y1, x1, ch);
          out.image.at(r, c, ch) = (1.0f - fy) * top + fy * bot;
        }
      }
    }
  }

  out.keypoints.reserve(keypoints.size());
  for (const Keypoint& p : keypoints) out.keypoints.push_back(t.apply(p));
  return out;
}

Mask rasterize_points(std::span<const Keypoint> points, int height, int width) {
  if (height <= 0 || width <= 0) {
    throw Error(ErrorCode::kInvalidParams, "mask dimensions must be positive");
  }
  Mask mask(height, width);
  for (const Keypoint& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) continue;
    const double col = std::clamp(std::floor(p.x + 0.5), 0.0, static_cast<double>(width - 1));
    const double row = std::clamp(std::floor(p.y + 0.5), 0.0, static_cast<double>(height - 1));
    mask.at(static_cast<int>(row), static_cast<int>(col)) = 1;
  }
  return mask;
}

MaskPair build_masks(std::span<const Match> all_matches, std::span<const Match> verified_matches,
                     int height, int width, const KeypointSet* keypoints_a,
                     const KeypointSet* keypoints_b) {
  using Key = std::tuple<double, double, double, double>;
  std::set<Key> known;
  for (const Match& m : all_matches) known.emplace(m.a.x, m.a.y, m.b.x, m.b.y);
  for (std::size_t i = 0; i < verified_matches.size(); ++i) {
    const Match& m = verified_matches[i];
    if (!known.contains(Key{m.a.x, m.a.y, m.b.x, m.b.y})) {
      throw Error(ErrorCode::kSubsetViolation,
                  "verified match " + std::to_string(i) + " is not among all matches");
    }
  }

  KeypointSet pa, pb, va, vb;
  pa.reserve(all_matches.size());
  pb.reserve(all_matches.size());
  for (const Match& m : all_matches) {
    pa.push_back(m.a);
    pb.push_back(m.b);
  }
  for (const Match& m : verified_matches) {
    va.push_back(m.a);
    vb.push_back(m.b);
  }
  // Detector keypoints extend, never replace, the match endpoints so that
  // the match mask always stays inside the keypoint mask.
  if (keypoints_a) pa.insert(pa.end(), keypoints_a->begin(), keypoints_a->end());
  if (keypoints_b) pb.insert(pb.end(), keypoints_b->begin(), keypoints_b->end());

  MaskPair masks;
  masks.keypoint_a = rasterize_points(pa, height, width);
  masks.keypoint_b = rasterize_points(pb, height, width);
  masks.match_a = rasterize_points(va, height, width);
  masks.match_b = rasterize_points(vb, height, width);
  return masks;
}

std::vector<float> assemble_input(const PairArtifacts& artifacts, InputConfig config) {
  const int h = artifacts.rgb_b.height;
  const int w = artifacts.rgb_b.width;
  if (h <= 0 || w <= 0) throw Error(ErrorCode::kShapeMismatch, "empty canvas");
  check_same_shape(artifacts.rgb_a, h, w, "rgb_a");
  check_same_shape(artifacts.rgb_b, h, w, "rgb_b");
  check_same_shape(artifacts.masks.keypoint_a, h, w, "keypoint_a mask");
  check_same_shape(artifacts.masks.keypoint_b, h, w, "keypoint_b mask");
  check_same_shape(artifacts.masks.match_a, h, w, "match_a mask");
  check_same_shape(artifacts.masks.match_b, h, w, "match_b mask");
  if (config.channels() == 0) throw Error(ErrorCode::kInvalidParams, "no input channels selected");

  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<float> out(plane * config.channels());
  std::size_t ch = 0;
  if (config.rgb) {
    for (const Image* im : {&artifacts.rgb_a, &artifacts.rgb_b}) {
      for (int k = 0; k < 3; ++k, ++ch) {
        float* dst = out.data() + ch * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] = im->data[i * 3 + k];
      }
    }
  }
  if (config.masks) {
    for (const Mask* m : {&artifacts.masks.keypoint_a, &artifacts.masks.keypoint_b,
                          &artifacts.masks.match_a, &artifacts.masks.match_b}) {
      float* dst = out.data() + ch * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = m->data[i];
      ++ch;
    }
  }
  return out;
}

PackedInput pack(const PairArtifacts& artifacts) {
  const std::vector<float> full = assemble_input(artifacts, InputConfig{});
  PackedInput packed;
  packed.size = artifacts.rgb_b.height;
  if (artifacts.rgb_b.width != packed.size) {
    throw Error(ErrorCode::kShapeMismatch, "packed inputs must be square canvases");
  }
  const std::size_t rgb_values = static_cast<std::size_t>(6) * packed.size * packed.size;
  packed.planes.resize(full.size());
  for (std::size_t i = 0; i < full.size(); ++i) {
    packed.planes[i] = i < rgb_values ? quantize(full[i]) : static_cast<std::uint8_t>(full[i]);
  }
  return packed;
}

void unpack(const PackedInput& packed, InputConfig config, float* out) {
  const std::size_t plane = static_cast<std::size_t>(packed.size) * packed.size;
  constexpr float kInv255 = 1.0f / 255.0f;
  auto copy_plane = [&](int src_channel, float* dst, float factor) {
    const std::uint8_t* src = packed.planes.data() + static_cast<std::size_t>(src_channel) * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * factor;
  };
  int ch = 0;
  if (config.rgb) {
    for (int k = 0; k < 6; ++k) copy_plane(k, out + static_cast<std::size_t>(ch++) * plane, kInv255);
  }
  if (config.masks) {
    for (int k = 6; k < 10; ++k) copy_plane(k, out + static_cast<std::size_t>(ch++) * plane, 1.0f);
  }
}

}  // namespace doppel::raster
