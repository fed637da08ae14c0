#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "doppel/error.hpp"
#include "doppel/random.hpp"
#include "doppel/rasterize.hpp"

namespace doppel {
namespace {

Image random_image(int h, int w, Rng& rng) {
  Image img(h, w, 3);
  for (float& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

TEST(ResizePad, TargetSizedInputUnchanged) {
  Rng rng(1);
  const Image img = random_image(64, 64, rng);
  const auto out = raster::resize_pad(img, KeypointSet{{3.5, 7.25}}, 64);
  EXPECT_EQ(out.image, img);
  EXPECT_EQ(out.transform.scale, 1.0);
  EXPECT_EQ(out.transform.pad_x, 0);
  EXPECT_EQ(out.transform.pad_y, 0);
  EXPECT_EQ(out.keypoints[0], (Keypoint{3.5, 7.25}));
}

TEST(ResizePad, TallImageHalvedAndPaddedRight) {
  Image img(2048, 1024, 3, 0.5f);
  const auto out = raster::resize_pad(img, KeypointSet{{100, 200}}, 1024);
  EXPECT_EQ(out.transform.scale, 0.5);
  EXPECT_EQ(out.image.height, 1024);
  EXPECT_EQ(out.image.width, 1024);
  EXPECT_EQ(out.transform.pad_x, 512);
  EXPECT_EQ(out.transform.pad_y, 0);
  EXPECT_EQ(out.keypoints[0], (Keypoint{50, 100}));
  for (int r = 0; r < 1024; r += 111) {
    EXPECT_NEAR(out.image.at(r, 100, 0), 0.5f, 1e-6);
    for (int c = 512; c < 1024; c += 37) EXPECT_EQ(out.image.at(r, c, 1), 0.0f);
  }
}

TEST(ResizePad, SmallImageKeypointStaysInContent) {
  Image img(10, 10, 3, 1.0f);
  const auto out = raster::resize_pad(img, KeypointSet{{9, 9}}, 1024);
  EXPECT_LT(out.keypoints[0].x, out.transform.content_width());
  EXPECT_LT(out.keypoints[0].y, out.transform.content_height());
}

TEST(ResizePad, InverseWithinHalfPixel) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const int h = rng.uniform_int(20, 300), w = rng.uniform_int(20, 300);
    KeypointSet kps;
    for (int i = 0; i < 10; ++i) kps.push_back({rng.uniform(0, w - 1), rng.uniform(0, h - 1)});
    const auto out = raster::resize_pad(Image(h, w, 3), kps, 128);
    for (std::size_t i = 0; i < kps.size(); ++i) {
      const Keypoint back = out.transform.invert(out.keypoints[i]);
      EXPECT_LE(std::abs(back.x - kps[i].x), 0.5);
      EXPECT_LE(std::abs(back.y - kps[i].y), 0.5);
    }
  }
}

TEST(ResizePad, EmptyImage) {
  try {
    raster::resize_pad(Image(), {}, 64);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyImage);
  }
}

TEST(Rasterize, EmptyPointSet) {
  EXPECT_EQ(raster::rasterize_points({}, 8, 8).popcount(), 0u);
}

TEST(Rasterize, RoundsHalfUp) {
  const Mask m = raster::rasterize_points(KeypointSet{{10.4, 20.6}}, 32, 32);
  EXPECT_EQ(m.popcount(), 1u);
  EXPECT_EQ(m.at(21, 10), 1);
  const Mask h = raster::rasterize_points(KeypointSet{{2.5, 3.5}}, 8, 8);
  EXPECT_EQ(h.at(4, 3), 1);
}

TEST(Rasterize, ClampsOutOfRange) {
  const Mask m = raster::rasterize_points(KeypointSet{{-3, -3}, {100, 2}}, 8, 8);
  EXPECT_EQ(m.at(0, 0), 1);
  EXPECT_EQ(m.at(2, 7), 1);
}

TEST(Rasterize, PopcountCountsDistinctPixels) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    KeypointSet pts;
    std::set<std::pair<long, long>> pixels;
    const int n = rng.uniform_int(0, 40);
    for (int i = 0; i < n; ++i) {
      const Keypoint p{rng.uniform(0, 15), rng.uniform(0, 15)};
      pts.push_back(p);
      pixels.insert({std::lround(std::floor(p.y + 0.5)), std::lround(std::floor(p.x + 0.5))});
    }
    const Mask m = raster::rasterize_points(pts, 16, 16);
    EXPECT_EQ(m.popcount(), pixels.size());
    EXPECT_LE(m.popcount(), pts.size());
    KeypointSet doubled = pts;
    doubled.insert(doubled.end(), pts.begin(), pts.end());
    EXPECT_EQ(raster::rasterize_points(doubled, 16, 16), m);
  }
}

MatchSet random_matches(int n, int size, Rng& rng) {
  MatchSet m;
  for (int i = 0; i < n; ++i) {
    m.push_back({{rng.uniform(0, size - 1), rng.uniform(0, size - 1)},
                 {rng.uniform(0, size - 1), rng.uniform(0, size - 1)}, 1.0});
  }
  return m;
}

TEST(BuildMasks, SaturatedVerification) {
  Rng rng(4);
  const MatchSet all = random_matches(50, 64, rng);
  const raster::MaskPair m = raster::build_masks(all, all, 64, 64);
  EXPECT_EQ(m.keypoint_a, m.match_a);
  EXPECT_EQ(m.keypoint_b, m.match_b);
}

TEST(BuildMasks, EmptyVerification) {
  Rng rng(5);
  const MatchSet all = random_matches(50, 64, rng);
  const raster::MaskPair m = raster::build_masks(all, {}, 64, 64);
  EXPECT_EQ(m.match_a.popcount(), 0u);
  EXPECT_EQ(m.match_b.popcount(), 0u);
  EXPECT_GT(m.keypoint_a.popcount(), 0u);
  EXPECT_GT(m.keypoint_b.popcount(), 0u);
}

TEST(BuildMasks, PartialVerificationCounts) {
  Rng rng(6);
  const MatchSet all = random_matches(100, 64, rng);
  const MatchSet verified(all.begin(), all.begin() + 40);
  const raster::MaskPair m = raster::build_masks(all, verified, 64, 64);
  EXPECT_LE(m.match_a.popcount(), 40u);
  EXPECT_LE(m.match_b.popcount(), 40u);
  EXPECT_LE(m.match_a.popcount(), m.keypoint_a.popcount());
  EXPECT_LE(m.match_b.popcount(), m.keypoint_b.popcount());
  for (std::size_t i = 0; i < m.match_a.data.size(); ++i) {
    ASSERT_LE(m.match_a.data[i], m.keypoint_a.data[i]);
    ASSERT_LE(m.match_b.data[i], m.keypoint_b.data[i]);
  }
}

TEST(BuildMasks, SubsetViolation) {
  Rng rng(7);
  const MatchSet all = random_matches(10, 64, rng);
  const MatchSet stranger = random_matches(1, 64, rng);
  try {
    raster::build_masks(all, stranger, 64, 64);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSubsetViolation);
  }
}

TEST(BuildMasks, ExplicitKeypointsReplaceEndpoints) {
  const MatchSet all{{{1, 1}, {2, 2}, 1.0}};
  const KeypointSet ka{{1, 1}, {5, 5}}, kb{{2, 2}, {6, 6}, {7, 7}};
  const raster::MaskPair m = raster::build_masks(all, all, 16, 16, &ka, &kb);
  EXPECT_EQ(m.keypoint_a.popcount(), 2u);
  EXPECT_EQ(m.keypoint_b.popcount(), 3u);
  EXPECT_EQ(m.match_a.popcount(), 1u);
}

raster::PairArtifacts small_artifacts(int s, Rng& rng) {
  raster::PairArtifacts art;
  art.rgb_a = random_image(s, s, rng);
  art.rgb_b = random_image(s, s, rng);
  const MatchSet all = random_matches(20, s, rng);
  art.masks = raster::build_masks(all, MatchSet(all.begin(), all.begin() + 5), s, s);
  return art;
}

TEST(Assemble, ChannelCountsAndOrder) {
  Rng rng(8);
  const int s = 12;
  const raster::PairArtifacts art = small_artifacts(s, rng);
  const std::size_t plane = s * s;
  const std::vector<float> full = raster::assemble_input(art);
  EXPECT_EQ(full.size(), 10 * plane);
  EXPECT_EQ(raster::assemble_input(art, {true, false}).size(), 6 * plane);
  EXPECT_EQ(raster::assemble_input(art, {false, true}).size(), 4 * plane);
  // Oracle: direct indexing into the source canvases.
  for (int r = 0; r < s; ++r) {
    for (int c = 0; c < s; ++c) {
      const std::size_t p = static_cast<std::size_t>(r) * s + c;
      for (int k = 0; k < 3; ++k) {
        EXPECT_EQ(full[k * plane + p], art.rgb_a.at(r, c, k));
        EXPECT_EQ(full[(3 + k) * plane + p], art.rgb_b.at(r, c, k));
      }
      EXPECT_EQ(full[6 * plane + p], art.masks.keypoint_a.at(r, c));
      EXPECT_EQ(full[7 * plane + p], art.masks.keypoint_b.at(r, c));
      EXPECT_EQ(full[8 * plane + p], art.masks.match_a.at(r, c));
      EXPECT_EQ(full[9 * plane + p], art.masks.match_b.at(r, c));
    }
  }
  const std::vector<float> masks_only = raster::assemble_input(art, {false, true});
  EXPECT_TRUE(std::equal(masks_only.begin(), masks_only.end(), full.begin() + 6 * plane));
}

TEST(Assemble, ShapeMismatch) {
  Rng rng(9);
  raster::PairArtifacts art = small_artifacts(12, rng);
  art.rgb_b = random_image(10, 12, rng);
  try {
    raster::assemble_input(art);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
}

TEST(Pack, UnpackMatchesAssembleWithinQuantization) {
  Rng rng(10);
  const raster::PairArtifacts art = small_artifacts(12, rng);
  const raster::PackedInput packed = raster::pack(art);
  EXPECT_EQ(packed.planes.size(), 10u * 144u);
  for (raster::InputConfig cfg : {raster::InputConfig{true, true}, raster::InputConfig{true, false},
                                  raster::InputConfig{false, true}}) {
    const std::vector<float> direct = raster::assemble_input(art, cfg);
    std::vector<float> unpacked(direct.size());
    raster::unpack(packed, cfg, unpacked.data());
    for (std::size_t i = 0; i < direct.size(); ++i) EXPECT_NEAR(unpacked[i], direct[i], 0.5 / 255 + 1e-6);
  }
}

}  // namespace
}  // namespace doppel
