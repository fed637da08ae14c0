#include <gtest/gtest.h>

#include <algorithm>

#include "doppel/error.hpp"
#include "doppel/pipeline.hpp"
#include "doppel/random.hpp"
#include "test_util.hpp"

namespace doppel {
namespace {

using pipeline::Ablation;

pipeline::CorpusParams tiny_corpus() {
  pipeline::CorpusParams p;
  p.num_scenes = 2;
  p.seed = 3;
  p.scene.views_per_side = 3;
  p.scene.image_width = 160;
  p.scene.image_height = 120;
  p.scene.flip_fraction = 0.5;
  return p;
}

// Corpus shared by the tests in this file; generated once.
const std::filesystem::path& corpus_dir() {
  static const std::filesystem::path dir = [] {
    const auto d = testing::scratch_dir("pipeline_corpus");
    pipeline::write_synthetic_corpus(d, tiny_corpus());
    return d;
  }();
  return dir;
}

pipeline::PrepareJob job_for(const std::filesystem::path& out, int workers) {
  pipeline::PrepareJob job;
  job.image_dir = corpus_dir() / "images";
  job.match_dir = corpus_dir() / "matches";
  job.out_dir = out;
  job.params.input_size = 64;
  job.workers = workers;
  return job;
}

TEST(Ablation, NamesAndChannels) {
  for (Ablation a : {Ablation::kNone, Ablation::kNoMasks, Ablation::kNoRgb, Ablation::kNoAlign,
                     Ablation::kNoGeoVerify, Ablation::kSiftMasks}) {
    EXPECT_EQ(pipeline::parse_ablation(pipeline::ablation_name(a)), a);
  }
  EXPECT_EQ(pipeline::input_config(Ablation::kNoMasks).channels(), 6);
  EXPECT_EQ(pipeline::input_config(Ablation::kNoRgb).channels(), 4);
  EXPECT_EQ(pipeline::input_config(Ablation::kNoAlign).channels(), 10);
  try {
    pipeline::parse_ablation("no-everything");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidParams);
  }
}

TEST(PairSeed, OrderIndependent) {
  EXPECT_EQ(pipeline::pair_seed(1, "a__b"), pipeline::pair_seed(1, "a__b"));
  EXPECT_NE(pipeline::pair_seed(1, "a__b"), pipeline::pair_seed(1, "a__c"));
  EXPECT_NE(pipeline::pair_seed(1, "a__b"), pipeline::pair_seed(2, "a__b"));
}

TEST(PreparePair, SelfPairIsSaturatedAndAligned) {
  Rng rng(1);
  Image img(120, 160, 3);
  for (float& v : img.data) v = static_cast<float>(rng.uniform());
  matchio::PairMatches pm;
  for (int i = 0; i < 60; ++i) {
    const Keypoint p{rng.uniform(5, 155), rng.uniform(5, 115)};
    pm.matches.push_back({p, p, 1.0});
  }
  pipeline::PrepareParams params;
  params.input_size = 64;
  const raster::PairArtifacts art = pipeline::prepare_pair(img, img, pm, params, "self");
  EXPECT_EQ(art.rgb_a.width, 64);
  EXPECT_EQ(art.masks.keypoint_a, art.masks.match_a);
  EXPECT_EQ(art.masks.keypoint_b, art.masks.match_b);
  EXPECT_EQ(art.masks.match_a, art.masks.match_b);
  // Identity alignment: the warped image equals the unwarped one.
  for (std::size_t i = 0; i < art.rgb_a.data.size(); ++i) {
    ASSERT_NEAR(art.rgb_a.data[i], art.rgb_b.data[i], 1e-4);
  }
}

TEST(PreparePair, NoMatchesStillProducesInput) {
  Image img(40, 40, 3, 0.5f);
  pipeline::PrepareParams params;
  params.input_size = 32;
  const raster::PairArtifacts art = pipeline::prepare_pair(img, img, {}, params);
  EXPECT_EQ(art.masks.keypoint_a.popcount(), 0u);
  EXPECT_EQ(raster::assemble_input(art).size(), 10u * 32 * 32);
}

TEST(PreparePair, SiftMasksNeedsMaskMatches) {
  Image img(40, 40, 3, 0.5f);
  pipeline::PrepareParams params;
  params.input_size = 32;
  params.ablation = Ablation::kSiftMasks;
  EXPECT_THROW(pipeline::prepare_pair(img, img, {}, params), Error);
}

TEST(Corpus, LayoutAndLabels) {
  const auto& dir = corpus_dir();
  EXPECT_TRUE(std::filesystem::exists(dir / "catalog.csv"));
  const auto manifest = matchio::read_manifest(dir / "pairs.csv");
  ASSERT_FALSE(manifest.empty());
  bool flipped = false;
  for (const auto& r : manifest) {
    EXPECT_TRUE(std::filesystem::exists(dir / "images" / r.image_a));
    EXPECT_TRUE(std::filesystem::exists(dir / "matches" / (r.pair_id() + ".txt")));
    EXPECT_TRUE(std::filesystem::exists(dir / "matches_sift" / (r.pair_id() + ".txt")));
    if (r.flip_applied) {
      flipped = true;
      EXPECT_EQ(r.label, matchio::Label::kNegative);
    }
  }
  EXPECT_TRUE(flipped);
  // Deterministic regeneration.
  const auto again = testing::scratch_dir("pipeline_corpus_again");
  pipeline::write_synthetic_corpus(again, tiny_corpus());
  EXPECT_EQ(testing::read_file(again / "pairs.csv"), testing::read_file(dir / "pairs.csv"));
  const auto& first = manifest.front();
  EXPECT_EQ(testing::read_file(again / "matches" / (first.pair_id() + ".txt")),
            testing::read_file(dir / "matches" / (first.pair_id() + ".txt")));
}

TEST(Store, DeterministicAcrossWorkerCounts) {
  auto manifest = matchio::read_manifest(corpus_dir() / "pairs.csv");
  manifest.resize(std::min<std::size_t>(manifest.size(), 12));
  const auto one = testing::scratch_dir("store_w1");
  const auto two = testing::scratch_dir("store_w3");
  const auto r1 = pipeline::prepare_store(manifest, job_for(one, 1));
  const auto r2 = pipeline::prepare_store(manifest, job_for(two, 3));
  EXPECT_EQ(r1.prepared, manifest.size());
  EXPECT_TRUE(r1.failures.empty());
  EXPECT_EQ(r2.prepared, r1.prepared);
  EXPECT_EQ(testing::read_file(one / "index.csv"), testing::read_file(two / "index.csv"));
  const auto store = pipeline::ArtifactStore::open(one);
  ASSERT_EQ(store.entries().size(), manifest.size());
  for (const auto& e : store.entries()) {
    EXPECT_EQ(testing::read_file(one / e.file), testing::read_file(two / e.file)) << e.pair_id;
  }
  EXPECT_TRUE(std::is_sorted(store.entries().begin(), store.entries().end(),
                             [](const auto& a, const auto& b) { return a.pair_id < b.pair_id; }));
}

TEST(Store, ArtifactRoundTrip) {
  auto manifest = matchio::read_manifest(corpus_dir() / "pairs.csv");
  manifest.resize(1);
  const auto dir = testing::scratch_dir("store_rt");
  pipeline::prepare_store(manifest, job_for(dir, 1));
  const auto store = pipeline::ArtifactStore::open(dir);
  ASSERT_EQ(store.entries().size(), 1u);
  const auto& e = store.entries().front();
  EXPECT_EQ(store.meta().input_size, 64);

  // Independent recomputation of the same pair.
  const auto& rec = manifest.front();
  const Image a = load_image(corpus_dir() / "images" / rec.image_a);
  Image b = load_image(corpus_dir() / "images" / rec.image_b);
  if (rec.flip_applied) b = geometry::flip_horizontal(b, {}).first;
  const auto pm = matchio::load_pair_matches(corpus_dir() / "matches" / (rec.pair_id() + ".txt"));
  pipeline::PrepareParams params;
  params.input_size = 64;
  params.verify.seed = pipeline::pair_seed(0, rec.pair_id());
  const auto direct = raster::assemble_input(pipeline::prepare_pair(a, b, pm, params, rec.pair_id()));
  const raster::PackedInput packed = store.read(e);
  std::vector<float> unpacked(direct.size());
  raster::unpack(packed, {}, unpacked.data());
  for (std::size_t i = 0; i < direct.size(); ++i) ASSERT_NEAR(unpacked[i], direct[i], 0.5 / 255 + 1e-5);

  pipeline::StoreDataset ds(store);
  EXPECT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds.label(0), rec.label == matchio::Label::kPositive ? 1 : 0);
}

TEST(Store, MissingMatchFileSkipped) {
  auto manifest = matchio::read_manifest(corpus_dir() / "pairs.csv");
  manifest.resize(2);
  manifest.push_back({"nope_a.png", "nope_b.png", "s00", matchio::Label::kPositive, false});
  const auto dir = testing::scratch_dir("store_missing");
  std::vector<std::string> logged;
  auto job = job_for(dir, 1);
  job.log = [&](const std::string& s) { logged.push_back(s); };
  const auto report = pipeline::prepare_store(manifest, job);
  EXPECT_EQ(report.prepared, 2u);
  EXPECT_EQ(report.skipped_missing, 1u);
  EXPECT_TRUE(report.failures.empty());
  EXPECT_TRUE(std::any_of(logged.begin(), logged.end(),
                          [](const std::string& s) { return s.find("nope_a") != std::string::npos; }));
}

TEST(Store, EmptyManifest) {
  const auto dir = testing::scratch_dir("store_empty");
  const auto report = pipeline::prepare_store({}, job_for(dir, 1));
  EXPECT_EQ(report.prepared, 0u);
  EXPECT_TRUE(pipeline::ArtifactStore::open(dir).entries().empty());
}

TEST(Store, SubsetDatasetAndUnknownLabels) {
  auto manifest = matchio::read_manifest(corpus_dir() / "pairs.csv");
  manifest.resize(4);
  manifest[3].label = matchio::Label::kUnknown;
  const auto dir = testing::scratch_dir("store_subset");
  pipeline::prepare_store(manifest, job_for(dir, 1));
  const auto store = pipeline::ArtifactStore::open(dir);
  EXPECT_EQ(pipeline::StoreDataset(store).size(), 3u);
  const std::vector<std::string> ids{manifest[1].pair_id()};
  const pipeline::StoreDataset sub(store, ids);
  ASSERT_EQ(sub.size(), 1u);
  EXPECT_EQ(sub.entry(0).pair_id, manifest[1].pair_id());
}

}  // namespace
}  // namespace doppel
