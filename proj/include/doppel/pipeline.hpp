#pragma once

// End-to-end composition: matches + images -> aligned classifier inputs,
// the on-disk artifact store, and the synthetic corpus writer.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "doppel/geometry.hpp"
#include "doppel/image.hpp"
#include "doppel/matchio.hpp"
#include "doppel/model.hpp"
#include "doppel/rasterize.hpp"
#include "doppel/synth.hpp"

namespace doppel::pipeline {

enum class Ablation { kNone, kNoMasks, kNoRgb, kNoAlign, kNoGeoVerify, kSiftMasks };

std::string_view ablation_name(Ablation a);  // "none", "no-masks", ...
Ablation parse_ablation(std::string_view text);  // throws InvalidParams
// Channel groups the classifier sees under an ablation.
raster::InputConfig input_config(Ablation a);

struct PrepareParams {
  int input_size = raster::kCanvasSize;
  matchio::VerifyParams verify;
  double affine_inlier_error = geometry::kDefaultAffineInlierError;
  Ablation ablation = Ablation::kNone;
  std::string matcher = "loftr-style";
};

// Verification and alignment run on the 1024-pixel reference canvas; the
// result is rendered at `input_size`. `image_b` and the matches must already
// be in the (possibly mirrored) frame the pair is defined on. Under
// kSiftMasks the masks come from `mask_matches` (required) while the
// alignment still uses `matches`.
raster::PairArtifacts prepare_pair(const Image& image_a, const Image& image_b,
                                   const matchio::PairMatches& matches, const PrepareParams& params,
                                   const std::string& pair_id = {},
                                   const matchio::PairMatches* mask_matches = nullptr);

// Seed used for a pair's RANSAC runs: independent of processing order.
std::uint64_t pair_seed(std::uint64_t seed, const std::string& pair_id);

struct StoreEntry {
  std::string pair_id;
  std::string scene;
  matchio::Label label = matchio::Label::kUnknown;
  bool flip_applied = false;
  std::string image_a;
  std::string image_b;
  std::size_t num_matches_all = 0;
  std::size_t num_matches_verified = 0;
  std::size_t num_keypoints_a = 0;
  std::size_t num_keypoints_b = 0;
  std::string file;  // relative to the store directory
};

struct StoreMeta {
  int input_size = raster::kCanvasSize;
  Ablation ablation = Ablation::kNone;
  std::string matcher;
};

// Directory of zlib-compressed 8-bit artifacts plus index.csv and
// store.json. Entries are kept sorted by pair id.
class ArtifactStore {
 public:
  static ArtifactStore create(const std::filesystem::path& dir, const StoreMeta& meta);
  static ArtifactStore open(const std::filesystem::path& dir);

  const std::filesystem::path& dir() const { return dir_; }
  const StoreMeta& meta() const { return meta_; }
  const std::vector<StoreEntry>& entries() const { return entries_; }

  // Writes the artifact file; the entry's `file` field is filled in.
  // Safe to call concurrently for distinct pairs.
  StoreEntry write(StoreEntry entry, const raster::PairArtifacts& artifacts) const;
  // Adds entries and rewrites the index.
  void commit(std::vector<StoreEntry> entries);

  raster::PackedInput read(const StoreEntry& entry) const;
  geometry::AffineTransform read_alignment(const StoreEntry& entry) const;

 private:
  std::filesystem::path dir_;
  StoreMeta meta_;
  std::vector<StoreEntry> entries_;
};

// Labeled view over a store; unknown-label entries are skipped.
class StoreDataset final : public model::Dataset {
 public:
  explicit StoreDataset(const ArtifactStore& store);
  StoreDataset(const ArtifactStore& store, std::span<const std::string> pair_ids);

  std::size_t size() const override { return entries_.size(); }
  int input_size() const override { return store_->meta().input_size; }
  int label(std::size_t i) const override;
  void load(std::size_t i, raster::InputConfig channels, float* out) const override;
  const StoreEntry& entry(std::size_t i) const { return entries_[i]; }

 private:
  const ArtifactStore* store_;
  std::vector<StoreEntry> entries_;
};

struct PrepareReport {
  std::size_t prepared = 0;
  std::size_t skipped_missing = 0;  // no match file
  std::vector<std::string> failures;  // "pair_id: reason"
};

struct PrepareJob {
  std::filesystem::path image_dir;
  std::filesystem::path match_dir;
  std::optional<std::filesystem::path> mask_match_dir;  // sift-masks ablation
  std::filesystem::path out_dir;
  PrepareParams params;
  int workers = 1;
  std::function<void(const std::string&)> log;
};

// One artifact per manifest record. Match files are <match_dir>/<pair_id>.txt;
// images resolve as <image_dir>/<image_a>. Flipped records have image_b
// mirrored before processing (their match files are already in that frame).
PrepareReport prepare_store(std::span<const matchio::PairRecord> manifest, const PrepareJob& job);

struct CorpusParams {
  int num_scenes = 40;
  std::uint64_t seed = 7;
  synth::SynthParams scene;
  std::vector<synth::Symmetry> symmetries{synth::Symmetry::kTwoWay, synth::Symmetry::kFourWay,
                                          synth::Symmetry::kReplica};
};

struct CorpusSummary {
  std::size_t scenes = 0;
  std::size_t images = 0;
  std::size_t natural_pairs = 0;
  std::size_t flipped_pairs = 0;
  std::vector<std::string> scene_names;
};

// Writes images/, matches/ (primary matcher), matches_sift/ (detector-style
// matcher), catalog.csv and pairs.csv under `out_dir`.
CorpusSummary write_synthetic_corpus(const std::filesystem::path& out_dir, const CorpusParams& params,
                                     const std::function<void(const std::string&)>& log = {});

}  // namespace doppel::pipeline
