#include "doppel/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstring>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include <json.hpp>
#include <zlib.h>

#include "doppel/csv.hpp"
#include "doppel/data.hpp"
#include "doppel/error.hpp"
#include "doppel/random.hpp"

namespace doppel::pipeline {
namespace {

constexpr char kArtifactMagic[5] = {'D', 'G', 'A', 'R', 'T'};
constexpr std::uint32_t kArtifactVersion = 1;

std::uint64_t stable_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

MatchSet scale_matches(std::span<const Match> matches, double sa, double sb) {
  MatchSet out;
  out.reserve(matches.size());
  for (const Match& m : matches) {
    out.push_back({{m.a.x * sa, m.a.y * sa}, {m.b.x * sb, m.b.y * sb}, m.score});
  }
  return out;
}

KeypointSet scale_points(std::span<const Keypoint> points, double s) {
  KeypointSet out;
  out.reserve(points.size());
  for (const Keypoint& p : points) out.push_back({p.x * s, p.y * s});
  return out;
}

std::size_t distinct_endpoints(std::span<const Match> matches, bool side_a) {
  std::set<std::pair<double, double>> seen;
  for (const Match& m : matches) {
    const Keypoint& p = side_a ? m.a : m.b;
    seen.emplace(p.x, p.y);
  }
  return seen.size();
}

std::size_t to_size(const std::string& text, const std::string& where) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw Error(ErrorCode::kParseError, where + "bad count '" + text + "'");
  }
  return v;
}

const char* kIndexColumns[] = {"pair_id",       "scene",           "label",
                               "flip_applied",  "image_a",         "image_b",
                               "num_matches_all", "num_matches_verified", "num_keypoints_a",
                               "num_keypoints_b", "file"};

}  // namespace

std::string_view ablation_name(Ablation a) {
  switch (a) {
    case Ablation::kNone: return "none";
    case Ablation::kNoMasks: return "no-masks";
    case Ablation::kNoRgb: return "no-rgb";
    case Ablation::kNoAlign: return "no-align";
    case Ablation::kNoGeoVerify: return "no-geo-verify";
    case Ablation::kSiftMasks: return "sift-masks";
  }
  return "none";
}

Ablation parse_ablation(std::string_view text) {
  for (Ablation a : {Ablation::kNone, Ablation::kNoMasks, Ablation::kNoRgb, Ablation::kNoAlign,
                     Ablation::kNoGeoVerify, Ablation::kSiftMasks}) {
    if (ablation_name(a) == text) return a;
  }
  throw Error(ErrorCode::kInvalidParams, "unknown ablation '" + std::string(text) + "'");
}

raster::InputConfig input_config(Ablation a) {
  raster::InputConfig c;
  if (a == Ablation::kNoMasks) c.masks = false;
  if (a == Ablation::kNoRgb) c.rgb = false;
  return c;
}

std::uint64_t pair_seed(std::uint64_t seed, const std::string& pair_id) {
  return mix_seed(seed, stable_hash(pair_id));
}

raster::PairArtifacts prepare_pair(const Image& image_a, const Image& image_b,
                                   const matchio::PairMatches& matches, const PrepareParams& params,
                                   const std::string& pair_id,
                                   const matchio::PairMatches* mask_matches) {
  if (params.input_size <= 0) throw Error(ErrorCode::kInvalidParams, "input size must be positive");
  if (params.ablation == Ablation::kSiftMasks && !mask_matches) {
    throw Error(ErrorCode::kInvalidParams, "sift-masks ablation needs a second match source");
  }
  const raster::CanvasTransform ta = raster::canvas_transform(image_a.height, image_a.width);
  const raster::CanvasTransform tb = raster::canvas_transform(image_b.height, image_b.width);

  matchio::VerifyParams verify = params.verify;
  verify.geometric = verify.geometric && params.ablation != Ablation::kNoGeoVerify;
  const MatchSet canvas_matches = scale_matches(matches.matches, ta.scale, tb.scale);
  const matchio::VerifiedMatches primary = matchio::verify_pair(canvas_matches, verify);

  geometry::AffineTransform T = geometry::AffineTransform::identity();
  if (params.ablation != Ablation::kNoAlign) {
    try {
      T = geometry::estimate_affine(primary.verified, params.affine_inlier_error, verify.seed);
      (void)T.inverse();  // a singular fit cannot be used for warping
    } catch (const Error&) {
      T = geometry::AffineTransform::identity();
    }
  }

  // Mask sources on the reference canvas.
  matchio::VerifiedMatches mask_sets = primary;
  KeypointSet kp_a = scale_points(matches.keypoints_a, ta.scale);
  KeypointSet kp_b = scale_points(matches.keypoints_b, tb.scale);
  if (params.ablation == Ablation::kSiftMasks) {
    mask_sets = matchio::verify_pair(scale_matches(mask_matches->matches, ta.scale, tb.scale), verify);
    kp_a = scale_points(mask_matches->keypoints_a, ta.scale);
    kp_b = scale_points(mask_matches->keypoints_b, tb.scale);
  }

  const int S = params.input_size;
  const double f = static_cast<double>(S) / raster::kCanvasSize;
  const MatchSet all_s = scale_matches(mask_sets.all, f, f);
  const MatchSet verified_s = scale_matches(mask_sets.verified, f, f);
  const KeypointSet kp_a_s = scale_points(kp_a, f);
  const KeypointSet kp_b_s = scale_points(kp_b, f);
  const raster::MaskPair masks = raster::build_masks(all_s, verified_s, S, S,
                                                     kp_a_s.empty() ? nullptr : &kp_a_s,
                                                     kp_b_s.empty() ? nullptr : &kp_b_s);

  raster::PairArtifacts out;
  const geometry::AffineTransform Ts = T.rescaled(f);
  const Image canvas_a = raster::resize_pad(image_a, {}, S).image;
  out.rgb_a = geometry::warp(canvas_a, Ts, S, S);
  out.rgb_b = raster::resize_pad(image_b, {}, S).image;
  out.masks.keypoint_a = geometry::warp(masks.keypoint_a, Ts, S, S);
  out.masks.match_a = geometry::warp(masks.match_a, Ts, S, S);
  out.masks.keypoint_b = masks.keypoint_b;
  out.masks.match_b = masks.match_b;
  out.alignment = T;
  out.pair_id = pair_id;
  out.matcher = params.matcher;
  out.num_matches_all = primary.all.size();
  out.num_matches_verified = primary.verified.size();
  out.num_keypoints_a = matches.keypoints_a.empty() ? distinct_endpoints(primary.all, true)
                                                    : matches.keypoints_a.size();
  out.num_keypoints_b = matches.keypoints_b.empty() ? distinct_endpoints(primary.all, false)
                                                    : matches.keypoints_b.size();
  return out;
}

ArtifactStore ArtifactStore::create(const std::filesystem::path& dir, const StoreMeta& meta) {
  std::filesystem::create_directories(dir / "pairs");
  ArtifactStore store;
  store.dir_ = dir;
  store.meta_ = meta;
  nlohmann::json j = {{"input_size", meta.input_size},
                      {"ablation", std::string(ablation_name(meta.ablation))},
                      {"matcher", meta.matcher},
                      {"format_version", kArtifactVersion}};
  std::ofstream out(dir / "store.json");
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + (dir / "store.json").string());
  out << j.dump(2) << '\n';
  store.commit({});
  return store;
}

ArtifactStore ArtifactStore::open(const std::filesystem::path& dir) {
  ArtifactStore store;
  store.dir_ = dir;
  std::ifstream in(dir / "store.json");
  if (!in) throw Error(ErrorCode::kIoError, "no artifact store at " + dir.string());
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    store.meta_.input_size = j.at("input_size").get<int>();
    store.meta_.ablation = parse_ablation(j.at("ablation").get<std::string>());
    store.meta_.matcher = j.at("matcher").get<std::string>();
    if (j.at("format_version").get<std::uint32_t>() != kArtifactVersion) {
      throw Error(ErrorCode::kVersionMismatch, "unsupported artifact store version in " + dir.string());
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, (dir / "store.json").string() + ": " + e.what());
  }
  const csv::Table table = csv::read(dir / "index.csv");
  for (std::size_t c = 0; c < std::size(kIndexColumns); ++c) {
    if (c >= table.header.size() || table.header[c] != kIndexColumns[c]) {
      throw Error(ErrorCode::kParseError, (dir / "index.csv").string() + ": unexpected header");
    }
  }
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& r = table.rows[i];
    const std::string where = (dir / "index.csv").string() + ":" + std::to_string(i + 2) + ": ";
    StoreEntry e;
    e.pair_id = r[0];
    e.scene = r[1];
    e.label = matchio::parse_label(r[2]);
    e.flip_applied = r[3] == "1";
    e.image_a = r[4];
    e.image_b = r[5];
    e.num_matches_all = to_size(r[6], where);
    e.num_matches_verified = to_size(r[7], where);
    e.num_keypoints_a = to_size(r[8], where);
    e.num_keypoints_b = to_size(r[9], where);
    e.file = r[10];
    store.entries_.push_back(std::move(e));
  }
  return store;
}

StoreEntry ArtifactStore::write(StoreEntry entry, const raster::PairArtifacts& artifacts) const {
  const raster::PackedInput packed = raster::pack(artifacts);
  if (packed.size != meta_.input_size) {
    throw Error(ErrorCode::kShapeMismatch, "artifact size " + std::to_string(packed.size) +
                                               " differs from the store's " +
                                               std::to_string(meta_.input_size));
  }
  uLongf compressed_len = compressBound(static_cast<uLong>(packed.planes.size()));
  std::vector<Bytef> compressed(compressed_len);
  if (compress2(compressed.data(), &compressed_len, packed.planes.data(),
                static_cast<uLong>(packed.planes.size()), 6) != Z_OK) {
    throw Error(ErrorCode::kIoError, "compression failed for " + entry.pair_id);
  }
  entry.num_matches_all = artifacts.num_matches_all;
  entry.num_matches_verified = artifacts.num_matches_verified;
  entry.num_keypoints_a = artifacts.num_keypoints_a;
  entry.num_keypoints_b = artifacts.num_keypoints_b;
  entry.file = "pairs/" + entry.pair_id + ".dga";
  const std::filesystem::path path = dir_ / entry.file;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  const std::int32_t size = packed.size;
  const std::uint64_t length = compressed_len;
  const double affine[6] = {artifacts.alignment.A(0, 0), artifacts.alignment.A(0, 1),
                            artifacts.alignment.A(1, 0), artifacts.alignment.A(1, 1),
                            artifacts.alignment.t(0),    artifacts.alignment.t(1)};
  out.write(kArtifactMagic, sizeof(kArtifactMagic));
  out.write(reinterpret_cast<const char*>(&kArtifactVersion), sizeof(kArtifactVersion));
  out.write(reinterpret_cast<const char*>(&size), sizeof(size));
  out.write(reinterpret_cast<const char*>(affine), sizeof(affine));
  out.write(reinterpret_cast<const char*>(&length), sizeof(length));
  out.write(reinterpret_cast<const char*>(compressed.data()), static_cast<std::streamsize>(length));
  if (!out) throw Error(ErrorCode::kIoError, "failed writing " + path.string());
  return entry;
}

void ArtifactStore::commit(std::vector<StoreEntry> entries) {
  for (StoreEntry& e : entries) {
    auto it = std::find_if(entries_.begin(), entries_.end(),
                           [&](const StoreEntry& x) { return x.pair_id == e.pair_id; });
    if (it != entries_.end()) *it = std::move(e);
    else entries_.push_back(std::move(e));
  }
  std::sort(entries_.begin(), entries_.end(),
            [](const StoreEntry& a, const StoreEntry& b) { return a.pair_id < b.pair_id; });
  csv::Table table;
  table.header.assign(std::begin(kIndexColumns), std::end(kIndexColumns));
  for (const StoreEntry& e : entries_) {
    table.rows.push_back({e.pair_id, e.scene, std::string(matchio::label_name(e.label)),
                          e.flip_applied ? "1" : "0", e.image_a, e.image_b,
                          std::to_string(e.num_matches_all), std::to_string(e.num_matches_verified),
                          std::to_string(e.num_keypoints_a), std::to_string(e.num_keypoints_b), e.file});
  }
  csv::write(dir_ / "index.csv", table);
}

namespace {

struct ArtifactHeader {
  std::int32_t size = 0;
  double affine[6] = {};
  std::uint64_t length = 0;
};

ArtifactHeader read_header(std::ifstream& in, const std::filesystem::path& path) {
  char magic[sizeof(kArtifactMagic)] = {};
  std::uint32_t version = 0;
  ArtifactHeader h;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!in || std::memcmp(magic, kArtifactMagic, sizeof(magic)) != 0) {
    throw Error(ErrorCode::kParseError, path.string() + ": not an artifact file");
  }
  if (version != kArtifactVersion) {
    throw Error(ErrorCode::kVersionMismatch, path.string() + ": unsupported artifact version");
  }
  in.read(reinterpret_cast<char*>(&h.size), sizeof(h.size));
  in.read(reinterpret_cast<char*>(h.affine), sizeof(h.affine));
  in.read(reinterpret_cast<char*>(&h.length), sizeof(h.length));
  if (!in || h.size <= 0) throw Error(ErrorCode::kParseError, path.string() + ": truncated header");
  return h;
}

}  // namespace

raster::PackedInput ArtifactStore::read(const StoreEntry& entry) const {
  const std::filesystem::path path = dir_ / entry.file;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  const ArtifactHeader h = read_header(in, path);
  std::vector<Bytef> compressed(h.length);
  in.read(reinterpret_cast<char*>(compressed.data()), static_cast<std::streamsize>(h.length));
  if (!in) throw Error(ErrorCode::kParseError, path.string() + ": truncated data");
  raster::PackedInput packed;
  packed.size = h.size;
  packed.planes.resize(static_cast<std::size_t>(raster::kFullChannels) * h.size * h.size);
  uLongf len = static_cast<uLongf>(packed.planes.size());
  if (uncompress(packed.planes.data(), &len, compressed.data(), static_cast<uLong>(h.length)) != Z_OK ||
      len != packed.planes.size()) {
    throw Error(ErrorCode::kParseError, path.string() + ": corrupt artifact data");
  }
  return packed;
}

geometry::AffineTransform ArtifactStore::read_alignment(const StoreEntry& entry) const {
  const std::filesystem::path path = dir_ / entry.file;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  const ArtifactHeader h = read_header(in, path);
  geometry::AffineTransform T;
  T.A << h.affine[0], h.affine[1], h.affine[2], h.affine[3];
  T.t << h.affine[4], h.affine[5];
  return T;
}

StoreDataset::StoreDataset(const ArtifactStore& store) : store_(&store) {
  for (const StoreEntry& e : store.entries()) {
    if (e.label != matchio::Label::kUnknown) entries_.push_back(e);
  }
}

StoreDataset::StoreDataset(const ArtifactStore& store, std::span<const std::string> pair_ids)
    : store_(&store) {
  const std::set<std::string> wanted(pair_ids.begin(), pair_ids.end());
  for (const StoreEntry& e : store.entries()) {
    if (e.label != matchio::Label::kUnknown && wanted.contains(e.pair_id)) entries_.push_back(e);
  }
}

int StoreDataset::label(std::size_t i) const {
  return entries_[i].label == matchio::Label::kPositive ? model::kPositiveClass
                                                         : model::kNegativeClass;
}

void StoreDataset::load(std::size_t i, raster::InputConfig channels, float* out) const {
  raster::unpack(store_->read(entries_[i]), channels, out);
}

PrepareReport prepare_store(std::span<const matchio::PairRecord> manifest, const PrepareJob& job) {
  ArtifactStore store = ArtifactStore::create(
      job.out_dir, {job.params.input_size, job.params.ablation, job.params.matcher});
  if (job.params.ablation == Ablation::kSiftMasks && !job.mask_match_dir) {
    throw Error(ErrorCode::kInvalidParams, "sift-masks ablation needs a second match directory");
  }
  std::set<std::string> ids;
  for (const matchio::PairRecord& r : manifest) {
    if (!ids.insert(r.pair_id()).second) {
      throw Error(ErrorCode::kInvalidParams, "manifest lists pair " + r.pair_id() + " twice");
    }
  }

  enum class Outcome { kPending, kDone, kMissing, kFailed };
  std::vector<Outcome> outcome(manifest.size(), Outcome::kPending);
  std::vector<StoreEntry> entries(manifest.size());
  std::vector<std::string> messages(manifest.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto log = [&](const std::string& msg) {
    if (!job.log) return;
    std::lock_guard<std::mutex> lock(log_mutex);
    job.log(msg);
  };

  auto work = [&] {
    for (std::size_t i = next++; i < manifest.size(); i = next++) {
      const matchio::PairRecord& rec = manifest[i];
      const std::string pid = rec.pair_id();
      const std::filesystem::path match_file = job.match_dir / (pid + ".txt");
      if (!std::filesystem::exists(match_file)) {
        outcome[i] = Outcome::kMissing;
        messages[i] = pid + ": missing match file " + match_file.string();
        log("skip " + messages[i]);
        continue;
      }
      try {
        const Image a = load_image(job.image_dir / rec.image_a);
        Image b = load_image(job.image_dir / rec.image_b);
        if (rec.flip_applied) b = geometry::flip_horizontal(b, {}).first;
        const matchio::PairMatches pm = matchio::load_pair_matches(match_file);
        std::optional<matchio::PairMatches> mask_pm;
        if (job.params.ablation == Ablation::kSiftMasks) {
          mask_pm = matchio::load_pair_matches(*job.mask_match_dir / (pid + ".txt"));
        }
        PrepareParams params = job.params;
        params.verify.seed = pair_seed(job.params.verify.seed, pid);
        const raster::PairArtifacts art =
            prepare_pair(a, b, pm, params, pid, mask_pm ? &*mask_pm : nullptr);
        StoreEntry e;
        e.pair_id = pid;
        e.scene = rec.scene;
        e.label = rec.label;
        e.flip_applied = rec.flip_applied;
        e.image_a = rec.image_a;
        e.image_b = rec.image_b;
        entries[i] = store.write(std::move(e), art);
        outcome[i] = Outcome::kDone;
      } catch (const std::exception& ex) {
        outcome[i] = Outcome::kFailed;
        messages[i] = pid + ": " + ex.what();
        log("fail " + messages[i]);
      }
    }
  };
  const int workers = std::max(1, job.workers);
  std::vector<std::thread> threads;
  for (int w = 1; w < workers; ++w) threads.emplace_back(work);
  work();
  for (std::thread& t : threads) t.join();

  PrepareReport report;
  std::vector<StoreEntry> done;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    switch (outcome[i]) {
      case Outcome::kDone:
        done.push_back(std::move(entries[i]));
        ++report.prepared;
        break;
      case Outcome::kMissing: ++report.skipped_missing; break;
      case Outcome::kFailed: report.failures.push_back(messages[i]); break;
      case Outcome::kPending: break;
    }
  }
  store.commit(std::move(done));
  return report;
}

CorpusSummary write_synthetic_corpus(const std::filesystem::path& out_dir, const CorpusParams& params,
                                     const std::function<void(const std::string&)>& log) {
  if (params.num_scenes <= 0 || params.symmetries.empty()) {
    throw Error(ErrorCode::kInvalidParams, "corpus needs at least one scene and symmetry kind");
  }
  const std::filesystem::path image_dir = out_dir / "images";
  const std::filesystem::path match_dir = out_dir / "matches";
  const std::filesystem::path sift_dir = out_dir / "matches_sift";
  for (const auto& d : {image_dir, match_dir, sift_dir}) std::filesystem::create_directories(d);

  CorpusSummary summary;
  std::vector<data::CatalogEntry> catalog_entries;
  std::vector<matchio::PairRecord> records;
  for (int s = 0; s < params.num_scenes; ++s) {
    char name[16];
    std::snprintf(name, sizeof(name), "s%02d", s);
    synth::SynthParams sp = params.scene;
    sp.symmetry = params.symmetries[static_cast<std::size_t>(s) % params.symmetries.size()];
    const std::uint64_t scene_seed = mix_seed(params.seed, static_cast<std::uint64_t>(s));
    const synth::SyntheticScene scene = synth::synth_scene(scene_seed, sp, name);

    std::vector<data::CatalogEntry> entries;
    for (const synth::SynthImage& im : scene.images) {
      const std::string file = im.id + ".png";
      save_image(image_dir / file, im.image);
      entries.push_back({file, name, data::parse_direction(im.direction)});
    }
    const data::ImageCatalog catalog(entries);
    for (std::size_t k = 0; k < scene.pairs.size(); ++k) {
      const synth::SynthPair& p = scene.pairs[k];
      const std::string& fa = entries[static_cast<std::size_t>(p.image_a)].image_id;
      const std::string& fb = entries[static_cast<std::size_t>(p.image_b)].image_id;
      const data::MatchedPair mp{fa, fb, name};
      std::vector<matchio::PairRecord> built = data::build_pairs(catalog, std::span(&mp, 1));
      if (built.size() != 1) {
        throw Error(ErrorCode::kInvalidParams, "synthetic pair without a direction label");
      }
      matchio::PairRecord rec = built.front();
      if (p.flipped) rec = data::flip_augment(rec, data::FlipSide::kB);
      if (rec.label != p.label) {
        throw Error(ErrorCode::kInvalidParams, "catalog label disagrees with the generator");
      }
      const std::string pid = rec.pair_id();
      matchio::PairMatches pm;
      pm.name_a = fa;
      pm.name_b = fb;
      pm.matches = p.matches;
      matchio::write_pair_matches(match_dir / (pid + ".txt"), pm);
      matchio::PairMatches sift = synth::detector_style_matches(scene, p, mix_seed(scene_seed, k));
      sift.name_a = fa;
      sift.name_b = fb;
      matchio::write_pair_matches(sift_dir / (pid + ".txt"), sift);
      (p.flipped ? summary.flipped_pairs : summary.natural_pairs) += 1;
      records.push_back(std::move(rec));
    }
    summary.images += scene.images.size();
    catalog_entries.insert(catalog_entries.end(), entries.begin(), entries.end());
    summary.scene_names.push_back(name);
    ++summary.scenes;
    if (log) {
      log(std::string("scene ") + name + " (" + std::string(synth::symmetry_name(sp.symmetry)) +
          "): " + std::to_string(scene.images.size()) + " images, " +
          std::to_string(scene.pairs.size()) + " pairs");
    }
  }
  data::write_catalog(out_dir / "catalog.csv", data::ImageCatalog(catalog_entries));
  matchio::write_manifest(out_dir / "pairs.csv", records);
  return summary;
}

}  // namespace doppel::pipeline
