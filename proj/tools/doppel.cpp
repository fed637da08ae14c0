// doppel: command-line entry points for the disambiguation pipeline.
//
//   synth     write a synthetic corpus (images, match files, catalog, manifest)
//   split     scene-disjoint train/test manifests with per-scene balancing
//   prepare   matches + images -> artifact store of classifier inputs
//   train     train the pair classifier on an artifact store
//   infer     score pairs (classifier or match-count baselines)
//   evaluate  per-scene AP / ROC AUC report and curves from a scores CSV
//   filter    prune scene-graph edges by probability and export matches
//   curate    flag mislabeled images with K-NN over match adjacency
//
// Every command writes its resolved configuration next to its outputs. On
// failure the final stderr line is "error: <ErrorName>: <message>".

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "doppel/csv.hpp"
#include "doppel/data.hpp"
#include "doppel/error.hpp"
#include "doppel/eval.hpp"
#include "doppel/matchio.hpp"
#include "doppel/model.hpp"
#include "doppel/pipeline.hpp"
#include "doppel/sfmfilter.hpp"
#include "doppel/synth.hpp"

namespace fs = std::filesystem;
using namespace doppel;

namespace {

struct Common {
  std::string data_dir;
  bool quiet = false;
};

Common g_common;

fs::path resolve(const std::string& p) {
  if (p.empty()) return {};
  fs::path path(p);
  if (path.is_relative() && !g_common.data_dir.empty()) return fs::path(g_common.data_dir) / path;
  return path;
}

void log(const std::string& msg) {
  if (!g_common.quiet) std::cerr << msg << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << text;
}

void write_config(const CLI::App& cmd, const fs::path& dir) {
  fs::create_directories(dir);
  write_text(dir / (cmd.get_name() + "_config.ini"), cmd.config_to_str(true, false));
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

pipeline::Ablation ablation_or_none(const std::string& text) {
  return text.empty() ? pipeline::Ablation::kNone : pipeline::parse_ablation(text);
}

std::vector<std::string> manifest_ids(const std::string& manifest) {
  std::vector<std::string> ids;
  for (const matchio::PairRecord& r : matchio::read_manifest(resolve(manifest))) ids.push_back(r.pair_id());
  return ids;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::string out = "corpus";
  int scenes = 40;
  std::uint64_t seed = 7;
  int views = 6;
  int width = 400;
  int height = 300;
  double noise = 0.5;
  double flip_fraction = 0.3;
  std::string symmetries = "two-way,four-way,replica";
};

void add_synth(CLI::App& app, SynthArgs& a) {
  auto* c = app.add_subcommand("synth", "Write a synthetic corpus with mirror-symmetric scenes");
  c->add_option("--out", a.out, "Output directory")->capture_default_str();
  c->add_option("--scenes", a.scenes, "Number of scenes")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--seed", a.seed, "Random seed")->capture_default_str();
  c->add_option("--views", a.views, "Views per side")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--width", a.width, "Image width")->capture_default_str();
  c->add_option("--height", a.height, "Image height")->capture_default_str();
  c->add_option("--noise", a.noise, "Match localization noise (px)")->capture_default_str();
  c->add_option("--flip-fraction", a.flip_fraction, "Share of positives also emitted flipped")
      ->capture_default_str();
  c->add_option("--symmetries", a.symmetries, "Comma-separated symmetry kinds cycled over scenes")
      ->capture_default_str();
  c->callback([c, &a] {
    pipeline::CorpusParams p;
    p.num_scenes = a.scenes;
    p.seed = a.seed;
    p.scene.views_per_side = a.views;
    p.scene.image_width = a.width;
    p.scene.image_height = a.height;
    p.scene.noise = a.noise;
    p.scene.flip_fraction = a.flip_fraction;
    p.symmetries.clear();
    for (const std::string& s : split_list(a.symmetries)) p.symmetries.push_back(synth::parse_symmetry(s));
    const fs::path out = resolve(a.out);
    const pipeline::CorpusSummary s = pipeline::write_synthetic_corpus(out, p, log);
    write_config(*c, out);
    log("wrote " + std::to_string(s.scenes) + " scenes, " + std::to_string(s.images) + " images, " +
        std::to_string(s.natural_pairs) + " natural + " + std::to_string(s.flipped_pairs) +
        " flipped pairs to " + out.string());
  });
}

// ---------------------------------------------------------------- split

struct SplitArgs {
  std::string manifest = "corpus/pairs.csv";
  std::string out = "split";
  std::string test_scenes;
  double test_fraction = 0.25;
  std::size_t max_per_scene = data::kDefaultMaxPerScene;
  std::uint64_t seed = 7;
};

void add_split(CLI::App& app, SplitArgs& a) {
  auto* c = app.add_subcommand("split", "Scene-disjoint, per-scene balanced train/test manifests");
  c->add_option("--manifest", a.manifest, "Pairs manifest")->capture_default_str();
  c->add_option("--out", a.out, "Output directory (train.csv, test.csv)")->capture_default_str();
  c->add_option("--test-scenes", a.test_scenes, "Comma-separated held-out scenes");
  c->add_option("--test-fraction", a.test_fraction,
                "Share of scenes held out (last scenes by name) when --test-scenes is empty")
      ->capture_default_str();
  c->add_option("--max-per-scene", a.max_per_scene, "Per-scene pair cap")->capture_default_str();
  c->add_option("--seed", a.seed, "Sampling seed")->capture_default_str();
  c->callback([c, &a] {
    const std::vector<matchio::PairRecord> pairs = matchio::read_manifest(resolve(a.manifest));
    const std::vector<std::string> named = split_list(a.test_scenes);
    std::set<std::string> test(named.begin(), named.end());
    if (test.empty()) {
      std::set<std::string> scenes;
      for (const auto& p : pairs) scenes.insert(p.scene);
      if (!(a.test_fraction > 0.0 && a.test_fraction < 1.0)) {
        throw Error(ErrorCode::kInvalidParams, "test fraction must lie in (0, 1)");
      }
      const auto n_test = static_cast<std::size_t>(std::llround(a.test_fraction * scenes.size()));
      auto it = scenes.end();
      for (std::size_t k = 0; k < n_test && it != scenes.begin(); ++k) test.insert(*--it);
    }
    const data::Split split = data::split_and_balance(pairs, a.max_per_scene, test, a.seed);
    const fs::path out = resolve(a.out);
    fs::create_directories(out);
    matchio::write_manifest(out / "train.csv", split.train);
    matchio::write_manifest(out / "test.csv", split.test);
    write_config(*c, out);
    log("train: " + std::to_string(split.train.size()) + " pairs, test: " +
        std::to_string(split.test.size()) + " pairs");
  });
}

// ---------------------------------------------------------------- prepare

struct PrepareArgs {
  std::string manifest = "corpus/pairs.csv";
  std::string images = "corpus/images";
  std::string matches = "corpus/matches";
  std::string mask_matches;
  std::string out = "store";
  int input_size = raster::kCanvasSize;
  std::string ablation;
  int workers = 1;
  std::uint64_t seed = 0;
  double score_threshold = matchio::kDefaultScoreThreshold;
  double reproj_error = geometry::kDefaultReprojError;
  double confidence = geometry::kDefaultConfidence;
  double affine_inlier_error = geometry::kDefaultAffineInlierError;
  std::string matcher = "loftr-style";
};

int run_prepare(const CLI::App& c, const PrepareArgs& a) {
  pipeline::PrepareJob job;
  job.image_dir = resolve(a.images);
  job.match_dir = resolve(a.matches);
  if (!a.mask_matches.empty()) job.mask_match_dir = resolve(a.mask_matches);
  job.out_dir = resolve(a.out);
  job.params.input_size = a.input_size;
  job.params.ablation = ablation_or_none(a.ablation);
  job.params.verify.score_threshold = a.score_threshold;
  job.params.verify.reproj_error = a.reproj_error;
  job.params.verify.confidence = a.confidence;
  job.params.verify.seed = a.seed;
  job.params.affine_inlier_error = a.affine_inlier_error;
  job.params.matcher = a.matcher;
  job.workers = a.workers;
  job.log = log;
  const std::vector<matchio::PairRecord> manifest = matchio::read_manifest(resolve(a.manifest));
  const pipeline::PrepareReport report = pipeline::prepare_store(manifest, job);
  write_config(c, job.out_dir);
  std::ostringstream summary;
  summary << "prepared " << report.prepared << ", skipped (missing matches) "
          << report.skipped_missing << ", failed " << report.failures.size() << '\n';
  for (const std::string& f : report.failures) summary << "failed " << f << '\n';
  write_text(job.out_dir / "prepare_report.txt", summary.str());
  std::cerr << summary.str();
  if (!report.failures.empty()) {
    throw Error(ErrorCode::kInvalidParams,
                std::to_string(report.failures.size()) + " pair(s) failed to prepare");
  }
  return 0;
}

void add_prepare(CLI::App& app, PrepareArgs& a) {
  auto* c = app.add_subcommand("prepare", "Verify, align and rasterize pairs into an artifact store");
  c->add_option("--manifest", a.manifest, "Pairs manifest")->capture_default_str();
  c->add_option("--images", a.images, "Image directory")->capture_default_str();
  c->add_option("--matches", a.matches, "Match file directory (<pair_id>.txt)")->capture_default_str();
  c->add_option("--mask-matches", a.mask_matches, "Second match source for the sift-masks ablation");
  c->add_option("--out", a.out, "Artifact store directory")->capture_default_str();
  c->add_option("--input-size", a.input_size, "Classifier input size")->capture_default_str()
      ->check(CLI::PositiveNumber);
  c->add_option("--ablation", a.ablation, "no-masks|no-rgb|no-align|no-geo-verify|sift-masks");
  c->add_option("--workers", a.workers, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--seed", a.seed, "RANSAC seed")->capture_default_str();
  c->add_option("--score-threshold", a.score_threshold, "Matcher confidence cut")->capture_default_str();
  c->add_option("--reproj-error", a.reproj_error, "Epipolar inlier threshold (px)")->capture_default_str();
  c->add_option("--confidence", a.confidence, "RANSAC confidence")->capture_default_str();
  c->add_option("--affine-inlier-error", a.affine_inlier_error, "Alignment inlier threshold (px)")
      ->capture_default_str();
  c->add_option("--matcher", a.matcher, "Matcher name recorded in the store")->capture_default_str();
  c->callback([c, &a] { run_prepare(*c, a); });
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string store = "store";
  std::string manifest;
  std::string val_store;
  std::string val_manifest;
  std::string out = "run";
  std::string ablation;
  model::TrainConfig cfg;
  model::LossConfig loss;
  int stem_channels = 64;
  std::string widths = "128,256,512";
};

void add_train(CLI::App& app, TrainArgs& a) {
  auto* c = app.add_subcommand("train", "Train the pair classifier");
  c->add_option("--store", a.store, "Artifact store")->capture_default_str();
  c->add_option("--manifest", a.manifest, "Restrict training to these pairs");
  c->add_option("--val-store", a.val_store, "Validation artifact store");
  c->add_option("--val-manifest", a.val_manifest, "Restrict validation to these pairs");
  c->add_option("--out", a.out, "Run directory")->capture_default_str();
  c->add_option("--ablation", a.ablation, "Input ablation (no-masks|no-rgb)");
  c->add_option("--epochs", a.cfg.epochs, "Epochs")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--batch-size", a.cfg.batch_size, "Batch size")->capture_default_str()
      ->check(CLI::PositiveNumber);
  c->add_option("--lr-start", a.cfg.lr_start, "Initial learning rate")->capture_default_str();
  c->add_option("--lr-end", a.cfg.lr_end, "Final learning rate")->capture_default_str();
  c->add_option("--decay-start", a.cfg.decay_start_epoch, "Last constant-rate epoch")->capture_default_str();
  c->add_option("--alpha", a.loss.alpha, "Focal loss positive weight")->capture_default_str();
  c->add_option("--gamma", a.loss.gamma, "Focal loss focusing exponent")->capture_default_str();
  c->add_option("--seed", a.cfg.seed, "Initialization and shuffling seed")->capture_default_str();
  c->add_option("--stem-channels", a.stem_channels, "Stem width")->capture_default_str();
  c->add_option("--widths", a.widths, "Residual block widths")->capture_default_str();
  c->callback([c, &a] {
    const pipeline::ArtifactStore store = pipeline::ArtifactStore::open(resolve(a.store));
    const std::vector<std::string> ids = a.manifest.empty() ? std::vector<std::string>{}
                                                            : manifest_ids(a.manifest);
    const pipeline::StoreDataset data =
        a.manifest.empty() ? pipeline::StoreDataset(store) : pipeline::StoreDataset(store, ids);
    std::optional<pipeline::ArtifactStore> val_store;
    std::optional<pipeline::StoreDataset> val;
    if (!a.val_store.empty()) {
      val_store = pipeline::ArtifactStore::open(resolve(a.val_store));
      if (a.val_manifest.empty()) {
        val.emplace(*val_store);
      } else {
        const std::vector<std::string> vids = manifest_ids(a.val_manifest);
        val.emplace(*val_store, vids);
      }
    }
    model::ArchConfig arch;
    arch.channels = pipeline::input_config(ablation_or_none(a.ablation));
    arch.stem_channels = a.stem_channels;
    const std::vector<std::string> w = split_list(a.widths);
    if (w.size() != 3) throw Error(ErrorCode::kInvalidParams, "--widths needs three values");
    for (int k = 0; k < 3; ++k) arch.widths[static_cast<std::size_t>(k)] = std::stoi(w[static_cast<std::size_t>(k)]);
    model::TrainConfig cfg = a.cfg;
    cfg.input_size = store.meta().input_size;
    const fs::path out = resolve(a.out);
    write_config(*c, out);

    csv::Table history;
    history.header = {"epoch", "learning_rate", "loss", "ap", "ap_source"};
    model::TrainOptions opts;
    opts.validation = val ? &*val : nullptr;
    opts.checkpoint_dir = out;
    opts.on_epoch = [&](const model::EpochRecord& r) {
      history.rows.push_back({std::to_string(r.epoch), csv::format_number(r.learning_rate),
                              csv::format_number(r.loss), r.ap ? csv::format_number(*r.ap) : "",
                              r.ap_is_validation ? "validation" : "train"});
      csv::write(out / "history.csv", history);
      log("epoch " + std::to_string(r.epoch) + " lr " + csv::format_number(r.learning_rate) +
          " loss " + csv::format_number(r.loss) +
          (r.ap ? " ap " + csv::format_number(*r.ap) : std::string()));
    };
    log("training on " + std::to_string(data.size()) + " pairs");
    model::TrainResult result = model::train(data, arch, cfg, a.loss, opts);
    model::save_checkpoint(out / "model.ckpt", result.model, {cfg, a.loss, cfg.epochs});
  });
}

// ---------------------------------------------------------------- infer

struct InferArgs {
  std::string store = "store";
  std::string manifest;
  std::string checkpoint = "run/model.ckpt";
  std::string mode = "classifier";
  std::string denominator = "sum";
  std::string ablation;
  std::string out = "scores";
  int batch_size = 16;
};

void add_infer(CLI::App& app, InferArgs& a) {
  auto* c = app.add_subcommand("infer", "Score pairs with the classifier or a match-count baseline");
  c->add_option("--store", a.store, "Artifact store")->capture_default_str();
  c->add_option("--manifest", a.manifest, "Restrict scoring to these pairs");
  c->add_option("--checkpoint", a.checkpoint, "Classifier checkpoint")->capture_default_str();
  c->add_option("--mode", a.mode, "classifier|count|ratio")->capture_default_str()
      ->check(CLI::IsMember({"classifier", "count", "ratio"}));
  c->add_option("--denominator", a.denominator, "Ratio baseline keypoint denominator (sum|min)")
      ->capture_default_str()->check(CLI::IsMember({"sum", "min"}));
  c->add_option("--ablation", a.ablation, "Expected input ablation of the checkpoint (no-masks|no-rgb)");
  c->add_option("--out", a.out, "Output directory (scores.csv, graph.csv)")->capture_default_str();
  c->add_option("--batch-size", a.batch_size, "Inference batch size")->capture_default_str();
  c->callback([c, &a] {
    const pipeline::ArtifactStore store = pipeline::ArtifactStore::open(resolve(a.store));
    const std::vector<std::string> ids = a.manifest.empty() ? std::vector<std::string>{}
                                                            : manifest_ids(a.manifest);
    const pipeline::StoreDataset data =
        a.manifest.empty() ? pipeline::StoreDataset(store) : pipeline::StoreDataset(store, ids);
    std::vector<eval::ScoredPair> scored;
    if (a.mode == "classifier") {
      std::optional<raster::InputConfig> expected;
      if (!a.ablation.empty()) expected = pipeline::input_config(pipeline::parse_ablation(a.ablation));
      const model::LoadedCheckpoint ck = model::load_checkpoint(resolve(a.checkpoint), expected);
      const std::vector<double> probs = model::predict(ck.model, data, a.batch_size);
      for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& e = data.entry(i);
        scored.push_back({e.pair_id, e.scene, probs[i], e.label == matchio::Label::kPositive});
      }
    } else {
      std::vector<eval::BaselineInput> inputs;
      for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& e = data.entry(i);
        inputs.push_back({e.pair_id, e.scene, e.label == matchio::Label::kPositive,
                          e.num_matches_verified, e.num_keypoints_a, e.num_keypoints_b});
      }
      scored = eval::baseline_scores(
          inputs, a.mode == "count" ? eval::BaselineMode::kCount : eval::BaselineMode::kRatio,
          a.denominator == "min" ? eval::KeypointDenominator::kMin : eval::KeypointDenominator::kSum);
    }
    const fs::path out = resolve(a.out);
    write_config(*c, out);
    eval::write_scores(out / "scores.csv", scored);
    if (a.mode == "classifier") {
      // Scene-graph edges for the filter command; mirrored training pairs
      // are not edges of any real reconstruction.
      csv::Table graph;
      graph.header = {"image_a", "image_b", "num_matches", "probability"};
      for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& e = data.entry(i);
        if (e.flip_applied) continue;
        graph.rows.push_back({e.image_a, e.image_b, std::to_string(e.num_matches_verified),
                              csv::format_number(scored[i].score)});
      }
      csv::write(out / "graph.csv", graph);
    }
    log("scored " + std::to_string(scored.size()) + " pairs");
  });
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
  std::string scores = "scores/scores.csv";
  std::string out = "report";
};

void add_evaluate(CLI::App& app, EvaluateArgs& a) {
  auto* c = app.add_subcommand("evaluate", "Per-scene AP / ROC AUC report with PR and ROC curves");
  c->add_option("--scores", a.scores, "Scores CSV (pair_id,scene,label,score)")->capture_default_str();
  c->add_option("--out", a.out, "Report directory")->capture_default_str();
  c->callback([c, &a] {
    const std::vector<eval::ScoredPair> scored = eval::read_scores(resolve(a.scores));
    const eval::SceneReport report = eval::per_scene_report(scored);
    const fs::path out = resolve(a.out);
    write_config(*c, out);
    write_text(out / "report.csv", eval::render_csv(report));
    write_text(out / "report.txt", eval::render_text(report));
    eval::write_curve(out / "pr_curve.csv", eval::pr_curve(scored), "recall", "precision");
    eval::write_curve(out / "roc_curve.csv", eval::roc_curve(scored), "fpr", "tpr");
    if (!g_common.quiet) std::cout << eval::render_text(report);
  });
}

// ---------------------------------------------------------------- filter

struct FilterArgs {
  std::string graph = "scores/graph.csv";
  std::string matches;
  std::string out = "filtered";
  double tau = sfm::kDefaultTau;
  std::string sweep;
};

// Match files are looked up as <image_a>__<image_b>.txt in either order.
std::map<sfm::EdgeKey, MatchSet> load_edge_matches(const sfm::SceneGraph& graph, const fs::path& dir) {
  std::map<sfm::EdgeKey, MatchSet> out;
  for (const sfm::Edge& e : graph.edges) {
    const matchio::PairRecord forward{e.image_a, e.image_b, {}, matchio::Label::kUnknown, false};
    const matchio::PairRecord reverse{e.image_b, e.image_a, {}, matchio::Label::kUnknown, false};
    if (const fs::path f = dir / (forward.pair_id() + ".txt"); fs::exists(f)) {
      out[{e.image_a, e.image_b}] = matchio::load_pair_matches(f).matches;
    } else if (const fs::path r = dir / (reverse.pair_id() + ".txt"); fs::exists(r)) {
      MatchSet swapped;
      for (const Match& m : matchio::load_pair_matches(r).matches) swapped.push_back({m.b, m.a, m.score});
      out[{e.image_a, e.image_b}] = std::move(swapped);
    }
  }
  return out;
}

std::string render_components(const std::vector<std::vector<std::string>>& comps) {
  std::string text;
  for (const auto& comp : comps) {
    for (std::size_t k = 0; k < comp.size(); ++k) text += (k ? " " : "") + comp[k];
    text += '\n';
  }
  return text;
}

void add_filter(CLI::App& app, FilterArgs& a) {
  auto* c = app.add_subcommand("filter", "Drop scene-graph edges below tau and export the surviving matches");
  c->add_option("--graph", a.graph, "Graph CSV (image_a,image_b,num_matches,probability)")
      ->capture_default_str();
  c->add_option("--matches", a.matches, "Match file directory; enables the match export");
  c->add_option("--out", a.out, "Output directory")->capture_default_str();
  c->add_option("--tau", a.tau, "Probability threshold")->capture_default_str();
  c->add_option("--sweep", a.sweep, "Comma-separated thresholds for a sweep report");
  c->callback([c, &a] {
    const sfm::SceneGraph graph = sfm::read_graph(resolve(a.graph));
    const sfm::SceneGraph kept = sfm::filter_edges(graph, a.tau);
    const fs::path out = resolve(a.out);
    write_config(*c, out);
    sfm::write_graph(out / "filtered_graph.csv", kept);
    write_text(out / "components.txt", render_components(sfm::connected_components(kept)));
    if (!a.matches.empty()) {
      const std::map<sfm::EdgeKey, MatchSet> matches = load_edge_matches(kept, resolve(a.matches));
      const sfm::KeypointIndex index = sfm::build_keypoint_index(matches);
      std::ofstream exp(out / "matches.txt");
      if (!exp) throw Error(ErrorCode::kIoError, "cannot write " + (out / "matches.txt").string());
      sfm::export_matches(exp, kept, matches, index);
      sfm::write_keypoint_files(out / "keypoints", index);
    }
    if (!a.sweep.empty()) {
      std::vector<double> taus;
      for (const std::string& t : split_list(a.sweep)) taus.push_back(std::stod(t));
      csv::Table table;
      table.header = {"tau", "retained_edges", "components"};
      for (const sfm::SweepRow& row : sfm::threshold_sweep(graph, taus)) {
        table.rows.push_back({csv::format_number(row.tau), std::to_string(row.retained_edges),
                              std::to_string(row.components.size())});
      }
      csv::write(out / "sweep.csv", table);
    }
    log("kept " + std::to_string(kept.edges.size()) + " of " + std::to_string(graph.edges.size()) +
        " edges at tau " + csv::format_number(a.tau));
  });
}

// ---------------------------------------------------------------- curate

struct CurateArgs {
  std::string catalog = "corpus/catalog.csv";
  std::string graph = "scores/graph.csv";
  std::string out = "curate";
  int k = data::kDefaultNeighbors;
};

void add_curate(CLI::App& app, CurateArgs& a) {
  auto* c = app.add_subcommand("curate", "Flag images whose direction label disagrees with their K nearest neighbours");
  c->add_option("--catalog", a.catalog, "Catalog CSV (image_id,scene,direction)")->capture_default_str();
  c->add_option("--graph", a.graph, "Graph CSV; num_matches gives the adjacency weights")
      ->capture_default_str();
  c->add_option("--out", a.out, "Output directory (flagged.csv)")->capture_default_str();
  c->add_option("--k", a.k, "Neighbours")->capture_default_str();
  c->callback([c, &a] {
    const data::ImageCatalog catalog = data::read_catalog(resolve(a.catalog));
    const sfm::SceneGraph graph = sfm::read_graph(resolve(a.graph));
    std::map<std::string, std::vector<const data::CatalogEntry*>> scenes;
    for (const data::CatalogEntry& e : catalog.entries()) scenes[e.scene].push_back(&e);
    std::map<std::string, std::pair<std::string, std::size_t>> where;  // image -> (scene, index)
    for (auto& [scene, members] : scenes) {
      for (std::size_t i = 0; i < members.size(); ++i) where[members[i]->image_id] = {scene, i};
    }
    std::map<std::string, Eigen::MatrixXd> adjacency;
    for (auto& [scene, members] : scenes) {
      const auto n = static_cast<Eigen::Index>(members.size());
      adjacency[scene] = Eigen::MatrixXd::Zero(n, n);
    }
    for (const sfm::Edge& e : graph.edges) {
      auto ia = where.find(e.image_a);
      auto ib = where.find(e.image_b);
      if (ia == where.end() || ib == where.end()) {
        throw Error(ErrorCode::kUnknownScene, "graph edge names an image missing from the catalog: " +
                                                  e.image_a + " -- " + e.image_b);
      }
      if (ia->second.first != ib->second.first) continue;
      auto& m = adjacency[ia->second.first];
      const auto i = static_cast<Eigen::Index>(ia->second.second);
      const auto j = static_cast<Eigen::Index>(ib->second.second);
      m(i, j) = m(j, i) = static_cast<double>(e.num_matches);
    }
    csv::Table flagged;
    flagged.header = {"image_id", "scene", "direction"};
    for (auto& [scene, members] : scenes) {
      if (static_cast<int>(members.size()) < a.k + 1) {
        log("scene " + scene + ": fewer than K + 1 images, skipped");
        continue;
      }
      std::vector<data::Direction> labels;
      for (const auto* e : members) labels.push_back(e->direction);
      for (std::size_t i : data::knn_curate(adjacency[scene], labels, a.k)) {
        flagged.rows.push_back({members[i]->image_id, scene,
                                std::string(data::direction_name(members[i]->direction))});
      }
    }
    const fs::path out = resolve(a.out);
    write_config(*c, out);
    csv::write(out / "flagged.csv", flagged);
    log("flagged " + std::to_string(flagged.rows.size()) + " image(s)");
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visual disambiguation pipeline for scenes with repeated and symmetric structures"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Key=value configuration file; flags override it");
  app.add_option("--data-dir", g_common.data_dir, "Root for relative paths")->envname("DG_DATA_DIR");
  app.add_flag("--quiet", g_common.quiet, "Suppress progress logging");

  SynthArgs synth_args;
  SplitArgs split_args;
  PrepareArgs prepare_args;
  TrainArgs train_args;
  InferArgs infer_args;
  EvaluateArgs evaluate_args;
  FilterArgs filter_args;
  CurateArgs curate_args;
  add_synth(app, synth_args);
  add_split(app, split_args);
  add_prepare(app, prepare_args);
  add_train(app, train_args);
  add_infer(app, infer_args);
  add_evaluate(app, evaluate_args);
  add_filter(app, filter_args);
  add_curate(app, curate_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: UsageError: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << error_name(e.code()) << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: InternalError: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
