#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doppel/csv.hpp"
#include "doppel/eval.hpp"
#include "doppel/matchio.hpp"
#include "doppel/sfmfilter.hpp"
#include "test_util.hpp"

namespace doppel {
namespace {

namespace fs = std::filesystem;

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
  std::string last_err_line() const {
    std::istringstream in(err);
    std::string line, last;
    while (std::getline(in, line)) {
      if (!line.empty()) last = line;
    }
    return last;
  }
};

RunResult run(const fs::path& scratch, const std::string& args) {
  const fs::path out = scratch / "stdout.txt", err = scratch / "stderr.txt";
  const std::string cmd = std::string("\"") + DOPPEL_CLI + "\" " + args + " >\"" + out.string() +
                          "\" 2>\"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = testing::read_file(out);
  r.err = testing::read_file(err);
  return r;
}

// synth -> split -> prepare -> train -> infer -> evaluate at toy scale.
void full_pipeline(const fs::path& root) {
  const std::string d = "--data-dir \"" + root.string() + "\" ";
  auto check = [&](const std::string& args) {
    const RunResult r = run(root, d + args);
    ASSERT_EQ(r.exit_code, 0) << args << "\n" << r.err;
  };
  check("synth --out corpus --scenes 4 --seed 7 --views 3 --width 160 --height 120");
  check("split --manifest corpus/pairs.csv --out split --test-scenes s03 --max-per-scene 20");
  check("prepare --manifest corpus/pairs.csv --images corpus/images --matches corpus/matches "
        "--out store --input-size 32 --workers 2");
  check("train --store store --manifest split/train.csv --val-store store --val-manifest split/test.csv --out run "
        "--epochs 1 --batch-size 8 --stem-channels 8 --widths 8,8,8 --seed 3");
  check("infer --store store --manifest split/test.csv --checkpoint run/model.ckpt --out scores");
  check("infer --store store --manifest split/test.csv --mode count --out count");
  check("evaluate --scores scores/scores.csv --out report");
}

TEST(Cli, EndToEndIsReproducible) {
  const fs::path a = testing::scratch_dir("cli_run_a");
  const fs::path b = testing::scratch_dir("cli_run_b");
  full_pipeline(a);
  full_pipeline(b);
  for (const char* f : {"corpus/pairs.csv", "split/train.csv", "split/test.csv", "store/index.csv",
                        "run/history.csv", "scores/scores.csv", "scores/graph.csv",
                        "count/scores.csv", "report/report.csv"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(testing::read_file(a / f), testing::read_file(b / f)) << f;
  }
  for (const auto& entry : fs::directory_iterator(a / "store" / "pairs")) {
    EXPECT_EQ(testing::read_file(entry.path()),
              testing::read_file(b / "store" / "pairs" / entry.path().filename()));
  }
  // Every command records its resolved configuration.
  for (const char* f : {"corpus/synth_config.ini", "store/prepare_config.ini", "run/train_config.ini",
                        "scores/infer_config.ini", "report/evaluate_config.ini"}) {
    EXPECT_TRUE(fs::exists(a / f)) << f;
  }
  const auto scores = eval::read_scores(a / "scores/scores.csv");
  for (const auto& s : scores) {
    EXPECT_GE(s.score, 0.0);
    EXPECT_LE(s.score, 1.0);
    EXPECT_EQ(s.scene, "s03");
  }
}

TEST(Cli, EvaluatePerfectRanker) {
  const fs::path dir = testing::scratch_dir("cli_eval");
  std::vector<eval::ScoredPair> scored;
  for (int i = 0; i < 10; ++i) {
    scored.push_back({"p" + std::to_string(i), i < 5 ? "x" : "y", i % 2 ? 0.9 : 0.1, i % 2 == 1});
  }
  eval::write_scores(dir / "scores.csv", scored);
  const RunResult r = run(dir, "evaluate --scores \"" + (dir / "scores.csv").string() + "\" --out \"" +
                                   (dir / "report").string() + "\"");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const csv::Table t = csv::read(dir / "report" / "report.csv");
  ASSERT_EQ(t.rows.size(), 3u);
  const std::size_t ap_col = t.column("ap");
  for (const auto& row : t.rows) EXPECT_EQ(std::stod(row[ap_col]), 1.0);
  EXPECT_NE(r.out.find("mean"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "report" / "pr_curve.csv"));
  EXPECT_TRUE(fs::exists(dir / "report" / "roc_curve.csv"));
}

TEST(Cli, FilterTauZeroExportsAllMatches) {
  const fs::path dir = testing::scratch_dir("cli_filter");
  const std::vector<sfm::VerifiedPair> pairs{{"a.jpg", "b.jpg", 2, 0.1}, {"b.jpg", "c.jpg", 1, 0.95}};
  sfm::write_graph(dir / "graph.csv", sfm::build_scene_graph(pairs));
  fs::create_directories(dir / "m");
  matchio::PairMatches ab{"a.jpg", "b.jpg", {}, {}, {{{1, 1}, {2, 2}, 1}, {{3, 3}, {4, 4}, 1}}};
  matchio::PairMatches cb{"c.jpg", "b.jpg", {}, {}, {{{5, 5}, {2, 2}, 1}}};  // stored reversed
  matchio::write_pair_matches(dir / "m" / "a__b.txt", ab);
  matchio::write_pair_matches(dir / "m" / "c__b.txt", cb);
  const std::string base = "filter --graph \"" + (dir / "graph.csv").string() + "\" --matches \"" +
                           (dir / "m").string() + "\" ";
  RunResult r = run(dir, base + "--tau 0 --out \"" + (dir / "all").string() + "\"");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  std::ifstream in(dir / "all" / "matches.txt");
  const auto exported = sfm::parse_match_export(in);
  ASSERT_EQ(exported.size(), 2u);
  EXPECT_EQ(exported[0].indices.size(), 2u);
  EXPECT_EQ(exported[1].image_a, "b.jpg");
  EXPECT_EQ(exported[1].indices.size(), 1u);
  EXPECT_TRUE(fs::exists(dir / "all" / "keypoints" / "b.jpg.txt"));

  r = run(dir, base + "--tau 0.8 --sweep 0.5,0.97 --out \"" + (dir / "strict").string() + "\"");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  std::ifstream strict(dir / "strict" / "matches.txt");
  EXPECT_EQ(sfm::parse_match_export(strict).size(), 1u);
  EXPECT_EQ(testing::read_file(dir / "strict" / "components.txt"), "a.jpg\nb.jpg c.jpg\n");
  EXPECT_EQ(csv::read(dir / "strict" / "sweep.csv").rows.size(), 2u);
}

TEST(Cli, ErrorsEndWithMachineReadableLine) {
  const fs::path dir = testing::scratch_dir("cli_errors");
  RunResult r = run(dir, "evaluate --scores \"" + (dir / "absent.csv").string() + "\" --out \"" +
                             (dir / "o").string() + "\"");
  EXPECT_NE(r.exit_code, 0);
  EXPECT_EQ(r.last_err_line().rfind("error: IoError: ", 0), 0u) << r.err;

  {
    std::ofstream(dir / "g.csv") << "image_a,image_b,num_matches,probability\na,b,3,\n";
  }
  r = run(dir, "filter --graph \"" + (dir / "g.csv").string() + "\" --out \"" + (dir / "f").string() + "\"");
  EXPECT_NE(r.exit_code, 0);
  EXPECT_EQ(r.last_err_line().rfind("error: MissingProbability: ", 0), 0u) << r.err;

  r = run(dir, "prepare --ablation sideways --out \"" + (dir / "p").string() + "\"");
  EXPECT_NE(r.exit_code, 0);
  EXPECT_EQ(r.last_err_line().rfind("error: ", 0), 0u) << r.err;

  r = run(dir, "frobnicate");
  EXPECT_NE(r.exit_code, 0);
  EXPECT_EQ(r.last_err_line().rfind("error: UsageError: ", 0), 0u) << r.err;
}

TEST(Cli, PrepareEmptyManifestAndMissingMatches) {
  const fs::path dir = testing::scratch_dir("cli_prepare");
  matchio::write_manifest(dir / "empty.csv", {});
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "matches");
  RunResult r = run(dir, "--data-dir \"" + dir.string() +
                             "\" prepare --manifest empty.csv --images images --matches matches --out s1");
  EXPECT_EQ(r.exit_code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "s1" / "index.csv"));

  const std::vector<matchio::PairRecord> one{{"x.png", "y.png", "s", matchio::Label::kPositive, false}};
  matchio::write_manifest(dir / "one.csv", one);
  r = run(dir, "--data-dir \"" + dir.string() +
                   "\" prepare --manifest one.csv --images images --matches matches --out s2");
  EXPECT_EQ(r.exit_code, 0) << r.err;
  EXPECT_NE(testing::read_file(dir / "s2" / "prepare_report.txt").find("skipped"), std::string::npos);
}

TEST(Cli, CurateFlagsInvertedImage) {
  const fs::path dir = testing::scratch_dir("cli_curate");
  std::ofstream cat(dir / "catalog.csv");
  cat << "image_id,scene,direction\n";
  std::vector<sfm::VerifiedPair> pairs;
  for (int c = 0; c < 2; ++c) {
    for (int i = 0; i < 6; ++i) {
      const std::string id = "c" + std::to_string(c) + "_" + std::to_string(i);
      std::string dirn = c == 0 ? "north" : "south";
      if (c == 0 && i == 2) dirn = "south";
      cat << id << ",s," << dirn << "\n";
      for (int j = i + 1; j < 6; ++j) {
        pairs.push_back({id, "c" + std::to_string(c) + "_" + std::to_string(j),
                         static_cast<std::size_t>(100 + 7 * i + 3 * j), 0.9});
      }
    }
  }
  cat.close();
  sfm::write_graph(dir / "graph.csv", sfm::build_scene_graph(pairs));
  const RunResult r = run(dir, "--data-dir \"" + dir.string() +
                                   "\" curate --catalog catalog.csv --graph graph.csv --out cur --k 3");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const csv::Table t = csv::read(dir / "cur" / "flagged.csv");
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.rows[0][t.column("image_id")], "c0_2");
}

}  // namespace
}  // namespace doppel
