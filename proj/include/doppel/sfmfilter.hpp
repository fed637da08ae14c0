#pragma once

// Scene-graph construction, probability-threshold edge filtering,
// connectivity analysis and export of the surviving matches in the raw
// match-import text format of common SfM tools.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "doppel/types.hpp"

namespace doppel::sfm {

inline constexpr double kDefaultTau = 0.8;

struct Edge {
  std::string image_a;  // image_a < image_b
  std::string image_b;
  std::size_t num_matches = 0;
  std::optional<double> probability;
  friend bool operator==(const Edge&, const Edge&) = default;
};

struct SceneGraph {
  std::vector<std::string> nodes;  // sorted, unique
  std::vector<Edge> edges;         // sorted by (image_a, image_b)
};

struct VerifiedPair {
  std::string image_a;
  std::string image_b;
  std::size_t num_matches = 0;
  std::optional<double> probability;
};

// Nodes are every image named by a pair plus the optional roster.
// Throws DuplicateEdge when an unordered pair repeats, InvalidParams on a
// self-loop or a probability outside [0, 1].
SceneGraph build_scene_graph(std::span<const VerifiedPair> pairs,
                             std::span<const std::string> roster = {});

// Keeps exactly the edges with probability >= tau; nodes are unchanged.
// Throws MissingProbability naming the first unscored edge, InvalidParams
// for tau outside [0, 1].
SceneGraph filter_edges(const SceneGraph& graph, double tau);

// Undirected components, each sorted, ordered by their smallest id.
std::vector<std::vector<std::string>> connected_components(const SceneGraph& graph);

struct SweepRow {
  double tau = 0.0;
  std::size_t retained_edges = 0;
  std::vector<std::vector<std::string>> components;
};

inline const std::vector<double> kDefaultSweepTaus = {0.5, 0.6, 0.7, 0.8, 0.9, 0.97};

std::vector<SweepRow> threshold_sweep(const SceneGraph& graph,
                                      std::span<const double> taus = kDefaultSweepTaus);

// Per-image keypoint lists; a keypoint's index is its position.
class KeypointIndex {
 public:
  // Returns the index of `p` in `image`, appending it if new.
  std::uint32_t add(const std::string& image, const Keypoint& p);
  // Index of an existing keypoint; nullopt when absent.
  std::optional<std::uint32_t> find(const std::string& image, const Keypoint& p) const;
  const std::map<std::string, KeypointSet>& keypoints() const { return keypoints_; }

 private:
  std::map<std::string, KeypointSet> keypoints_;
  std::map<std::string, std::map<std::pair<double, double>, std::uint32_t>> lookup_;
};

using EdgeKey = std::pair<std::string, std::string>;  // ordered image_a < image_b

// Edge key with the images in canonical order; matches must then be given
// as (key.first endpoint, key.second endpoint).
EdgeKey edge_key(const std::string& a, const std::string& b);

// Indexes every endpoint of every edge's matches.
KeypointIndex build_keypoint_index(const std::map<EdgeKey, MatchSet>& matches);

struct ExportedPair {
  std::string image_a;
  std::string image_b;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> indices;
  friend bool operator==(const ExportedPair&, const ExportedPair&) = default;
};

// One block per retained edge: "<image_a> <image_b>", one "<idx_a> <idx_b>"
// line per match, blocks separated by a blank line. Throws MissingMatches
// when a retained edge has no match data or an endpoint is not indexed.
std::vector<ExportedPair> export_matches(std::ostream& out, const SceneGraph& graph,
                                         const std::map<EdgeKey, MatchSet>& matches,
                                         const KeypointIndex& index);
std::vector<ExportedPair> parse_match_export(std::istream& in, const std::string& source = "<stream>");

// Writes <dir>/<image>.txt per image: "<n> 128" then one
// "x y 1 0" + 128 zero-descriptor row per keypoint.
void write_keypoint_files(const std::filesystem::path& dir, const KeypointIndex& index);

// Graph CSV: image_a,image_b,num_matches,probability (empty when unset).
SceneGraph read_graph(const std::filesystem::path& path);
void write_graph(const std::filesystem::path& path, const SceneGraph& graph);

}  // namespace doppel::sfm
