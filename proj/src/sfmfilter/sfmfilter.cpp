#include "doppel/sfmfilter.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "doppel/csv.hpp"
#include "doppel/error.hpp"

namespace doppel::sfm {
namespace {

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::size_t> parent_;
};

std::string edge_name(const Edge& e) { return e.image_a + " -- " + e.image_b; }

void check_tau(double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) {
    throw Error(ErrorCode::kInvalidParams, "tau must lie in [0, 1]");
  }
}

}  // namespace

EdgeKey edge_key(const std::string& a, const std::string& b) {
  return a < b ? EdgeKey{a, b} : EdgeKey{b, a};
}

SceneGraph build_scene_graph(std::span<const VerifiedPair> pairs,
                             std::span<const std::string> roster) {
  std::set<std::string> nodes(roster.begin(), roster.end());
  std::map<EdgeKey, Edge> edges;
  for (const VerifiedPair& p : pairs) {
    if (p.image_a == p.image_b) {
      throw Error(ErrorCode::kInvalidParams, "self-loop on image " + p.image_a);
    }
    if (p.probability && !(*p.probability >= 0.0 && *p.probability <= 1.0)) {
      throw Error(ErrorCode::kInvalidParams,
                  "probability outside [0, 1] on " + p.image_a + " -- " + p.image_b);
    }
    const EdgeKey key = edge_key(p.image_a, p.image_b);
    Edge e{key.first, key.second, p.num_matches, p.probability};
    if (!edges.emplace(key, e).second) {
      throw Error(ErrorCode::kDuplicateEdge, "pair listed twice: " + edge_name(e));
    }
    nodes.insert(p.image_a);
    nodes.insert(p.image_b);
  }
  SceneGraph g;
  g.nodes.assign(nodes.begin(), nodes.end());
  for (auto& [key, e] : edges) g.edges.push_back(std::move(e));
  return g;
}

SceneGraph filter_edges(const SceneGraph& graph, double tau) {
  check_tau(tau);
  SceneGraph out;
  out.nodes = graph.nodes;
  for (const Edge& e : graph.edges) {
    if (!e.probability) {
      throw Error(ErrorCode::kMissingProbability, "edge has no probability: " + edge_name(e));
    }
    if (*e.probability >= tau) out.edges.push_back(e);
  }
  return out;
}

std::vector<std::vector<std::string>> connected_components(const SceneGraph& graph) {
  std::map<std::string, std::size_t> id;
  for (const std::string& n : graph.nodes) id.emplace(n, id.size());
  auto index_of = [&](const std::string& n) {
    auto it = id.find(n);
    if (it == id.end()) throw Error(ErrorCode::kInvalidParams, "edge names unknown node " + n);
    return it->second;
  };
  DisjointSets sets(graph.nodes.size());
  for (const Edge& e : graph.edges) sets.unite(index_of(e.image_a), index_of(e.image_b));
  // Nodes are sorted, so the root (smallest index) is each component's
  // smallest id and components come out ordered by it.
  std::map<std::size_t, std::vector<std::string>> groups;
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) groups[sets.find(i)].push_back(graph.nodes[i]);
  std::vector<std::vector<std::string>> out;
  for (auto& [root, members] : groups) out.push_back(std::move(members));
  return out;
}

std::vector<SweepRow> threshold_sweep(const SceneGraph& graph, std::span<const double> taus) {
  std::vector<SweepRow> rows;
  for (double tau : taus) {
    const SceneGraph filtered = filter_edges(graph, tau);
    rows.push_back({tau, filtered.edges.size(), connected_components(filtered)});
  }
  return rows;
}

std::uint32_t KeypointIndex::add(const std::string& image, const Keypoint& p) {
  auto& table = lookup_[image];
  auto [it, inserted] = table.emplace(std::pair{p.x, p.y}, 0);
  if (inserted) {
    KeypointSet& list = keypoints_[image];
    it->second = static_cast<std::uint32_t>(list.size());
    list.push_back(p);
  }
  return it->second;
}

std::optional<std::uint32_t> KeypointIndex::find(const std::string& image, const Keypoint& p) const {
  auto table = lookup_.find(image);
  if (table == lookup_.end()) return std::nullopt;
  auto it = table->second.find({p.x, p.y});
  if (it == table->second.end()) return std::nullopt;
  return it->second;
}

KeypointIndex build_keypoint_index(const std::map<EdgeKey, MatchSet>& matches) {
  KeypointIndex index;
  for (const auto& [key, set] : matches) {
    for (const Match& m : set) {
      index.add(key.first, m.a);
      index.add(key.second, m.b);
    }
  }
  return index;
}

std::vector<ExportedPair> export_matches(std::ostream& out, const SceneGraph& graph,
                                         const std::map<EdgeKey, MatchSet>& matches,
                                         const KeypointIndex& index) {
  std::vector<ExportedPair> exported;
  for (const Edge& e : graph.edges) {
    auto it = matches.find(edge_key(e.image_a, e.image_b));
    if (it == matches.end()) {
      throw Error(ErrorCode::kMissingMatches, "no match data for retained edge " + edge_name(e));
    }
    ExportedPair pair{e.image_a, e.image_b, {}};
    for (const Match& m : it->second) {
      const auto ia = index.find(e.image_a, m.a);
      const auto ib = index.find(e.image_b, m.b);
      if (!ia || !ib) {
        throw Error(ErrorCode::kMissingMatches,
                    "match endpoint without a keypoint index on edge " + edge_name(e));
      }
      pair.indices.emplace_back(*ia, *ib);
    }
    exported.push_back(std::move(pair));
  }
  for (std::size_t k = 0; k < exported.size(); ++k) {
    if (k > 0) out << '\n';
    out << exported[k].image_a << ' ' << exported[k].image_b << '\n';
    for (const auto& [a, b] : exported[k].indices) out << a << ' ' << b << '\n';
  }
  return exported;
}

std::vector<ExportedPair> parse_match_export(std::istream& in, const std::string& source) {
  std::vector<ExportedPair> out;
  std::string line;
  int line_no = 0;
  bool in_block = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) {
      in_block = false;
      continue;
    }
    std::istringstream fields(line);
    std::string first, second, extra;
    fields >> first >> second;
    if (second.empty() || (fields >> extra)) {
      throw Error(ErrorCode::kParseError,
                  source + ":" + std::to_string(line_no) + ": expected two fields");
    }
    if (!in_block) {
      out.push_back({first, second, {}});
      in_block = true;
      continue;
    }
    std::uint32_t a = 0, b = 0;
    const auto ra = std::from_chars(first.data(), first.data() + first.size(), a);
    const auto rb = std::from_chars(second.data(), second.data() + second.size(), b);
    if (ra.ec != std::errc() || ra.ptr != first.data() + first.size() || rb.ec != std::errc() ||
        rb.ptr != second.data() + second.size()) {
      throw Error(ErrorCode::kParseError,
                  source + ":" + std::to_string(line_no) + ": bad keypoint index pair");
    }
    out.back().indices.emplace_back(a, b);
  }
  return out;
}

void write_keypoint_files(const std::filesystem::path& dir, const KeypointIndex& index) {
  for (const auto& [image, points] : index.keypoints()) {
    const std::filesystem::path path = dir / (image + ".txt");
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
    out << points.size() << " 128\n";
    for (const Keypoint& p : points) {
      out << csv::format_number(p.x) << ' ' << csv::format_number(p.y) << " 1 0";
      for (int k = 0; k < 128; ++k) out << " 0";
      out << '\n';
    }
  }
}

SceneGraph read_graph(const std::filesystem::path& path) {
  const csv::Table table = csv::read(path, {"image_a", "image_b", "num_matches", "probability"});
  std::vector<VerifiedPair> pairs;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    const std::string where = path.string() + ":" + std::to_string(i + 2) + ": ";
    VerifiedPair p{row[0], row[1], 0, std::nullopt};
    const auto rc = std::from_chars(row[2].data(), row[2].data() + row[2].size(), p.num_matches);
    if (rc.ec != std::errc() || rc.ptr != row[2].data() + row[2].size()) {
      throw Error(ErrorCode::kParseError, where + "bad num_matches '" + row[2] + "'");
    }
    if (!row[3].empty()) {
      double v = 0.0;
      const auto rp = std::from_chars(row[3].data(), row[3].data() + row[3].size(), v);
      if (rp.ec != std::errc() || rp.ptr != row[3].data() + row[3].size()) {
        throw Error(ErrorCode::kParseError, where + "bad probability '" + row[3] + "'");
      }
      p.probability = v;
    }
    pairs.push_back(std::move(p));
  }
  return build_scene_graph(pairs);
}

void write_graph(const std::filesystem::path& path, const SceneGraph& graph) {
  csv::Table table;
  table.header = {"image_a", "image_b", "num_matches", "probability"};
  for (const Edge& e : graph.edges) {
    table.rows.push_back({e.image_a, e.image_b, std::to_string(e.num_matches),
                          e.probability ? csv::format_number(*e.probability) : std::string()});
  }
  csv::write(path, table);
}

}  // namespace doppel::sfm
