#include "doppel/matchio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "doppel/csv.hpp"
#include "doppel/error.hpp"

namespace doppel::matchio {
namespace {

[[noreturn]] void parse_fail(const std::string& source, int line, const std::string& what) {
  throw Error(ErrorCode::kParseError, source + ":" + std::to_string(line) + ": " + what);
}

double to_double(std::string_view tok, const std::string& source, int line) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    parse_fail(source, line, "not a number: '" + std::string(tok) + "'");
  }
  return v;
}

long to_count(std::string_view tok, const std::string& source, int line) {
  long v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || v < 0) {
    parse_fail(source, line, "not a count: '" + std::string(tok) + "'");
  }
  return v;
}

std::vector<std::string_view> tokens(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

std::string path_key(const std::string& path) {
  std::filesystem::path p(path);
  std::string key = (p.parent_path() / p.stem()).generic_string();
  for (char& c : key) {
    if (c == '/' || c == '\\' || c == ' ' || c == ',') c = '-';
  }
  return key;
}

}  // namespace

std::string_view label_name(Label label) {
  switch (label) {
    case Label::kPositive: return "positive";
    case Label::kNegative: return "negative";
    case Label::kUnknown: return "unknown";
  }
  return "unknown";
}

Label parse_label(std::string_view text) {
  if (text == "positive" || text == "1") return Label::kPositive;
  if (text == "negative" || text == "0") return Label::kNegative;
  if (text == "unknown") return Label::kUnknown;
  throw Error(ErrorCode::kParseError, "unknown label '" + std::string(text) + "'");
}

std::string PairRecord::pair_id() const {
  std::string id = path_key(image_a) + "__" + path_key(image_b);
  if (flip_applied) id += "__flip";
  return id;
}

std::vector<PairRecord> read_manifest(const std::filesystem::path& path) {
  const csv::Table table = csv::read(path, {"image_a", "image_b", "scene", "label", "flip_applied"});
  std::vector<PairRecord> out;
  out.reserve(table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    PairRecord r;
    r.image_a = row[0];
    r.image_b = row[1];
    r.scene = row[2];
    try {
      r.label = parse_label(row[3]);
    } catch (const Error& e) {
      throw Error(ErrorCode::kParseError,
                  path.string() + ":" + std::to_string(i + 2) + ": " + e.what());
    }
    const std::string& f = row[4];
    if (f == "1" || f == "true") {
      r.flip_applied = true;
    } else if (f == "0" || f == "false") {
      r.flip_applied = false;
    } else {
      throw Error(ErrorCode::kParseError,
                  path.string() + ":" + std::to_string(i + 2) + ": bad flip_applied '" + f + "'");
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, std::span<const PairRecord> records) {
  csv::Table table;
  table.header = {"image_a", "image_b", "scene", "label", "flip_applied"};
  for (const PairRecord& r : records) {
    table.rows.push_back({r.image_a, r.image_b, r.scene, std::string(label_name(r.label)),
                          r.flip_applied ? "1" : "0"});
  }
  csv::write(path, table);
}

PairMatches parse_pair_matches(std::istream& in, const std::string& source) {
  PairMatches pm;
  std::string line;
  int line_no = 0;
  bool have_header = false;
  long declared_ka = 0, declared_kb = 0, declared_m = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tok = tokens(line);
    if (tok.empty() || tok[0].starts_with('#')) continue;
    if (!have_header) {
      if (tok[0] != "DGMATCH") {
        throw Error(ErrorCode::kVersionMismatch,
                    source + ":" + std::to_string(line_no) + ": unknown header '" +
                        std::string(tok[0]) + "'");
      }
      if (tok.size() != 7) parse_fail(source, line_no, "header needs 7 fields");
      if (tok[1] != std::to_string(kMatchFileVersion)) {
        throw Error(ErrorCode::kVersionMismatch, source + ":" + std::to_string(line_no) +
                                                     ": unsupported version " + std::string(tok[1]));
      }
      pm.name_a = tok[2];
      pm.name_b = tok[3];
      declared_ka = to_count(tok[4], source, line_no);
      declared_kb = to_count(tok[5], source, line_no);
      declared_m = to_count(tok[6], source, line_no);
      pm.keypoints_a.reserve(static_cast<std::size_t>(declared_ka));
      pm.keypoints_b.reserve(static_cast<std::size_t>(declared_kb));
      pm.matches.reserve(static_cast<std::size_t>(declared_m));
      have_header = true;
      continue;
    }
    if (tok[0] == "K") {
      if (tok.size() != 4 || (tok[1] != "A" && tok[1] != "B")) {
        parse_fail(source, line_no, "keypoint row must be 'K A|B <x> <y>'");
      }
      const Keypoint p{to_double(tok[2], source, line_no), to_double(tok[3], source, line_no)};
      auto& dst = tok[1] == "A" ? pm.keypoints_a : pm.keypoints_b;
      const long limit = tok[1] == "A" ? declared_ka : declared_kb;
      if (static_cast<long>(dst.size()) >= limit) {
        parse_fail(source, line_no, "more keypoint rows for image " + std::string(tok[1]) +
                                        " than the declared " + std::to_string(limit));
      }
      dst.push_back(p);
    } else if (tok[0] == "M") {
      if (tok.size() != 6) parse_fail(source, line_no, "match row must be 'M <xa> <ya> <xb> <yb> <score>'");
      if (static_cast<long>(pm.matches.size()) >= declared_m) {
        parse_fail(source, line_no,
                   "more match rows than the declared " + std::to_string(declared_m));
      }
      Match m;
      m.a = {to_double(tok[1], source, line_no), to_double(tok[2], source, line_no)};
      m.b = {to_double(tok[3], source, line_no), to_double(tok[4], source, line_no)};
      m.score = to_double(tok[5], source, line_no);
      if (!(m.score >= 0.0 && m.score <= 1.0)) parse_fail(source, line_no, "score outside [0,1]");
      pm.matches.push_back(m);
    } else {
      parse_fail(source, line_no, "unknown row type '" + std::string(tok[0]) + "'");
    }
  }
  if (!have_header) {
    throw Error(ErrorCode::kVersionMismatch, source + ": missing DGMATCH header");
  }
  if (static_cast<long>(pm.keypoints_a.size()) != declared_ka ||
      static_cast<long>(pm.keypoints_b.size()) != declared_kb ||
      static_cast<long>(pm.matches.size()) != declared_m) {
    parse_fail(source, line_no,
               "declared counts (" + std::to_string(declared_ka) + ", " +
                   std::to_string(declared_kb) + ", " + std::to_string(declared_m) +
                   ") disagree with rows (" + std::to_string(pm.keypoints_a.size()) + ", " +
                   std::to_string(pm.keypoints_b.size()) + ", " +
                   std::to_string(pm.matches.size()) + ")");
  }
  return pm;
}

PairMatches load_pair_matches(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open match file " + path.string());
  return parse_pair_matches(in, path.string());
}

void write_pair_matches(std::ostream& out, const PairMatches& pm) {
  auto num = [](double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
  };
  out << "DGMATCH " << kMatchFileVersion << ' ' << pm.name_a << ' ' << pm.name_b << ' '
      << pm.keypoints_a.size() << ' ' << pm.keypoints_b.size() << ' ' << pm.matches.size()
      << '\n';
  for (const Keypoint& p : pm.keypoints_a) out << "K A " << num(p.x) << ' ' << num(p.y) << '\n';
  for (const Keypoint& p : pm.keypoints_b) out << "K B " << num(p.x) << ' ' << num(p.y) << '\n';
  for (const Match& m : pm.matches) {
    out << "M " << num(m.a.x) << ' ' << num(m.a.y) << ' ' << num(m.b.x) << ' ' << num(m.b.y)
        << ' ' << num(m.score) << '\n';
  }
}

void write_pair_matches(const std::filesystem::path& path, const PairMatches& pm) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write match file " + path.string());
  write_pair_matches(out, pm);
}

VerifiedMatches verify_pair(std::span<const Match> matches, const VerifyParams& params) {
  VerifiedMatches out;
  for (const Match& m : matches) {
    if (m.score >= params.score_threshold) out.all.push_back(m);
  }
  if (!params.geometric) {
    out.verified = out.all;
    return out;
  }
  try {
    const geometry::EpipolarModel model = geometry::estimate_fundamental(
        out.all, params.reproj_error, params.confidence, params.seed);
    for (std::size_t i = 0; i < out.all.size(); ++i) {
      if (model.inliers[i]) out.verified.push_back(out.all[i]);
    }
  } catch (const Error&) {
    out.verified.clear();
    // Without camera motion the epipolar geometry is undefined, yet the
    // identity explains every correspondence; accept them all in that case.
    const bool static_view =
        !out.all.empty() && std::all_of(out.all.begin(), out.all.end(), [&](const Match& m) {
          return std::hypot(m.a.x - m.b.x, m.a.y - m.b.y) <= params.reproj_error;
        });
    if (static_view) out.verified = out.all;
  }
  return out;
}

}  // namespace doppel::matchio
