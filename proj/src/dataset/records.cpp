#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pmk/dataset.hpp"
#include "pmk/error.hpp"

namespace pmk {

using ojson = nlohmann::ordered_json;

std::string_view to_string(Split s) noexcept { return s == Split::train ? "train" : "val"; }

Split split_from_string(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  throw Error(ErrorKind::config, "unknown split '" + std::string(s) + "'");
}

std::string_view to_string(JndRole r) noexcept {
  switch (r) {
    case JndRole::test: return "test";
    case JndRole::sentinel_identical: return "sentinel_identical";
    case JndRole::sentinel_noise: return "sentinel_noise";
    case JndRole::priming_same: return "priming_same";
    case JndRole::priming_obvious: return "priming_obvious";
    case JndRole::priming_different: return "priming_different";
  }
  return "test";
}

JndRole jnd_role_from_string(std::string_view s) {
  for (auto r : {JndRole::test, JndRole::sentinel_identical, JndRole::sentinel_noise, JndRole::priming_same,
                 JndRole::priming_obvious, JndRole::priming_different})
    if (to_string(r) == s) return r;
  throw Error(ErrorKind::config, "unknown JND role '" + std::string(s) + "'");
}

double aggregate_votes(const std::vector<int>& votes) {
  if (votes.empty()) throw Error(ErrorKind::missing_label, "record has no votes");
  double sum = 0.0;
  for (int v : votes) sum += v;
  return sum / static_cast<double>(votes.size());
}

double aggregate_votes(const JudgmentTriplet& t) {
  if (t.votes.empty()) throw Error(ErrorKind::missing_label, "triplet " + t.id + " has no votes");
  return aggregate_votes(t.votes);
}

bool jnd_label(const JndPair& p) {
  if (p.votes_same.empty()) throw Error(ErrorKind::missing_label, "pair " + p.id + " has no votes");
  std::size_t same = 0;
  for (int v : p.votes_same) same += v != 0;
  const std::size_t different = p.votes_same.size() - same;
  if (same == different) throw Error(ErrorKind::undefined, "pair " + p.id + " has a tied vote");
  return same > different;
}

std::string triplet_category(const JudgmentTriplet& t) {
  if (!t.d0 || !t.d1) return "external";
  const bool c0 = std::holds_alternative<ComposedDistortion>(*t.d0);
  const bool c1 = std::holds_alternative<ComposedDistortion>(*t.d1);
  if (c0 && c1) return "composed";
  if (!c0 && !c1) return "base";
  return "mixed";
}

std::string jnd_category(const JndPair& p) {
  if (p.truly_same) return "same";
  if (!p.spec) return "external";
  return std::string(to_string(p.spec->kind));
}

namespace {

ojson spec_json(const DistortionSpec& s) {
  ojson j;
  j["kind"] = std::string(to_string(s.kind));
  j["severity"] = s.severity;
  j["seed"] = s.seed;
  return j;
}

ojson distortion_json(const Distortion& d) {
  if (const auto* s = std::get_if<DistortionSpec>(&d)) return spec_json(*s);
  const auto& c = std::get<ComposedDistortion>(d);
  ojson j;
  j["first"] = spec_json(c.first);
  j["second"] = spec_json(c.second);
  return j;
}

DistortionSpec parse_spec(const ojson& j) {
  const auto kind = distortion_kind_from_string(j.at("kind").get<std::string>());
  if (!kind) throw Error(ErrorKind::config, "unknown distortion kind '" + j.at("kind").get<std::string>() + "'");
  return DistortionSpec{*kind, j.at("severity").get<double>(), j.at("seed").get<std::uint64_t>()};
}

Distortion parse_distortion(const ojson& j) {
  if (j.contains("first")) return ComposedDistortion{parse_spec(j.at("first")), parse_spec(j.at("second"))};
  return parse_spec(j);
}

ojson parse_line(const std::string& line) {
  try {
    return ojson::parse(line);
  } catch (const ojson::exception& e) {
    throw Error(ErrorKind::decode, std::string("malformed record: ") + e.what());
  }
}

template <typename Fn>
auto field(const std::string& what, Fn fn) {
  try {
    return fn();
  } catch (const ojson::exception& e) {
    throw Error(ErrorKind::decode, "malformed " + what + ": " + e.what());
  }
}

}  // namespace

std::string distortion_to_json(const Distortion& d) { return distortion_json(d).dump(); }

Distortion distortion_from_json(const std::string& text) {
  const auto j = parse_line(text);
  return field("distortion", [&] { return parse_distortion(j); });
}

std::string to_json_line(const JudgmentTriplet& t) {
  ojson j;
  j["id"] = t.id;
  j["ref"] = t.ref_path;
  j["p0"] = t.p0_path;
  j["p1"] = t.p1_path;
  j["split"] = std::string(to_string(t.split));
  j["votes"] = t.votes;
  // Cached; readers recompute from votes.
  if (!t.votes.empty()) j["h"] = aggregate_votes(t.votes);
  if (t.d0 && t.d1) {
    j["provenance"] = {{"d0", distortion_json(*t.d0)}, {"d1", distortion_json(*t.d1)}};
  } else {
    j["provenance"] = "external";
  }
  j["is_sentinel"] = t.is_sentinel;
  if (t.correct) j["correct"] = *t.correct;
  return j.dump();
}

JudgmentTriplet triplet_from_json_line(const std::string& line) {
  const auto j = parse_line(line);
  return field("triplet", [&] {
    JudgmentTriplet t;
    t.id = j.at("id").get<std::string>();
    t.ref_path = j.at("ref").get<std::string>();
    t.p0_path = j.at("p0").get<std::string>();
    t.p1_path = j.at("p1").get<std::string>();
    t.split = split_from_string(j.at("split").get<std::string>());
    t.votes = j.at("votes").get<std::vector<int>>();
    for (int v : t.votes)
      if (v != 0 && v != 1) throw Error(ErrorKind::decode, "triplet " + t.id + ": votes must be 0 or 1");
    const auto& prov = j.at("provenance");
    if (prov.is_object()) {
      t.d0 = parse_distortion(prov.at("d0"));
      t.d1 = parse_distortion(prov.at("d1"));
    }
    t.is_sentinel = j.value("is_sentinel", false);
    if (j.contains("correct")) t.correct = j.at("correct").get<int>();
    return t;
  });
}

std::string to_json_line(const JndPair& p) {
  ojson j;
  j["id"] = p.id;
  j["ref"] = p.ref_path;
  j["probe"] = p.probe_path;
  j["truly_same"] = p.truly_same;
  j["role"] = std::string(to_string(p.role));
  j["votes_same"] = p.votes_same;
  if (p.spec) {
    j["provenance"] = spec_json(*p.spec);
  } else {
    j["provenance"] = p.truly_same ? "same" : "external";
  }
  j["is_sentinel"] = p.is_sentinel();
  return j.dump();
}

JndPair jnd_pair_from_json_line(const std::string& line) {
  const auto j = parse_line(line);
  return field("JND pair", [&] {
    JndPair p;
    p.id = j.at("id").get<std::string>();
    p.ref_path = j.at("ref").get<std::string>();
    p.probe_path = j.at("probe").get<std::string>();
    p.truly_same = j.at("truly_same").get<bool>();
    p.role = jnd_role_from_string(j.at("role").get<std::string>());
    p.votes_same = j.at("votes_same").get<std::vector<int>>();
    if (j.at("provenance").is_object()) p.spec = parse_spec(j.at("provenance"));
    return p;
  });
}

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + file.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(line);
  return lines;
}

template <typename T>
void write_lines(const std::filesystem::path& file, const std::vector<T>& items) {
  std::string out;
  for (const auto& item : items) {
    out += to_json_line(item);
    out += '\n';
  }
  write_file(file, std::span(reinterpret_cast<const std::uint8_t*>(out.data()), out.size()));
}

}  // namespace

std::vector<JudgmentTriplet> read_triplet_index(const std::filesystem::path& file) {
  std::vector<JudgmentTriplet> out;
  for (const auto& line : read_lines(file)) out.push_back(triplet_from_json_line(line));
  return out;
}

void write_triplet_index(const std::filesystem::path& file, const std::vector<JudgmentTriplet>& records) {
  write_lines(file, records);
}

std::vector<JndPair> read_jnd_index(const std::filesystem::path& file) {
  std::vector<JndPair> out;
  for (const auto& line : read_lines(file)) out.push_back(jnd_pair_from_json_line(line));
  return out;
}

void write_jnd_index(const std::filesystem::path& file, const std::vector<JndPair>& pairs) { write_lines(file, pairs); }

void write_meta(const std::filesystem::path& root, const DatasetMeta& meta) {
  ojson j;
  j["tool"] = "pmk";
  j["version"] = kToolVersion;
  j["kind"] = meta.kind;
  j["seed"] = meta.seed;
  j["count"] = meta.count;
  j["patch_size"] = meta.patch_size;
  j["severity_table_hash"] = severity_table_hash();
  j["severity_table"] = severity_table();
  const std::string text = j.dump(2) + "\n";
  write_file(root / "meta.json", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

DatasetMeta read_meta(const std::filesystem::path& root) {
  const auto bytes = read_file(root / "meta.json");
  const auto j = parse_line(std::string(bytes.begin(), bytes.end()));
  return field("meta.json", [&] {
    DatasetMeta m;
    m.kind = j.at("kind").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.count = j.at("count").get<std::size_t>();
    m.patch_size = j.value("patch_size", kDefaultPatchSize);
    return m;
  });
}

std::filesystem::path triplet_index_path(const std::filesystem::path& root) { return root / "index.jsonl"; }
std::filesystem::path jnd_index_path(const std::filesystem::path& root) { return root / "jnd" / "pairs.jsonl"; }
std::filesystem::path vote_log_path(const std::filesystem::path& root) { return root / "votes.jsonl"; }

Corpus load_corpus(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw Error(ErrorKind::config, "corpus directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (entry.is_regular_file() && (ext == ".png" || ext == ".ppm")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  Corpus c;
  for (const auto& f : files) {
    c.names.push_back(f.filename().string());
    c.images.push_back(read_image(f));
  }
  return c;
}

PatchTensor load_patch(const std::filesystem::path& root, const std::string& relative) {
  return to_tensor(read_image(root / relative));
}

}  // namespace pmk
