#include <fstream>

#include <json.hpp>

#include "pmk/dataset.hpp"
#include "pmk/error.hpp"

namespace pmk {

using ojson = nlohmann::ordered_json;

VoteLog::VoteLog(std::filesystem::path file) : file_(std::move(file)) {
  if (file_.has_parent_path()) std::filesystem::create_directories(file_.parent_path());
}

void VoteLog::write_line(const std::string& line) {
  std::lock_guard lock(mutex_);
  std::ofstream out(file_, std::ios::binary | std::ios::app);
  if (!out) throw Error(ErrorKind::io, "cannot append to " + file_.string());
  out << line << '\n';
  out.flush();
  if (!out) throw Error(ErrorKind::io, "write failed on " + file_.string());
}

void VoteLog::append(const VoteEntry& v) {
  ojson j;
  j["type"] = "vote";
  j["session"] = v.session;
  j["item"] = v.item;
  j["value"] = v.value;
  j["latency_ms"] = v.latency_ms;
  j["suspect"] = v.suspect;
  write_line(j.dump());
}

void VoteLog::append(const SessionOutcome& s) {
  ojson j;
  j["type"] = "session";
  j["session"] = s.session;
  j["kind"] = s.kind;
  j["done"] = s.done;
  j["sentinel_correct"] = s.sentinel_correct;
  j["sentinel_total"] = s.sentinel_total;
  j["complete"] = s.complete;
  j["passed"] = s.passed;
  write_line(j.dump());
}

VoteLogContents read_vote_log(const std::filesystem::path& file) {
  VoteLogContents out;
  std::ifstream in(file, std::ios::binary);
  if (!in) return out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      const auto j = ojson::parse(line);
      if (j.at("type") == "vote") {
        out.votes.push_back(VoteEntry{j.at("session"), j.at("item"), j.at("value"), j.at("latency_ms"), j.at("suspect")});
      } else {
        out.sessions.push_back(SessionOutcome{j.at("session"), j.at("kind"), j.at("done"), j.at("sentinel_correct"),
                                              j.at("sentinel_total"), j.at("complete"), j.at("passed")});
      }
    } catch (const ojson::exception& e) {
      throw Error(ErrorKind::decode, file.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

std::map<std::string, std::vector<int>> accepted_votes(const VoteLogContents& log, bool keep_failed) {
  std::map<std::string, const SessionOutcome*> outcome;
  for (const auto& s : log.sessions) outcome[s.session] = &s;
  std::map<std::string, std::vector<int>> out;
  for (const auto& v : log.votes) {
    const auto it = outcome.find(v.session);
    if (it == outcome.end() || !it->second->complete) continue;
    if (!it->second->passed && !keep_failed) continue;
    out[v.item].push_back(v.value);
  }
  return out;
}

std::vector<JudgmentTriplet> load_2afc_dataset(const std::filesystem::path& root, bool keep_failed) {
  auto records = read_triplet_index(triplet_index_path(root));
  const auto extra = accepted_votes(read_vote_log(vote_log_path(root)), keep_failed);
  for (auto& r : records)
    if (auto it = extra.find(r.id); it != extra.end()) r.votes.insert(r.votes.end(), it->second.begin(), it->second.end());
  return records;
}

std::vector<JndPair> load_jnd_dataset(const std::filesystem::path& root, bool keep_failed) {
  auto pairs = read_jnd_index(jnd_index_path(root));
  const auto extra = accepted_votes(read_vote_log(vote_log_path(root)), keep_failed);
  for (auto& p : pairs)
    if (auto it = extra.find(p.id); it != extra.end())
      p.votes_same.insert(p.votes_same.end(), it->second.begin(), it->second.end());
  return pairs;
}

}  // namespace pmk
