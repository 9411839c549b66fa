#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "pmk/distort.hpp"
#include "pmk/imagecore.hpp"

namespace pmk {

inline constexpr const char* kToolVersion = "0.1.0";

enum class Split { train, val };

std::string_view to_string(Split s) noexcept;
Split split_from_string(std::string_view s);

/// One 2AFC record. Vote 0 means "x0 closer", 1 means "x1 closer". Paths are
/// relative to the dataset root. Provenance is absent for external records.
struct JudgmentTriplet {
  std::string id;
  std::string ref_path;
  std::string p0_path;
  std::string p1_path;
  std::vector<int> votes;
  Split split = Split::train;
  std::optional<Distortion> d0;
  std::optional<Distortion> d1;
  bool is_sentinel = false;
  /// Sentinels only: the side holding the low-severity patch.
  std::optional<int> correct;

  friend bool operator==(const JudgmentTriplet&, const JudgmentTriplet&) = default;
};

enum class JndRole { test, sentinel_identical, sentinel_noise, priming_same, priming_obvious, priming_different };

std::string_view to_string(JndRole r) noexcept;
JndRole jnd_role_from_string(std::string_view s);

struct JndPair {
  std::string id;
  std::string ref_path;
  std::string probe_path;
  bool truly_same = false;
  std::vector<int> votes_same;  // 1 = judged "same"
  JndRole role = JndRole::test;
  std::optional<DistortionSpec> spec;

  bool is_sentinel() const noexcept {
    return role == JndRole::sentinel_identical || role == JndRole::sentinel_noise;
  }

  friend bool operator==(const JndPair&, const JndPair&) = default;
};

/// Probability that x1 is judged closer. Throws missing_label on no votes.
double aggregate_votes(const JudgmentTriplet& t);
double aggregate_votes(const std::vector<int>& votes);
/// Majority of "same" votes. Throws missing_label on no votes and undefined
/// on an even split.
bool jnd_label(const JndPair& p);

/// Category used for per-provenance breakdowns: "base", "composed", "mixed"
/// or "external".
std::string triplet_category(const JudgmentTriplet& t);
/// Distortion kind of a JND pair, or "same"/"external".
std::string jnd_category(const JndPair& p);

// Serialization. One JSON object per line, fixed key order, LF endings.
std::string distortion_to_json(const Distortion& d);
Distortion distortion_from_json(const std::string& text);
std::string to_json_line(const JudgmentTriplet& t);
std::string to_json_line(const JndPair& p);
JudgmentTriplet triplet_from_json_line(const std::string& line);
JndPair jnd_pair_from_json_line(const std::string& line);

std::vector<JudgmentTriplet> read_triplet_index(const std::filesystem::path& file);
void write_triplet_index(const std::filesystem::path& file, const std::vector<JudgmentTriplet>& records);
std::vector<JndPair> read_jnd_index(const std::filesystem::path& file);
void write_jnd_index(const std::filesystem::path& file, const std::vector<JndPair>& pairs);

struct DatasetMeta {
  std::string kind;  // "2afc" or "jnd"
  std::uint64_t seed = 0;
  std::size_t count = 0;
  int patch_size = kDefaultPatchSize;
};

void write_meta(const std::filesystem::path& root, const DatasetMeta& meta);
DatasetMeta read_meta(const std::filesystem::path& root);

// Layout helpers.
std::filesystem::path triplet_index_path(const std::filesystem::path& root);
std::filesystem::path jnd_index_path(const std::filesystem::path& root);
std::filesystem::path vote_log_path(const std::filesystem::path& root);

struct Corpus {
  std::vector<std::string> names;
  std::vector<ImageBuffer> images;
};

/// Every .png/.ppm file in `dir`, sorted by file name.
Corpus load_corpus(const std::filesystem::path& dir);

inline constexpr double kSentinelLowSeverity = 0.1;
inline constexpr double kSentinelHighSeverity = 1.0;
inline constexpr std::size_t kSentinelsPerSession = 15;

struct SentinelPlan {
  DistortionSpec d0;
  DistortionSpec d1;
  int correct = 0;
};

/// Gaussian noise at 0.1 against 1.0 with the side chosen by seed; the
/// low-severity side is the correct answer.
std::vector<SentinelPlan> make_sentinels_2afc(std::size_t n, std::uint64_t seed);

struct Build2afcOptions {
  std::size_t n_triplets = 0;
  double val_fraction = 0.2;
  std::size_t n_sentinels = kSentinelsPerSession;
  std::uint64_t seed = 0;
  int patch_size = kDefaultPatchSize;
};

/// Writes meta.json, index.jsonl and patches/{ref,p0,p1}. Triplets come
/// first (train then val), sentinels last. Returns the records written.
std::vector<JudgmentTriplet> build_2afc_dataset(const std::filesystem::path& root, const Corpus& corpus,
                                                const std::vector<Distortion>& bank, const Build2afcOptions& opt);

struct BuildJndOptions {
  std::size_t n_pairs = 160;
  std::uint64_t seed = 0;
  int patch_size = kDefaultPatchSize;
  double max_severity = 0.5;
};

/// Writes meta.json, jnd/pairs.jsonl and patches/{ref,probe}: n_pairs test
/// pairs, 32 identical and 8 noise sentinels, and a 10-pair priming pool.
std::vector<JndPair> build_jnd_dataset(const std::filesystem::path& root, const Corpus& corpus,
                                       const BuildJndOptions& opt);

struct JndSessionConfig {
  std::size_t test = 160;
  std::size_t sentinels_identical = 32;
  std::size_t sentinels_noise = 8;
  std::size_t priming_same = 4;
  std::size_t priming_obvious = 1;
  std::size_t priming_different = 5;

  std::size_t priming() const noexcept { return priming_same + priming_obvious + priming_different; }
  std::size_t total() const noexcept { return priming() + test + sentinels_identical + sentinels_noise; }
};

/// Ordered item ids: the priming block first, then test pairs and sentinels
/// shuffled together. Throws config when a pool is too small.
std::vector<std::string> make_jnd_session(const std::vector<JndPair>& pairs, std::uint64_t seed,
                                          const JndSessionConfig& cfg = {});

struct TwoAfcSessionConfig {
  std::size_t judgments = 60;
  std::size_t sentinels = kSentinelsPerSession;
  std::size_t train_quota = 2;
  std::size_t val_quota = 5;
};

/// Picks the non-sentinel records furthest below their vote quota (ties by
/// seeded order), mixes in sentinels and shuffles. `vote_counts` maps ids to
/// votes already stored.
std::vector<std::string> make_2afc_session(const std::vector<JudgmentTriplet>& records,
                                           const std::map<std::string, std::size_t>& vote_counts,
                                           std::uint64_t seed, const TwoAfcSessionConfig& cfg = {});

/// At least 14 of every 15 sentinels correct. False when total is 0.
bool sentinel_pass(std::size_t correct, std::size_t total) noexcept;

// Vote log. Appended by the collection service, folded in by the loaders.
struct VoteEntry {
  std::string session;
  std::string item;
  int value = 0;  // 2AFC choice, or 1 for "same" in JND
  double latency_ms = 0.0;
  bool suspect = false;
};

struct SessionOutcome {
  std::string session;
  std::string kind;
  std::size_t done = 0;
  std::size_t sentinel_correct = 0;
  std::size_t sentinel_total = 0;
  bool complete = false;
  bool passed = false;
};

/// Append-only JSON-lines log with a single serialized writer.
class VoteLog {
 public:
  explicit VoteLog(std::filesystem::path file);

  void append(const VoteEntry& v);
  void append(const SessionOutcome& s);
  const std::filesystem::path& path() const noexcept { return file_; }

 private:
  void write_line(const std::string& line);

  std::filesystem::path file_;
  std::mutex mutex_;
};

struct VoteLogContents {
  std::vector<VoteEntry> votes;
  std::vector<SessionOutcome> sessions;
};

VoteLogContents read_vote_log(const std::filesystem::path& file);

/// Votes from complete sessions that passed sentinel QA (or every complete
/// session when keep_failed), keyed by item id in log order.
std::map<std::string, std::vector<int>> accepted_votes(const VoteLogContents& log, bool keep_failed = false);

/// Index records with accepted log votes appended.
std::vector<JudgmentTriplet> load_2afc_dataset(const std::filesystem::path& root, bool keep_failed = false);
std::vector<JndPair> load_jnd_dataset(const std::filesystem::path& root, bool keep_failed = false);

/// Reads one patch referenced by a record.
PatchTensor load_patch(const std::filesystem::path& root, const std::string& relative);

}  // namespace pmk
