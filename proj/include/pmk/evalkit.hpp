#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pmk/dataset.hpp"

namespace pmk {

/// Distance between a reference and a candidate patch.
using PatchDistance = std::function<double(const PatchTensor& ref, const PatchTensor& x)>;

// 2AFC agreement.

struct TwoAfcItem {
  std::string id;
  double d0 = 0.0;
  double d1 = 0.0;
  double p_x0 = 0.0;  // fraction of votes for x0
  std::string category;
};

struct CategoryScore {
  double score = 0.0;
  std::size_t n = 0;
};

struct TwoAfcResult {
  double score = 0.0;
  std::size_t n = 0;
  std::map<std::string, CategoryScore> per_category;
};

/// p if the metric prefers x0, 1-p if it prefers x1, 0.5 on an exact tie.
double two_afc_credit(double d0, double d1, double p_x0) noexcept;
/// Mean credit over items. Empty input scores 0 with n = 0.
TwoAfcResult two_afc_score(std::span<const TwoAfcItem> items);

/// Mean of p^2 + (1-p)^2.
double human_ceiling(std::span<const double> p_x0);
/// Mean of max(p, 1-p): the score of a metric that always sides with the majority.
double oracle_maximum(std::span<const double> p_x0);

/// Distances for every labeled non-sentinel record, in record order.
/// Throws missing_label on a record without votes.
std::vector<TwoAfcItem> score_triplets(const std::filesystem::path& root, const std::vector<JudgmentTriplet>& records,
                                       const PatchDistance& metric, unsigned jobs = 1);
/// Vote fractions for x0 of every labeled non-sentinel record.
std::vector<double> vote_fractions(const std::vector<JudgmentTriplet>& records);

// JND precision/recall.

struct JndItem {
  std::string id;
  double distance = 0.0;
  bool same = false;
  std::string category;
};

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};

struct PrCurve {
  std::vector<PrPoint> points;  // one per rank
  double ap = 0.0;
};

/// Ranks by ascending distance (ties by id), positives are "same" items,
/// AP = sum over ranks of (R_n - R_{n-1}) * P_n. Throws undefined without positives.
PrCurve precision_recall(std::span<const JndItem> items);

struct JndResult {
  double map = 0.0;
  std::map<std::string, double> per_category;
  PrCurve pooled;
};

/// AP per category, averaged over the categories that contain a positive.
JndResult jnd_map(std::span<const JndItem> items);

/// Distances and majority labels for the labeled test pairs.
std::vector<JndItem> score_jnd_pairs(const std::filesystem::path& root, const std::vector<JndPair>& pairs,
                                     const PatchDistance& metric, unsigned jobs = 1);

// Correlations.

/// Fractional ranks starting at 1; ties get the mean of their positions.
std::vector<double> mid_ranks(std::span<const double> x);
/// Throws config on length mismatch, undefined on n < 2 or zero variance.
double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);

struct ScoreTable {
  std::vector<std::string> methods;
  std::vector<std::string> tasks;
  std::vector<std::vector<std::optional<double>>> values;  // methods x tasks
};

/// CSV with a header row ("method,<task>,...") and one row per method. Empty
/// cells are missing values.
ScoreTable parse_score_table(const std::string& csv);
ScoreTable read_score_table(const std::filesystem::path& file);

enum class CorrelationKind { pearson, spearman };

/// tasks x tasks matrix over pairwise-complete method rows. Throws undefined
/// when a pair has fewer than 2 complete rows.
std::vector<std::vector<double>> cross_task_correlation(const ScoreTable& table,
                                                        CorrelationKind kind = CorrelationKind::pearson);

struct MosRow {
  std::string ref;
  std::string distorted;
  double mos = 0.0;
};

/// CSV "ref,distorted,mos" with a header row; paths relative to the file.
std::vector<MosRow> read_mos_csv(const std::filesystem::path& file);

// Reports.

struct MetricReport {
  std::string name;
  std::optional<TwoAfcResult> two_afc;
  std::optional<JndResult> jnd;
};

struct Report {
  std::optional<double> human_ceiling;
  std::optional<double> oracle_maximum;
  std::size_t triplets = 0;
  std::size_t jnd_pairs = 0;
  std::vector<MetricReport> metrics;
};

/// "%.6g" formatting used for every number in reports.
std::string format_number(double v);

std::string report_json(const Report& r);
/// Columns: metric,two_afc,n,jnd_map. Reference rows (human_ceiling,
/// oracle_maximum) precede metric rows.
std::string report_csv(const Report& r);
/// Writes report.json and report.csv into `dir`.
void write_report(const std::filesystem::path& dir, const Report& r);

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Results must be
/// written into per-index slots by the caller.
void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn);

}  // namespace pmk
