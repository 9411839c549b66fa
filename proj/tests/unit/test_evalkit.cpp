#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "pmk/error.hpp"
#include "pmk/evalkit.hpp"
#include "support/fixtures.hpp"

namespace pmk {
namespace {

template <typename Fn>
ErrorKind kind_of(Fn fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::io;
}

TEST(TwoAfc, CreditRule) {
  EXPECT_EQ(two_afc_credit(0.1, 0.2, 0.8), 0.8);
  EXPECT_DOUBLE_EQ(two_afc_credit(0.3, 0.2, 0.8), 0.2);
  EXPECT_EQ(two_afc_credit(0.2, 0.2, 0.8), 0.5);
}

TEST(TwoAfc, MatchesPerTripletOracle) {
  Rng rng(1);
  std::vector<TwoAfcItem> items;
  std::vector<std::vector<int>> votes;
  for (int i = 0; i < 100; ++i) {
    std::vector<int> v(2 + rng.below(4));
    for (int& x : v) x = static_cast<int>(rng.below(2));
    votes.push_back(v);
    const double d0 = static_cast<double>(rng.below(5));
    const double d1 = static_cast<double>(rng.below(5));
    items.push_back({std::to_string(i), d0, d1, 1.0 - aggregate_votes(v), i % 3 ? "base" : "composed"});
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto x0 = std::count(votes[i].begin(), votes[i].end(), 0);
    const double p = static_cast<double>(x0) / static_cast<double>(votes[i].size());
    double credit = 0.5;
    if (items[i].d0 < items[i].d1) credit = p;
    if (items[i].d0 > items[i].d1) credit = 1.0 - p;
    sum += credit;
  }
  const auto r = two_afc_score(items);
  EXPECT_EQ(r.n, 100u);
  EXPECT_EQ(r.score, sum / 100.0);
  EXPECT_EQ(r.per_category.at("composed").n, 34u);
  EXPECT_EQ(r.per_category.at("base").n, 66u);
  EXPECT_NEAR(r.per_category.at("composed").score * 34 + r.per_category.at("base").score * 66, sum, 1e-12);
}

TEST(TwoAfc, HumanCeilingValues) {
  for (auto [p, expected] : {std::pair{0.5, 0.5}, {1.0, 1.0}, {0.8, 0.68}, {0.0, 1.0}}) {
    const std::vector<double> ps{p};
    EXPECT_NEAR(human_ceiling(ps), expected, 1e-15) << p;
  }
}

TEST(TwoAfc, CeilingNeverExceedsOracle) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const std::vector<double> p{rng.uniform()};
    EXPECT_LE(human_ceiling(p), oracle_maximum(p) + 1e-15);
  }
}

TEST(TwoAfc, MajorityOracleReachesMaximum) {
  Rng rng(3);
  std::vector<TwoAfcItem> items;
  std::vector<double> ps;
  for (int i = 0; i < 200; ++i) {
    const double p = static_cast<double>(rng.below(6)) / 5.0;
    ps.push_back(p);
    const double d0 = p > 0.5 ? 0.0 : (p < 0.5 ? 1.0 : 0.5);
    items.push_back({std::to_string(i), d0, 0.5, p, "x"});
  }
  EXPECT_DOUBLE_EQ(two_afc_score(items).score, oracle_maximum(ps));
}

// Counts every prefix independently; AP = mean precision at each positive.
double brute_force_ap(const std::vector<JndItem>& items) {
  auto sorted = items;
  std::sort(sorted.begin(), sorted.end(), [](const JndItem& a, const JndItem& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.id < b.id);
  });
  int positives = 0;
  for (const auto& i : sorted) positives += i.same;
  double ap = 0.0;
  for (std::size_t k = 1; k <= sorted.size(); ++k) {
    if (!sorted[k - 1].same) continue;
    int hits = 0;
    for (std::size_t j = 0; j < k; ++j) hits += sorted[j].same;
    ap += static_cast<double>(hits) / static_cast<double>(k);
  }
  return ap / positives;
}

std::vector<JndItem> random_jnd(std::size_t n, Rng& rng, int levels = 7) {
  std::vector<JndItem> items;
  for (std::size_t i = 0; i < n; ++i) {
    char id[8];
    std::snprintf(id, sizeof id, "%04zu", i);
    items.push_back({id, static_cast<double>(rng.below(levels)), rng.uniform() < 0.35, i % 2 ? "blur" : "noise"});
  }
  items[0].same = true;
  items[1].same = true;
  return items;
}

TEST(Jnd, PerfectSeparation) {
  const std::vector<JndItem> items{{"a", 0.1, true, ""}, {"b", 0.2, true, ""}, {"c", 0.9, false, ""}, {"d", 1.0, false, ""}};
  EXPECT_EQ(precision_recall(items).ap, 1.0);
}

TEST(Jnd, SinglePositiveRankedSecond) {
  const std::vector<JndItem> items{{"a", 0.1, false, ""}, {"b", 0.2, true, ""}, {"c", 0.9, false, ""}, {"d", 1.0, false, ""}};
  EXPECT_EQ(precision_recall(items).ap, 0.5);
}

TEST(Jnd, TiesBrokenById) {
  const std::vector<JndItem> a{{"b", 0.5, true, ""}, {"a", 0.5, false, ""}};
  EXPECT_EQ(precision_recall(a).ap, 0.5);
  const std::vector<JndItem> b{{"a", 0.5, true, ""}, {"b", 0.5, false, ""}};
  EXPECT_EQ(precision_recall(b).ap, 1.0);
}

TEST(Jnd, MatchesBruteForceOracle) {
  Rng rng(4);
  for (std::size_t n : {12u, 100u}) {
    for (int trial = 0; trial < 20; ++trial) {
      const auto items = random_jnd(n, rng);
      const auto curve = precision_recall(items);
      EXPECT_NEAR(curve.ap, brute_force_ap(items), 1e-12);
      EXPECT_GE(curve.ap, 0.0);
      EXPECT_LE(curve.ap, 1.0);
      for (std::size_t i = 1; i < curve.points.size(); ++i)
        EXPECT_GE(curve.points[i].recall, curve.points[i - 1].recall);
      EXPECT_EQ(curve.points.back().recall, 1.0);
    }
  }
}

TEST(Jnd, InvariantUnderMonotoneTransform) {
  Rng rng(5);
  auto items = random_jnd(60, rng, 1000);
  const double before = jnd_map(items).map;
  for (auto& i : items) i.distance = std::exp(3.0 * i.distance / 1000.0) + 2.0;
  EXPECT_EQ(jnd_map(items).map, before);
}

TEST(Jnd, NoPositivesIsUndefined) {
  const std::vector<JndItem> items{{"a", 0.1, false, ""}, {"b", 0.2, false, ""}};
  EXPECT_EQ(kind_of([&] { precision_recall(items); }), ErrorKind::undefined);
  EXPECT_EQ(kind_of([&] { jnd_map(items); }), ErrorKind::undefined);
}

TEST(Jnd, CategoriesAveragedSkippingThoseWithoutPositives) {
  const std::vector<JndItem> items{
      {"a", 0.1, true, "blur"},   {"b", 0.2, false, "blur"},  {"c", 0.3, false, "noise"},
      {"d", 0.4, true, "noise"},  {"e", 0.5, false, "shift"}, {"f", 0.6, false, "shift"},
  };
  const auto r = jnd_map(items);
  EXPECT_EQ(r.per_category.size(), 2u);
  EXPECT_EQ(r.per_category.at("blur"), 1.0);
  EXPECT_EQ(r.per_category.at("noise"), 0.5);
  EXPECT_EQ(r.map, 0.75);
}

TEST(Jnd, RandomRankingApproachesPrevalence) {
  Rng rng(6);
  std::vector<JndItem> items;
  for (int i = 0; i < 100; ++i) items.push_back({std::to_string(1000 + i), 0.0, i < 30, ""});
  double total = 0.0;
  for (int s = 0; s < 1000; ++s) {
    for (auto& it : items) it.distance = rng.uniform();
    total += precision_recall(items).ap;
  }
  EXPECT_NEAR(total / 1000.0, 0.3, 0.05);
}

TEST(Correlation, MidRanks) {
  const std::vector<double> x{3.0, 1.0, 2.0, 2.0};
  EXPECT_EQ(mid_ranks(x), (std::vector<double>{4.0, 1.0, 2.5, 2.5}));
}

TEST(Correlation, SpearmanExamples) {
  const std::vector<double> up{1, 2, 3, 4, 5}, sq{1, 4, 9, 16, 25}, down{5, 4, 3, 2, 1};
  EXPECT_EQ(spearman(up, sq), 1.0);
  EXPECT_EQ(spearman(up, down), -1.0);
  const std::vector<double> x{1, 2, 2, 3}, y{1, 2, 3, 4};
  // Ranks of x: 1, 2.5, 2.5, 4. Centred: (-1.5,0,0,1.5) against (-1.5,-0.5,0.5,1.5).
  EXPECT_NEAR(spearman(x, y), 4.5 / std::sqrt(4.5 * 5.0), 1e-15);
}

double brute_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r;
    for (double a : v) {
      double less = 0, equal = 0;
      for (double b : v) {
        less += b < a;
        equal += b == a;
      }
      r.push_back(1.0 + less + (equal - 1.0) / 2.0);
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += rx[i];
    sy += ry[i];
    sxy += rx[i] * ry[i];
    sxx += rx[i] * rx[i];
    syy += ry[i] * ry[i];
  }
  return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

TEST(Correlation, SpearmanMatchesBruteForce) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(100), y(100);
    for (auto& v : x) v = static_cast<double>(rng.below(30));
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + static_cast<double>(rng.below(40));
    const double rho = spearman(x, y);
    EXPECT_NEAR(rho, brute_spearman(x, y), 1e-12);
    std::vector<double> tx(x.size());
    std::transform(x.begin(), x.end(), tx.begin(), [](double v) { return std::cbrt(v) * 7.0 - 1.0; });
    EXPECT_NEAR(spearman(tx, y), rho, 1e-12);
  }
}

TEST(Correlation, Errors) {
  const std::vector<double> c{1, 1, 1}, x{1, 2, 3}, shorter{1, 2};
  EXPECT_EQ(kind_of([&] { spearman(c, x); }), ErrorKind::undefined);
  EXPECT_EQ(kind_of([&] { pearson(x, shorter); }), ErrorKind::config);
  const std::vector<double> one{1};
  EXPECT_EQ(kind_of([&] { pearson(one, one); }), ErrorKind::undefined);
}

TEST(CrossTask, SelfAndAntiMonotone) {
  const auto t = parse_score_table("method,a,b\nm1,0.1,0.9\nm2,0.2,0.8\nm3,0.4,0.6\n");
  const auto m = cross_task_correlation(t);
  EXPECT_NEAR(m[0][0], 1.0, 1e-15);
  EXPECT_NEAR(m[0][1], -1.0, 1e-12);
  EXPECT_EQ(m[0][1], m[1][0]);
}

TEST(CrossTask, MatchesDirectPearson) {
  const auto t = parse_score_table(
      "method,2afc,jnd,class\n"
      "alex,0.69,0.61,0.57\n"
      "vgg,0.67,0.59,0.72\n"
      "squeeze,0.68,0.60,0.58\n"
      "ssim,0.63,0.51,\n"
      "l2,0.62,0.49,\n"
      "random,0.51,0.35,0.1\n");
  const auto m = cross_task_correlation(t);
  const double x[] = {0.69, 0.67, 0.68, 0.63, 0.62, 0.51};
  const double y[] = {0.61, 0.59, 0.60, 0.51, 0.49, 0.35};
  double mx = 0, my = 0;
  for (int i = 0; i < 6; ++i) mx += x[i] / 6, my += y[i] / 6;
  double sxy = 0, sxx = 0, syy = 0;
  for (int i = 0; i < 6; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  EXPECT_NEAR(m[0][1], sxy / std::sqrt(sxx * syy), 1e-12);
  // Pairwise-complete: the class column has 4 complete rows.
  const std::vector<double> a{0.69, 0.67, 0.68, 0.51}, c{0.57, 0.72, 0.58, 0.1};
  EXPECT_NEAR(m[0][2], pearson(a, c), 1e-15);
  const auto s = cross_task_correlation(t, CorrelationKind::spearman);
  EXPECT_NEAR(s[0][1], 1.0, 1e-15);
}

TEST(CrossTask, TooFewCompleteRows) {
  const auto t = parse_score_table("method,a,b\nm1,0.1,\nm2,,0.8\nm3,0.4,0.5\n");
  EXPECT_EQ(kind_of([&] { cross_task_correlation(t); }), ErrorKind::undefined);
  EXPECT_EQ(kind_of([] { parse_score_table("method,a\nm1,abc\n"); }), ErrorKind::decode);
  EXPECT_EQ(kind_of([] { parse_score_table("method,a,b\nm1,1\n"); }), ErrorKind::decode);
}

TEST(Reports, NumberFormatting) {
  EXPECT_EQ(format_number(0.123456789), "0.123457");
  EXPECT_EQ(format_number(1234565.0), "1.23456e+06");
  EXPECT_EQ(format_number(1234575.0), "1.23458e+06");
  EXPECT_EQ(format_number(0.0), "0");
  EXPECT_EQ(format_number(std::numeric_limits<double>::infinity()), "inf");
}

TEST(Reports, EmptyMetricListHasOnlyReferenceRows) {
  Report r;
  EXPECT_EQ(report_csv(r), "metric,two_afc,n,jnd_map\n");
  r.triplets = 4;
  const std::vector<double> p{0.5, 1.0, 0.8, 0.0};
  r.human_ceiling = human_ceiling(p);
  r.oracle_maximum = oracle_maximum(p);
  EXPECT_EQ(report_csv(r), "metric,two_afc,n,jnd_map\nhuman_ceiling,0.795,4,\noracle_maximum,0.825,4,\n");
  const auto j = nlohmann::json::parse(report_json(r));
  EXPECT_TRUE(j["metrics"].empty());
  EXPECT_DOUBLE_EQ(j["dataset"]["human_ceiling"].get<double>(), 0.795);
}

TEST(Reports, MetricsAndCorrelation) {
  Report r;
  r.triplets = 10;
  for (int i = 0; i < 3; ++i) {
    MetricReport m{"m" + std::to_string(i), TwoAfcResult{0.6 + 0.01 * i, 10, {{"base", {0.6, 10}}}},
                   JndResult{0.3 + 0.1 * i * i, {{"blur", 0.3}}, {}}};
    r.metrics.push_back(m);
  }
  r.metrics.push_back(MetricReport{"afc_only", TwoAfcResult{0.1234567, 10, {}}, std::nullopt});
  const auto csv = report_csv(r);
  EXPECT_NE(csv.find("m1,0.61,10,0.4\n"), std::string::npos);
  EXPECT_NE(csv.find("afc_only,0.123457,10,\n"), std::string::npos);
  const auto j = nlohmann::json::parse(report_json(r));
  EXPECT_EQ(j["metrics"].size(), 4u);
  EXPECT_TRUE(j["metrics"][3]["jnd"].is_null());
  EXPECT_EQ(j["correlation_2afc_jnd"]["spearman"].get<double>(), 1.0);
  EXPECT_EQ(report_json(r), report_json(r));
}

TEST(Integration, ScoresBuiltDatasetWithVotes) {
  testing::TempDir dir;
  Rng bank_rng(3);
  auto records = build_2afc_dataset(dir.path(), testing::synthetic_corpus(2), sample_distortion_bank(13, 10, bank_rng),
                                    {.n_triplets = 20, .n_sentinels = 2, .seed = 8});
  for (auto& r : records) r.votes = {0, 0, 1};
  records[0].votes = {1, 1};
  const PatchDistance l2 = [](const PatchTensor& a, const PatchTensor& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
    return s / static_cast<double>(a.size());
  };
  const auto items = score_triplets(dir.path(), records, l2);
  ASSERT_EQ(items.size(), 20u);
  EXPECT_EQ(items[0].p_x0, 0.0);
  EXPECT_DOUBLE_EQ(items[1].p_x0, 2.0 / 3.0);
  EXPECT_EQ(vote_fractions(records).size(), 20u);
  const auto threaded = score_triplets(dir.path(), records, l2, 3);
  for (std::size_t i = 0; i < items.size(); ++i) {
    EXPECT_EQ(items[i].d0, threaded[i].d0);
    EXPECT_EQ(items[i].d1, threaded[i].d1);
  }
  records[3].votes.clear();
  EXPECT_EQ(kind_of([&] { score_triplets(dir.path(), records, l2); }), ErrorKind::missing_label);
}

}  // namespace
}  // namespace pmk
