#include <algorithm>
#include <atomic>
#include <exception>
#include <numeric>
#include <thread>

#include "pmk/error.hpp"
#include "pmk/evalkit.hpp"

namespace pmk {

void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> threads;
  for (unsigned t = 0; t < std::min<std::size_t>(jobs, n); ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

double two_afc_credit(double d0, double d1, double p_x0) noexcept {
  if (d0 < d1) return p_x0;
  if (d0 > d1) return 1.0 - p_x0;
  return 0.5;
}

TwoAfcResult two_afc_score(std::span<const TwoAfcItem> items) {
  TwoAfcResult r;
  double total = 0.0;
  for (const auto& item : items) {
    const double c = two_afc_credit(item.d0, item.d1, item.p_x0);
    total += c;
    auto& cat = r.per_category[item.category];
    cat.score += c;
    ++cat.n;
  }
  r.n = items.size();
  r.score = r.n ? total / static_cast<double>(r.n) : 0.0;
  for (auto& [name, cat] : r.per_category) cat.score /= static_cast<double>(cat.n);
  return r;
}

double human_ceiling(std::span<const double> p_x0) {
  if (p_x0.empty()) return 0.0;
  double total = 0.0;
  for (double p : p_x0) total += p * p + (1.0 - p) * (1.0 - p);
  return total / static_cast<double>(p_x0.size());
}

double oracle_maximum(std::span<const double> p_x0) {
  if (p_x0.empty()) return 0.0;
  double total = 0.0;
  for (double p : p_x0) total += std::max(p, 1.0 - p);
  return total / static_cast<double>(p_x0.size());
}

std::vector<double> vote_fractions(const std::vector<JudgmentTriplet>& records) {
  std::vector<double> out;
  for (const auto& r : records)
    if (!r.is_sentinel && !r.votes.empty()) out.push_back(1.0 - aggregate_votes(r));
  return out;
}

std::vector<TwoAfcItem> score_triplets(const std::filesystem::path& root, const std::vector<JudgmentTriplet>& records,
                                       const PatchDistance& metric, unsigned jobs) {
  std::vector<const JudgmentTriplet*> selected;
  for (const auto& r : records) {
    if (r.is_sentinel) continue;
    if (r.votes.empty()) throw Error(ErrorKind::missing_label, "triplet " + r.id + " has no votes");
    selected.push_back(&r);
  }
  std::vector<TwoAfcItem> items(selected.size());
  parallel_for(selected.size(), jobs, [&](std::size_t i) {
    const auto& r = *selected[i];
    const auto ref = load_patch(root, r.ref_path);
    items[i] = TwoAfcItem{r.id, metric(ref, load_patch(root, r.p0_path)), metric(ref, load_patch(root, r.p1_path)),
                          1.0 - aggregate_votes(r), triplet_category(r)};
  });
  return items;
}

PrCurve precision_recall(std::span<const JndItem> items) {
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (items[a].distance != items[b].distance) return items[a].distance < items[b].distance;
    return items[a].id < items[b].id;
  });
  const auto positives = static_cast<std::size_t>(
      std::count_if(items.begin(), items.end(), [](const JndItem& i) { return i.same; }));
  if (positives == 0) throw Error(ErrorKind::undefined, "average precision needs at least one positive pair");

  PrCurve curve;
  std::size_t hits = 0;
  double prev_recall = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    hits += items[order[rank]].same;
    const double recall = static_cast<double>(hits) / static_cast<double>(positives);
    const double precision = static_cast<double>(hits) / static_cast<double>(rank + 1);
    curve.ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    curve.points.push_back({recall, precision});
  }
  return curve;
}

JndResult jnd_map(std::span<const JndItem> items) {
  JndResult r;
  r.pooled = precision_recall(items);
  std::map<std::string, std::vector<JndItem>> groups;
  for (const auto& item : items) groups[item.category].push_back(item);
  double total = 0.0;
  for (const auto& [name, group] : groups) {
    if (std::none_of(group.begin(), group.end(), [](const JndItem& i) { return i.same; })) continue;
    r.per_category[name] = precision_recall(group).ap;
    total += r.per_category[name];
  }
  r.map = total / static_cast<double>(r.per_category.size());
  return r;
}

std::vector<JndItem> score_jnd_pairs(const std::filesystem::path& root, const std::vector<JndPair>& pairs,
                                     const PatchDistance& metric, unsigned jobs) {
  std::vector<const JndPair*> selected;
  for (const auto& p : pairs) {
    if (p.role != JndRole::test) continue;
    if (p.votes_same.empty()) throw Error(ErrorKind::missing_label, "pair " + p.id + " has no votes");
    selected.push_back(&p);
  }
  std::vector<JndItem> items(selected.size());
  parallel_for(selected.size(), jobs, [&](std::size_t i) {
    const auto& p = *selected[i];
    items[i] = JndItem{p.id, metric(load_patch(root, p.ref_path), load_patch(root, p.probe_path)), jnd_label(p),
                       jnd_category(p)};
  });
  return items;
}

}  // namespace pmk
