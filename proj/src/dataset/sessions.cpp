#include <algorithm>

#include "pmk/dataset.hpp"
#include "pmk/error.hpp"

namespace pmk {

namespace {

std::vector<std::string> take(std::vector<std::string> pool, std::size_t n, Rng& rng, const char* what) {
  if (pool.size() < n)
    throw Error(ErrorKind::config, std::string("not enough ") + what + " items: need " + std::to_string(n) + ", have " +
                                       std::to_string(pool.size()));
  rng.shuffle(std::span(pool));
  pool.resize(n);
  return pool;
}

void append(std::vector<std::string>& dst, const std::vector<std::string>& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

}  // namespace

bool sentinel_pass(std::size_t correct, std::size_t total) noexcept {
  return total > 0 && correct * 15 >= total * 14;
}

std::vector<std::string> make_jnd_session(const std::vector<JndPair>& pairs, std::uint64_t seed,
                                          const JndSessionConfig& cfg) {
  std::map<JndRole, std::vector<std::string>> pools;
  for (const auto& p : pairs) pools[p.role].push_back(p.id);

  Rng rng(seed, 0x6a6e64);
  std::vector<std::string> priming;
  append(priming, take(pools[JndRole::priming_same], cfg.priming_same, rng, "priming_same"));
  append(priming, take(pools[JndRole::priming_obvious], cfg.priming_obvious, rng, "priming_obvious"));
  append(priming, take(pools[JndRole::priming_different], cfg.priming_different, rng, "priming_different"));
  rng.shuffle(std::span(priming));

  std::vector<std::string> body;
  append(body, take(pools[JndRole::test], cfg.test, rng, "test"));
  append(body, take(pools[JndRole::sentinel_identical], cfg.sentinels_identical, rng, "sentinel_identical"));
  append(body, take(pools[JndRole::sentinel_noise], cfg.sentinels_noise, rng, "sentinel_noise"));
  rng.shuffle(std::span(body));

  append(priming, body);
  return priming;
}

std::vector<std::string> make_2afc_session(const std::vector<JudgmentTriplet>& records,
                                           const std::map<std::string, std::size_t>& vote_counts,
                                           std::uint64_t seed, const TwoAfcSessionConfig& cfg) {
  auto count_of = [&](const JudgmentTriplet& r) {
    const auto it = vote_counts.find(r.id);
    return r.votes.size() + (it == vote_counts.end() ? 0 : it->second);
  };

  std::vector<const JudgmentTriplet*> candidates;
  std::vector<std::string> sentinels;
  for (const auto& r : records) {
    if (r.is_sentinel) {
      sentinels.push_back(r.id);
      continue;
    }
    const std::size_t quota = r.split == Split::train ? cfg.train_quota : cfg.val_quota;
    if (count_of(r) < quota) candidates.push_back(&r);
  }
  if (candidates.empty() && cfg.judgments > 0) throw Error(ErrorKind::config, "no triplets below their vote quota");

  Rng rng(seed, 0x32616663);
  rng.shuffle(std::span(candidates));
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](const auto* a, const auto* b) { return count_of(*a) < count_of(*b); });
  candidates.resize(std::min(candidates.size(), cfg.judgments));

  std::vector<std::string> plan;
  for (const auto* r : candidates) plan.push_back(r->id);
  append(plan, take(std::move(sentinels), cfg.sentinels, rng, "sentinel"));
  rng.shuffle(std::span(plan));
  return plan;
}

}  // namespace pmk
