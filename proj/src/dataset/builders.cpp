#include <cmath>
#include <cstdio>

#include "pmk/dataset.hpp"
#include "pmk/error.hpp"

namespace pmk {

namespace {

// Salts separating the random streams of different record families.
constexpr std::uint64_t kSentinelSalt = 0x53454e54494e454cULL;
constexpr std::uint64_t kJndSalt = 0x4a4e445041495253ULL;

std::string padded(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%06zu", prefix, i);
  return buf;
}

void save_patch(const std::filesystem::path& root, const std::string& relative, const Tensor& t) {
  write_file(root / relative, encode_png(from_tensor(t)));
}

void require_corpus(const Corpus& corpus) {
  if (corpus.images.empty()) throw Error(ErrorKind::config, "corpus is empty");
}

PatchTensor sample_patch(const Corpus& corpus, int size, Rng& rng) {
  const auto& img = corpus.images[rng.below(corpus.images.size())];
  return extract_patch(img, rng, size);
}

Distortion reseed(const Distortion& d, Rng& rng) {
  if (const auto* s = std::get_if<DistortionSpec>(&d)) return DistortionSpec{s->kind, s->severity, rng.next_u64()};
  auto c = std::get<ComposedDistortion>(d);
  c.first.seed = rng.next_u64();
  c.second.seed = rng.next_u64();
  return c;
}

}  // namespace

std::vector<SentinelPlan> make_sentinels_2afc(std::size_t n, std::uint64_t seed) {
  std::vector<SentinelPlan> out;
  out.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    Rng rng(mix64(seed ^ kSentinelSalt), j);
    const int low_side = static_cast<int>(rng.below(2));
    const DistortionSpec low{DistortionKind::gaussian_noise, kSentinelLowSeverity, rng.next_u64()};
    const DistortionSpec high{DistortionKind::gaussian_noise, kSentinelHighSeverity, rng.next_u64()};
    out.push_back(low_side == 0 ? SentinelPlan{low, high, 0} : SentinelPlan{high, low, 1});
  }
  return out;
}

std::vector<JudgmentTriplet> build_2afc_dataset(const std::filesystem::path& root, const Corpus& corpus,
                                                const std::vector<Distortion>& bank, const Build2afcOptions& opt) {
  require_corpus(corpus);
  if (opt.n_triplets > 0 && bank.size() < 2) throw Error(ErrorKind::config, "distortion bank needs at least 2 entries");
  if (opt.val_fraction < 0.0 || opt.val_fraction > 1.0) throw Error(ErrorKind::range, "val fraction must be in [0, 1]");

  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(opt.n_triplets) * opt.val_fraction));
  const std::size_t n_train = opt.n_triplets - n_val;

  std::vector<JudgmentTriplet> records;
  records.reserve(opt.n_triplets + opt.n_sentinels);
  auto emit = [&](std::string id, const Triplet& t) {
    JudgmentTriplet r;
    r.id = std::move(id);
    r.ref_path = "patches/ref/" + r.id + ".png";
    r.p0_path = "patches/p0/" + r.id + ".png";
    r.p1_path = "patches/p1/" + r.id + ".png";
    save_patch(root, r.ref_path, t.ref);
    save_patch(root, r.p0_path, t.p0);
    save_patch(root, r.p1_path, t.p1);
    return r;
  };

  for (std::size_t i = 0; i < opt.n_triplets; ++i) {
    Rng rng(opt.seed, i);
    const auto x = sample_patch(corpus, opt.patch_size, rng);
    const auto a = rng.below(bank.size());
    auto b = rng.below(bank.size() - 1);
    if (b >= a) ++b;
    const auto d0 = reseed(bank[a], rng);
    const auto d1 = reseed(bank[b], rng);
    auto r = emit(padded("", i), make_triplet(x, d0, d1));
    r.split = i < n_train ? Split::train : Split::val;
    r.d0 = d0;
    r.d1 = d1;
    records.push_back(std::move(r));
  }

  const auto sentinels = make_sentinels_2afc(opt.n_sentinels, opt.seed);
  for (std::size_t j = 0; j < sentinels.size(); ++j) {
    Rng rng(mix64(opt.seed ^ kSentinelSalt) + 1, j);
    const auto x = sample_patch(corpus, opt.patch_size, rng);
    auto r = emit(padded("s", j), make_triplet(x, sentinels[j].d0, sentinels[j].d1));
    r.d0 = sentinels[j].d0;
    r.d1 = sentinels[j].d1;
    r.is_sentinel = true;
    r.correct = sentinels[j].correct;
    records.push_back(std::move(r));
  }

  write_triplet_index(triplet_index_path(root), records);
  write_meta(root, DatasetMeta{"2afc", opt.seed, records.size(), opt.patch_size});
  return records;
}

std::vector<JndPair> build_jnd_dataset(const std::filesystem::path& root, const Corpus& corpus,
                                       const BuildJndOptions& opt) {
  require_corpus(corpus);
  if (opt.max_severity < kJndSeverityFloor || opt.max_severity > 1.0)
    throw Error(ErrorKind::range, "max severity must be in [0.05, 1]");

  const JndSessionConfig pools;
  std::vector<std::pair<JndRole, std::size_t>> layout = {
      {JndRole::test, opt.n_pairs},
      {JndRole::sentinel_identical, pools.sentinels_identical},
      {JndRole::sentinel_noise, pools.sentinels_noise},
      {JndRole::priming_same, pools.priming_same},
      {JndRole::priming_obvious, pools.priming_obvious},
      {JndRole::priming_different, pools.priming_different},
  };

  std::vector<JndPair> pairs;
  std::size_t index = 0;
  for (const auto& [role, count] : layout) {
    for (std::size_t k = 0; k < count; ++k, ++index) {
      Rng rng(mix64(opt.seed ^ kJndSalt), index);
      const auto x = sample_patch(corpus, opt.patch_size, rng);
      JndPair p;
      p.id = padded("j", index);
      p.ref_path = "patches/ref/" + p.id + ".png";
      p.probe_path = "patches/probe/" + p.id + ".png";
      p.role = role;
      p.truly_same = role == JndRole::sentinel_identical || role == JndRole::priming_same;
      if (role == JndRole::sentinel_noise || role == JndRole::priming_obvious) {
        p.spec = DistortionSpec{DistortionKind::gaussian_noise, kSentinelNoiseSeverity, rng.next_u64()};
      } else if (!p.truly_same) {
        const auto kind = kAllDistortionKinds[rng.below(kAllDistortionKinds.size())];
        const double severity = rng.uniform(kJndSeverityFloor, opt.max_severity);
        p.spec = DistortionSpec{kind, severity, rng.next_u64()};
      }
      const auto images = make_jnd_pair(x, p.spec.value_or(DistortionSpec{}), p.truly_same);
      save_patch(root, p.ref_path, images.ref);
      save_patch(root, p.probe_path, images.probe);
      pairs.push_back(std::move(p));
    }
  }

  write_jnd_index(jnd_index_path(root), pairs);
  write_meta(root, DatasetMeta{"jnd", opt.seed, pairs.size(), opt.patch_size});
  return pairs;
}

}  // namespace pmk
