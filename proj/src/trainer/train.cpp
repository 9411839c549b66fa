#include <algorithm>
#include <cmath>
#include <numeric>

#include "pmk/error.hpp"
#include "pmk/evalkit.hpp"
#include "pmk/trainer.hpp"

namespace pmk {

void TrainConfig::validate() const {
  if (!(lr0 >= 0.0) || !std::isfinite(lr0)) throw Error(ErrorKind::config, "lr0 must be a finite value >= 0");
  if (batch == 0) throw Error(ErrorKind::config, "batch must be >= 1");
  if (epochs_const < 0 || epochs_decay < 0 || total_epochs() == 0)
    throw Error(ErrorKind::config, "epoch counts must be >= 0 with at least one epoch");
  if (loss == LossKind::margin_ranking && !(margin > 0.0)) throw Error(ErrorKind::config, "margin must be > 0");
}

double lr_at(double epoch, const TrainConfig& cfg) {
  const double total = cfg.total_epochs();
  if (!(epoch >= 0.0 && epoch <= total))
    throw Error(ErrorKind::range, "epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.total_epochs()) + "]");
  if (epoch < cfg.epochs_const || cfg.epochs_decay == 0) return cfg.lr0;
  return cfg.lr0 * ((total - epoch) / cfg.epochs_decay);
}

ChannelWeights project_nonneg(const LayerVectors& w) {
  LayerVectors out = w;
  for (auto& layer : out)
    for (double& v : layer) v = std::max(v, 0.0);
  return ChannelWeights(std::move(out));
}

TrainState initial_state(const BackboneSpec& spec, WeightStore backbone, const TrainConfig& cfg) {
  spec.validate();
  TrainState s;
  s.spec = spec;
  if (cfg.mode == TrainMode::scratch) {
    Rng rng(cfg.seed, 0x5343524154434855ULL);
    s.backbone = init_scratch(spec, rng);
  } else {
    check_weights(spec, backbone);
    s.backbone = std::move(backbone);
  }
  s.w = ChannelWeights::ones(spec.tap_channels());
  Rng g_rng(cfg.seed, 0x474e4554ULL);
  s.g = GNet::init(g_rng);
  return s;
}

std::size_t trainable_parameter_count(const TrainState& s, TrainMode mode) {
  std::size_t n = s.w.parameter_count() + GNet::kParameterCount;
  if (mode != TrainMode::lin) n += s.backbone.parameter_count();
  return n;
}

std::vector<TrainTriplet> load_training_split(const std::filesystem::path& root,
                                              const std::vector<JudgmentTriplet>& records, Split split) {
  std::vector<TrainTriplet> out;
  for (const auto& r : records) {
    if (r.is_sentinel || r.split != split || r.votes.empty()) continue;
    out.push_back(TrainTriplet{r.id, load_patch(root, r.ref_path), load_patch(root, r.p0_path),
                               load_patch(root, r.p1_path), aggregate_votes(r)});
  }
  return out;
}

namespace {

FeatureStack features(const TrainState& s, const Tensor& x) { return forward(s.spec, s.backbone, x); }

void add_into(FeatureStack& dst, const FeatureStack& src) {
  for (std::size_t l = 0; l < dst.layers.size(); ++l)
    for (std::size_t i = 0; i < dst.layers[l].size(); ++i) dst.layers[l].data[i] += src.layers[l].data[i];
}

void add_into(LayerVectors& dst, const LayerVectors& src, double scale = 1.0) {
  for (std::size_t l = 0; l < dst.size(); ++l)
    for (std::size_t c = 0; c < dst[l].size(); ++c) dst[l][c] += scale * src[l][c];
}

void add_into(WeightStore& dst, const WeightStore& src) {
  for (auto& [name, t] : dst.tensors()) {
    const auto& s = src.get(name).data;
    for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] += s[i];
  }
}

LayerVectors zeros_like(const ChannelWeights& w) {
  LayerVectors z;
  for (const auto& l : w.layers()) z.emplace_back(l.size(), 0.0);
  return z;
}

double dot(const LayerVectors& w, const LayerVectors& d) {
  double total = 0.0;
  for (std::size_t l = 0; l < w.size(); ++l)
    for (std::size_t c = 0; c < w[l].size(); ++c) total += w[l][c] * d[l][c];
  return total;
}

LossGradients head(double d0, double d1, double h, const TrainState& s, const TrainConfig& cfg, bool* used) {
  *used = true;
  if (cfg.loss == LossKind::bce) return loss_2afc_backward(d0, d1, h, s.g);
  if (h != 0.0 && h != 1.0) {
    *used = false;
    return {};
  }
  return loss_margin_backward(d0, d1, h, cfg.margin);
}

// Per-channel difference vectors of one triplet; the lin-mode distance is
// linear in w over them, so they are computed once per run.
struct Precomputed {
  LayerVectors d0;
  LayerVectors d1;
  double h = 0.0;
};

std::vector<Precomputed> precompute(const TrainState& s, const std::vector<TrainTriplet>& set) {
  std::vector<Precomputed> out;
  out.reserve(set.size());
  for (const auto& t : set) {
    const auto r = normalize_channels(features(s, t.ref));
    out.push_back(Precomputed{channel_mean_sq_diff(r, normalize_channels(features(s, t.p0))),
                              channel_mean_sq_diff(r, normalize_channels(features(s, t.p1))), t.h});
  }
  return out;
}

ExampleGradients lin_example(const TrainState& s, const Precomputed& p, const TrainConfig& cfg) {
  const auto& w = s.w.layers();
  ExampleGradients out;
  const auto lg = head(dot(w, p.d0), dot(w, p.d1), p.h, s, cfg, &out.used);
  if (!out.used) return out;
  out.loss = lg.loss;
  out.w = zeros_like(s.w);
  add_into(out.w, p.d0, lg.d0);
  add_into(out.w, p.d1, lg.d1);
  out.g = lg.g;
  return out;
}

double score_pairs(const std::vector<std::pair<double, double>>& d, const std::vector<double>& h) {
  std::vector<TwoAfcItem> items;
  for (std::size_t i = 0; i < d.size(); ++i) items.push_back({"", d[i].first, d[i].second, 1.0 - h[i], ""});
  return two_afc_score(items).score;
}

// Parameter blocks visited in a fixed order by the optimizer.
struct Blocks {
  std::vector<std::vector<double>*> params;
  std::vector<const std::vector<double>*> grads;
};

class Optimizer {
 public:
  Optimizer(OptimizerKind kind) : kind_(kind) {}

  void step(const Blocks& b, double lr) {
    if (kind_ == OptimizerKind::sgd) {
      for (std::size_t k = 0; k < b.params.size(); ++k) {
        auto& p = *b.params[k];
        const auto& g = *b.grads[k];
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
      }
      return;
    }
    if (m_.empty()) {
      for (const auto* p : b.params) {
        m_.emplace_back(p->size(), 0.0);
        v_.emplace_back(p->size(), 0.0);
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, t_);
    const double c2 = 1.0 - std::pow(kBeta2, t_);
    for (std::size_t k = 0; k < b.params.size(); ++k) {
      auto& p = *b.params[k];
      const auto& g = *b.grads[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m_[k][i] = kBeta1 * m_[k][i] + (1.0 - kBeta1) * g[i];
        v_[k][i] = kBeta2 * v_[k][i] + (1.0 - kBeta2) * g[i] * g[i];
        p[i] -= lr * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + 1e-8);
      }
    }
  }

 private:
  static constexpr double kBeta1 = 0.5;
  static constexpr double kBeta2 = 0.999;
  OptimizerKind kind_;
  std::vector<std::vector<double>> m_, v_;
  int t_ = 0;
};

}  // namespace

std::pair<double, double> triplet_distances(const TrainState& s, const TrainTriplet& t) {
  const auto r = normalize_channels(features(s, t.ref));
  return {lpips_distance(r, normalize_channels(features(s, t.p0)), s.w).total,
          lpips_distance(r, normalize_channels(features(s, t.p1)), s.w).total};
}

ExampleGradients example_gradients(const TrainState& s, const TrainTriplet& t, const TrainConfig& cfg,
                                   bool with_backbone) {
  const auto fr = features(s, t.ref);
  const auto f0 = features(s, t.p0);
  const auto f1 = features(s, t.p1);
  const auto nr = normalize_channels(fr);
  const auto n0 = normalize_channels(f0);
  const auto n1 = normalize_channels(f1);
  const double d0 = lpips_distance(nr, n0, s.w).total;
  const double d1 = lpips_distance(nr, n1, s.w).total;

  ExampleGradients out;
  const auto lg = head(d0, d1, t.h, s, cfg, &out.used);
  if (!out.used) return out;
  out.loss = lg.loss;
  out.g = lg.g;
  const auto b0 = lpips_backward(nr, n0, s.w, lg.d0);
  const auto b1 = lpips_backward(nr, n1, s.w, lg.d1);
  out.w = b0.weights;
  add_into(out.w, b1.weights);

  if (with_backbone) {
    auto g_ref = b0.s0;
    add_into(g_ref, b1.s0);
    auto grads = backward(s.spec, s.backbone, t.ref, normalize_channels_backward(fr, g_ref)).weights;
    add_into(grads, backward(s.spec, s.backbone, t.p0, normalize_channels_backward(f0, b0.s1)).weights);
    add_into(grads, backward(s.spec, s.backbone, t.p1, normalize_channels_backward(f1, b1.s1)).weights);
    out.backbone = std::move(grads);
  }
  return out;
}

double two_afc_of(const TrainState& s, const std::vector<TrainTriplet>& set) {
  std::vector<std::pair<double, double>> d;
  std::vector<double> h;
  for (const auto& t : set) {
    d.push_back(triplet_distances(s, t));
    h.push_back(t.h);
  }
  return score_pairs(d, h);
}

TrainResult train(const std::vector<TrainTriplet>& train_set, const std::vector<TrainTriplet>& val_set,
                  TrainState state, const TrainConfig& cfg, const StepObserver& observer) {
  cfg.validate();
  if (train_set.empty()) throw Error(ErrorKind::missing_label, "training split has no labeled triplets");

  const bool lin = cfg.mode == TrainMode::lin;
  const bool margin = cfg.loss == LossKind::margin_ranking;
  std::vector<Precomputed> train_pre, val_pre;
  if (lin) {
    train_pre = precompute(state, train_set);
    val_pre = precompute(state, val_set);
  }

  auto val_score = [&]() -> std::optional<double> {
    if (val_set.empty()) return std::nullopt;
    if (!lin) return two_afc_of(state, val_set);
    std::vector<std::pair<double, double>> d;
    std::vector<double> h;
    for (const auto& p : val_pre) {
      d.emplace_back(dot(state.w.layers(), p.d0), dot(state.w.layers(), p.d1));
      h.push_back(p.h);
    }
    return score_pairs(d, h);
  };

  TrainResult result;
  if (margin)
    for (const auto& t : train_set) result.skipped_fractional += t.h != 0.0 && t.h != 1.0;

  Optimizer optimizer(cfg.optimizer);
  const std::size_t n = train_set.size();
  const std::size_t batches = (n + cfg.batch - 1) / cfg.batch;
  LayerVectors w_raw = state.w.layers();

  for (int epoch = 0; epoch < cfg.total_epochs(); ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(cfg.seed, 0x4550000000ULL + static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(std::span(order));

    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t b = 0; b < batches; ++b) {
      const double lr = lr_at(epoch + static_cast<double>(b) / static_cast<double>(batches), cfg);
      LayerVectors gw = zeros_like(state.w);
      std::vector<double> gg(GNet::kParameterCount, 0.0);
      std::optional<WeightStore> gb;
      if (!lin) gb = state.backbone.zeros_like();
      std::size_t used = 0;

      for (std::size_t k = b * cfg.batch; k < std::min(n, (b + 1) * cfg.batch); ++k) {
        const std::size_t i = order[k];
        auto ex = lin ? lin_example(state, train_pre[i], cfg) : example_gradients(state, train_set[i], cfg, true);
        if (!ex.used) continue;
        ++used;
        loss_sum += ex.loss;
        ++loss_count;
        add_into(gw, ex.w);
        if (!margin)
          for (std::size_t j = 0; j < gg.size(); ++j) gg[j] += ex.g[j];
        if (gb) add_into(*gb, *ex.backbone);
      }
      if (used > 0) {
        const double scale = 1.0 / static_cast<double>(used);
        for (auto& l : gw)
          for (double& v : l) v *= scale;
        for (double& v : gg) v *= scale;
        Blocks blocks;
        for (std::size_t l = 0; l < w_raw.size(); ++l) {
          blocks.params.push_back(&w_raw[l]);
          blocks.grads.push_back(&gw[l]);
        }
        blocks.params.push_back(&state.g.params);
        blocks.grads.push_back(&gg);
        if (gb) {
          for (auto& [name, t] : gb->tensors())
            for (double& v : t.data) v *= scale;
          for (auto& [name, t] : state.backbone.tensors()) {
            blocks.params.push_back(&t.data);
            blocks.grads.push_back(&gb->get(name).data);
          }
        }
        optimizer.step(blocks, lr);
        state.w = project_nonneg(w_raw);
        w_raw = state.w.layers();
        if (gb) state.backbone.round_to_f32();
      }
      ++state.step;
      state.epoch = epoch + static_cast<double>(b + 1) / static_cast<double>(batches);
      if (observer) observer(state);
    }
    result.log.push_back(EpochLog{epoch, lr_at(epoch, cfg), loss_count ? loss_sum / loss_count : 0.0, val_score()});
  }
  result.state = std::move(state);
  return result;
}

}  // namespace pmk
