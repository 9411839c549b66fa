#include <algorithm>
#include <array>
#include <cmath>

#include "pmk/error.hpp"
#include "pmk/trainer.hpp"

namespace pmk {

namespace {

constexpr int H = GNet::kHidden;

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct Activations {
  std::array<double, H> z1, a1, z2, a2;
  double z3 = 0.0;
  double out = 0.0;
};

Activations run(double d0, double d1, const GNet& g) {
  const auto& p = g.params;
  Activations a;
  for (int i = 0; i < H; ++i) {
    a.z1[i] = p[GNet::kFc1Kernel + 2 * i] * d0 + p[GNet::kFc1Kernel + 2 * i + 1] * d1 + p[GNet::kFc1Bias + i];
    a.a1[i] = a.z1[i] > 0.0 ? a.z1[i] : 0.0;
  }
  for (int i = 0; i < H; ++i) {
    double z = p[GNet::kFc2Bias + i];
    for (int j = 0; j < H; ++j) z += p[GNet::kFc2Kernel + H * i + j] * a.a1[j];
    a.z2[i] = z;
    a.a2[i] = z > 0.0 ? z : 0.0;
  }
  a.z3 = p[GNet::kFc3Bias];
  for (int j = 0; j < H; ++j) a.z3 += p[GNet::kFc3Kernel + j] * a.a2[j];
  a.out = sigmoid(a.z3);
  return a;
}

// Gradients of upstream * z3 with respect to the parameters and inputs.
void back(double d0, double d1, const GNet& g, const Activations& a, double upstream, LossGradients& out) {
  const auto& p = g.params;
  out.g.assign(GNet::kParameterCount, 0.0);
  auto& gp = out.g;
  gp[GNet::kFc3Bias] = upstream;
  std::array<double, H> dz2{};
  for (int j = 0; j < H; ++j) {
    gp[GNet::kFc3Kernel + j] = upstream * a.a2[j];
    dz2[j] = a.z2[j] > 0.0 ? upstream * p[GNet::kFc3Kernel + j] : 0.0;
  }
  std::array<double, H> da1{};
  for (int i = 0; i < H; ++i) {
    gp[GNet::kFc2Bias + i] = dz2[i];
    for (int j = 0; j < H; ++j) {
      gp[GNet::kFc2Kernel + H * i + j] = dz2[i] * a.a1[j];
      da1[j] += dz2[i] * p[GNet::kFc2Kernel + H * i + j];
    }
  }
  out.d0 = 0.0;
  out.d1 = 0.0;
  for (int i = 0; i < H; ++i) {
    const double dz1 = a.z1[i] > 0.0 ? da1[i] : 0.0;
    gp[GNet::kFc1Bias + i] = dz1;
    gp[GNet::kFc1Kernel + 2 * i] = dz1 * d0;
    gp[GNet::kFc1Kernel + 2 * i + 1] = dz1 * d1;
    out.d0 += dz1 * p[GNet::kFc1Kernel + 2 * i];
    out.d1 += dz1 * p[GNet::kFc1Kernel + 2 * i + 1];
  }
}

double bce(double out, double h) {
  const double c = std::clamp(out, kProbabilityClamp, 1.0 - kProbabilityClamp);
  return -h * std::log(c) - (1.0 - h) * std::log(1.0 - c);
}

int margin_sign(double h) {
  if (h == 0.0) return 1;
  if (h == 1.0) return -1;
  throw Error(ErrorKind::range, "margin loss needs a hard label (h = 0 or 1)");
}

}  // namespace

GNet GNet::init(Rng& rng) {
  GNet g;
  auto fill = [&](std::size_t begin, std::size_t count) {
    for (std::size_t i = begin; i < begin + count; ++i) g.params[i] = 0.1 * rng.normal();
  };
  fill(kFc1Kernel, 2 * H);
  fill(kFc2Kernel, H * H);
  fill(kFc3Kernel, H);
  return g;
}

double g_forward(double d0, double d1, const GNet& g) { return run(d0, d1, g).out; }

double loss_2afc(double d0, double d1, double h, const GNet& g) { return bce(run(d0, d1, g).out, h); }

LossGradients loss_2afc_backward(double d0, double d1, double h, const GNet& g) {
  const auto a = run(d0, d1, g);
  LossGradients out;
  out.loss = bce(a.out, h);
  // d/dz of the BCE through the sigmoid is (out - h); zero where the clamp is active.
  const bool clamped = a.out < kProbabilityClamp || a.out > 1.0 - kProbabilityClamp;
  back(d0, d1, g, a, clamped ? 0.0 : a.out - h, out);
  return out;
}

double loss_margin(double d0, double d1, double h, double margin) {
  return std::max(0.0, margin - margin_sign(h) * (d1 - d0));
}

LossGradients loss_margin_backward(double d0, double d1, double h, double margin) {
  const int s = margin_sign(h);
  LossGradients out;
  out.loss = std::max(0.0, margin - s * (d1 - d0));
  if (out.loss > 0.0) {
    out.d0 = s;
    out.d1 = -s;
  }
  return out;
}

std::string_view to_string(TrainMode m) noexcept {
  switch (m) {
    case TrainMode::lin: return "lin";
    case TrainMode::scratch: return "scratch";
    case TrainMode::tune: return "tune";
  }
  return "lin";
}

TrainMode train_mode_from_string(std::string_view s) {
  for (auto m : {TrainMode::lin, TrainMode::scratch, TrainMode::tune})
    if (to_string(m) == s) return m;
  throw Error(ErrorKind::config, "unknown mode '" + std::string(s) + "' (lin, scratch, tune)");
}

std::string_view to_string(LossKind k) noexcept { return k == LossKind::bce ? "bce" : "margin_ranking"; }

LossKind loss_kind_from_string(std::string_view s) {
  if (s == "bce") return LossKind::bce;
  if (s == "margin_ranking") return LossKind::margin_ranking;
  throw Error(ErrorKind::config, "unknown loss '" + std::string(s) + "' (bce, margin_ranking)");
}

std::string_view to_string(OptimizerKind k) noexcept { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_kind_from_string(std::string_view s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw Error(ErrorKind::config, "unknown optimizer '" + std::string(s) + "' (sgd, adam)");
}

}  // namespace pmk
