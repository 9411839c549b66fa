#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pmk/backbone.hpp"
#include "pmk/dataset.hpp"
#include "pmk/metric.hpp"

namespace pmk {

/// The small head G: (d0, d1) -> 32 relu -> 32 relu -> 1 -> sigmoid.
/// Parameters are stored flat: fc1 kernel [32,2], fc1 bias [32], fc2 kernel
/// [32,32], fc2 bias [32], fc3 kernel [1,32], fc3 bias [1].
struct GNet {
  static constexpr int kHidden = 32;
  static constexpr std::size_t kFc1Kernel = 0;
  static constexpr std::size_t kFc1Bias = kFc1Kernel + 2 * kHidden;
  static constexpr std::size_t kFc2Kernel = kFc1Bias + kHidden;
  static constexpr std::size_t kFc2Bias = kFc2Kernel + kHidden * kHidden;
  static constexpr std::size_t kFc3Kernel = kFc2Bias + kHidden;
  static constexpr std::size_t kFc3Bias = kFc3Kernel + kHidden;
  static constexpr std::size_t kParameterCount = kFc3Bias + 1;

  std::vector<double> params = std::vector<double>(kParameterCount, 0.0);

  /// Kernels ~ Gaussian(0, 0.1), biases 0.
  static GNet init(Rng& rng);

  friend bool operator==(const GNet&, const GNet&) = default;
};

inline constexpr double kProbabilityClamp = 1e-7;

/// Predicted probability that x1 is judged closer.
double g_forward(double d0, double d1, const GNet& g);

struct LossGradients {
  double loss = 0.0;
  double d0 = 0.0;
  double d1 = 0.0;
  std::vector<double> g;  // empty for losses that do not use G
};

/// -h log G - (1-h) log(1-G), with G clamped to [1e-7, 1-1e-7].
double loss_2afc(double d0, double d1, double h, const GNet& g);
LossGradients loss_2afc_backward(double d0, double d1, double h, const GNet& g);

/// max(0, margin - s (d1 - d0)), s = +1 when h = 0 and -1 when h = 1.
/// Throws range for fractional h.
double loss_margin(double d0, double d1, double h, double margin);
LossGradients loss_margin_backward(double d0, double d1, double h, double margin);

enum class TrainMode { lin, scratch, tune };
enum class LossKind { bce, margin_ranking };
enum class OptimizerKind { sgd, adam };

std::string_view to_string(TrainMode m) noexcept;
TrainMode train_mode_from_string(std::string_view s);
std::string_view to_string(LossKind k) noexcept;
LossKind loss_kind_from_string(std::string_view s);
std::string_view to_string(OptimizerKind k) noexcept;
OptimizerKind optimizer_kind_from_string(std::string_view s);

struct TrainConfig {
  TrainMode mode = TrainMode::lin;
  int epochs_const = 5;
  int epochs_decay = 5;
  double lr0 = 1e-4;
  std::size_t batch = 50;
  LossKind loss = LossKind::bce;
  double margin = 0.1;
  OptimizerKind optimizer = OptimizerKind::sgd;
  std::uint64_t seed = 0;

  int total_epochs() const noexcept { return epochs_const + epochs_decay; }
  /// Throws config on lr0 < 0, batch 0 or negative epoch counts.
  void validate() const;
};

/// lr0 on [0, epochs_const), then linear decay to 0 at the last epoch.
/// Throws range outside [0, total_epochs].
double lr_at(double epoch, const TrainConfig& cfg);

/// Componentwise max(w, 0).
ChannelWeights project_nonneg(const LayerVectors& w);

struct TrainState {
  BackboneSpec spec;
  WeightStore backbone;
  ChannelWeights w;
  GNet g;
  std::size_t step = 0;
  double epoch = 0.0;
};

/// Unit channel weights, seeded G, and for scratch mode a seeded backbone.
TrainState initial_state(const BackboneSpec& spec, WeightStore backbone, const TrainConfig& cfg);

/// Channel weights plus G, plus the backbone outside lin mode.
std::size_t trainable_parameter_count(const TrainState& s, TrainMode mode);

struct TrainTriplet {
  std::string id;
  PatchTensor ref;
  PatchTensor p0;
  PatchTensor p1;
  double h = 0.0;  // fraction of votes for x1
};

/// Labeled, non-sentinel records of one split with their patches.
std::vector<TrainTriplet> load_training_split(const std::filesystem::path& root,
                                              const std::vector<JudgmentTriplet>& records, Split split);

/// Distances d(x, x0), d(x, x1) under the current state.
std::pair<double, double> triplet_distances(const TrainState& s, const TrainTriplet& t);

struct ExampleGradients {
  double loss = 0.0;
  bool used = true;  // false when the margin loss skips a fractional label
  LayerVectors w;
  std::vector<double> g;
  std::optional<WeightStore> backbone;
};

/// Loss and exact gradients for one triplet. Backbone gradients are filled
/// when with_backbone is set.
ExampleGradients example_gradients(const TrainState& s, const TrainTriplet& t, const TrainConfig& cfg,
                                   bool with_backbone);

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_2afc;
};

struct TrainResult {
  TrainState state;
  std::vector<EpochLog> log;
  std::size_t skipped_fractional = 0;
};

/// Called after every optimizer step (post projection).
using StepObserver = std::function<void(const TrainState&)>;

/// Mini-batch training with the configured schedule. Throws missing_label
/// on an empty training set.
TrainResult train(const std::vector<TrainTriplet>& train_set, const std::vector<TrainTriplet>& val_set,
                  TrainState state, const TrainConfig& cfg, const StepObserver& observer = {});

/// 2AFC agreement of the state's distance on labeled triplets.
double two_afc_of(const TrainState& s, const std::vector<TrainTriplet>& set);

// Checkpoints: backbone.lpw, calib.lpw (w and G), backbone.json, train_log.json.

WeightStore calibration_store(const ChannelWeights& w, const GNet& g);
std::pair<ChannelWeights, GNet> calibration_from_store(const WeightStore& store);
/// Channel weights only; G tensors are optional in the file.
ChannelWeights load_channel_weights(const std::filesystem::path& file);
std::string training_log_json(const TrainResult& r, const TrainConfig& cfg);
void save_checkpoint(const std::filesystem::path& dir, const TrainResult& r, const TrainConfig& cfg);

}  // namespace pmk
