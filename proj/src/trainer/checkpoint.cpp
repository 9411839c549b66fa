#include <json.hpp>

#include "pmk/error.hpp"
#include "pmk/trainer.hpp"

namespace pmk {

namespace {

using ojson = nlohmann::ordered_json;

constexpr int H = GNet::kHidden;

struct GTensor {
  const char* name;
  std::size_t offset;
  std::vector<int> shape;
};

const std::vector<GTensor>& g_tensors() {
  static const std::vector<GTensor> t = {
      {"g.fc1.kernel", GNet::kFc1Kernel, {H, 2}}, {"g.fc1.bias", GNet::kFc1Bias, {H}},
      {"g.fc2.kernel", GNet::kFc2Kernel, {H, H}}, {"g.fc2.bias", GNet::kFc2Bias, {H}},
      {"g.fc3.kernel", GNet::kFc3Kernel, {1, H}}, {"g.fc3.bias", GNet::kFc3Bias, {1}},
  };
  return t;
}

std::string w_name(std::size_t layer) { return "w.layer" + std::to_string(layer); }

ChannelWeights weights_from(const WeightStore& store) {
  LayerVectors layers;
  for (std::size_t l = 0; store.contains(w_name(l)); ++l) layers.push_back(store.get(w_name(l)).data);
  if (layers.empty()) throw Error(ErrorKind::config, "calibration file has no w.layer0 tensor");
  return ChannelWeights(std::move(layers));
}

void write_text(const std::filesystem::path& file, const std::string& text) {
  write_file(file, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace

WeightStore calibration_store(const ChannelWeights& w, const GNet& g) {
  WeightStore store;
  for (std::size_t l = 0; l < w.layer_count(); ++l)
    store.set(w_name(l), NamedTensor{{static_cast<int>(w.layers()[l].size())}, w.layers()[l]});
  for (const auto& t : g_tensors()) {
    std::size_t count = 1;
    for (int d : t.shape) count *= static_cast<std::size_t>(d);
    store.set(t.name, NamedTensor{t.shape, std::vector<double>(g.params.begin() + static_cast<std::ptrdiff_t>(t.offset),
                                                               g.params.begin() + static_cast<std::ptrdiff_t>(t.offset + count))});
  }
  return store;
}

std::pair<ChannelWeights, GNet> calibration_from_store(const WeightStore& store) {
  GNet g;
  for (const auto& t : g_tensors()) {
    if (!store.contains(t.name)) throw Error(ErrorKind::config, std::string("calibration file lacks ") + t.name);
    const auto& src = store.get(t.name);
    if (src.shape != t.shape) throw Error(ErrorKind::config, std::string("bad shape for ") + t.name);
    std::copy(src.data.begin(), src.data.end(), g.params.begin() + static_cast<std::ptrdiff_t>(t.offset));
  }
  return {weights_from(store), g};
}

ChannelWeights load_channel_weights(const std::filesystem::path& file) { return weights_from(load_weights(file)); }

std::string training_log_json(const TrainResult& r, const TrainConfig& cfg) {
  ojson j;
  j["mode"] = std::string(to_string(cfg.mode));
  j["loss"] = std::string(to_string(cfg.loss));
  j["optimizer"] = std::string(to_string(cfg.optimizer));
  j["seed"] = cfg.seed;
  j["lr0"] = cfg.lr0;
  j["batch"] = cfg.batch;
  j["epochs_const"] = cfg.epochs_const;
  j["epochs_decay"] = cfg.epochs_decay;
  j["steps"] = r.state.step;
  j["skipped_fractional"] = r.skipped_fractional;
  ojson epochs = ojson::array();
  for (const auto& e : r.log) {
    ojson row;
    row["epoch"] = e.epoch;
    row["lr"] = e.lr;
    row["train_loss"] = e.train_loss;
    row["val_2afc"] = e.val_2afc ? ojson(*e.val_2afc) : ojson(nullptr);
    epochs.push_back(row);
  }
  j["epochs"] = epochs;
  return j.dump(2) + "\n";
}

void save_checkpoint(const std::filesystem::path& dir, const TrainResult& r, const TrainConfig& cfg) {
  save_weights(dir / "backbone.lpw", r.state.backbone);
  save_weights(dir / "calib.lpw", calibration_store(r.state.w, r.state.g));
  write_text(dir / "backbone.json", backbone_spec_to_json(r.state.spec));
  write_text(dir / "train_log.json", training_log_json(r, cfg));
}

}  // namespace pmk
