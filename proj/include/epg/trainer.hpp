#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "epg/model.hpp"
#include "epg/optim.hpp"
#include "epg/rng.hpp"

namespace epg {

struct TrainConfig {
  std::size_t batch_size = 128;
  double initial_lr = 1e-3;
  double lr_decay_factor = 0.1;
  std::size_t decay_every_epochs = 200;  // 5 for highway data
  std::size_t max_epochs = 500;
  std::uint64_t seed = 0;
  std::string precision = "double";

  static TrainConfig apollo() { return TrainConfig{}; }
  static TrainConfig ngsim() {
    TrainConfig c;
    c.decay_every_epochs = 5;
    return c;
  }
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// initial_lr * decay^floor(epoch / decay_every_epochs).
double lr_at(std::size_t epoch, const TrainConfig& c);

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double learning_rate = 0.0;
  double seconds = 0.0;
};

struct RunRecord {
  std::vector<EpochRecord> epochs;      // contiguous from 0
  std::vector<double> step_losses;      // one per optimizer step
  std::vector<std::string> checkpoints;
};

/// Line-delimited {"epoch","loss","lr","seconds"} records.
void write_run_record(const RunRecord& r, std::ostream& out);

/// Owns the optimizer and shuffling stream for one model. Batches average the
/// per-sample losses of samples that have supervised agents; batches with none
/// are skipped.
class Trainer {
 public:
  Trainer(EpgMgcn& model, TrainConfig config);

  /// Trains until `until_epoch` (exclusive; defaults to max_epochs).
  void run(const std::vector<Sample>& data, std::optional<std::size_t> until_epoch = std::nullopt);

  std::size_t next_epoch() const { return next_epoch_; }
  const RunRecord& record() const { return record_; }
  const AdamState& adam() const { return adam_; }
  const TrainConfig& config() const { return config_; }

  void save_checkpoint(std::ostream& out) const;
  void load_checkpoint(std::istream& in);
  void save_checkpoint(const std::filesystem::path& path);
  void load_checkpoint(const std::filesystem::path& path);

 private:
  EpgMgcn& model_;
  TrainConfig config_;
  AdamState adam_;
  Rng rng_;
  std::size_t next_epoch_ = 0;
  RunRecord record_;
};

struct TrainResult {
  EpgMgcn model;
  RunRecord record;
};

/// Initializes a model from train_config.seed and trains it for max_epochs.
TrainResult train(const std::vector<Sample>& data, const ModelConfig& model_config,
                  const TrainConfig& train_config);

/// Model configuration and parameters from a trainer checkpoint.
EpgMgcn load_model(const std::filesystem::path& path);

}  // namespace epg
