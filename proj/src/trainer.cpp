#include "epg/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "epg/error.hpp"

namespace epg {

void TrainConfig::validate() const {
  if (batch_size == 0) throw UsageError("batch_size must be positive");
  if (!(initial_lr > 0.0)) throw UsageError("initial_lr must be positive");
  if (!(lr_decay_factor > 0.0 && lr_decay_factor < 1.0))
    throw UsageError("lr_decay_factor must lie in (0, 1)");
  if (decay_every_epochs == 0) throw UsageError("decay_every_epochs must be positive");
  if (precision != "double") throw UsageError("only double precision is supported");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"initial_lr", c.initial_lr},
          {"lr_decay_factor", c.lr_decay_factor},
          {"decay_every_epochs", c.decay_every_epochs},
          {"max_epochs", c.max_epochs},
          {"seed", c.seed},
          {"precision", c.precision}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.initial_lr = j.value("initial_lr", c.initial_lr);
  c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
  c.decay_every_epochs = j.value("decay_every_epochs", c.decay_every_epochs);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.seed = j.value("seed", c.seed);
  c.precision = j.value("precision", c.precision);
  c.validate();
  return c;
}

double lr_at(std::size_t epoch, const TrainConfig& c) {
  const auto decays = static_cast<double>(epoch / c.decay_every_epochs);
  return c.initial_lr * std::pow(c.lr_decay_factor, decays);
}

void write_run_record(const RunRecord& r, std::ostream& out) {
  for (const auto& e : r.epochs)
    out << nlohmann::json{{"epoch", e.epoch},
                          {"loss", e.mean_loss},
                          {"lr", e.learning_rate},
                          {"seconds", e.seconds}}
               .dump()
        << '\n';
}

Trainer::Trainer(EpgMgcn& model, TrainConfig config)
    : model_(model), config_(std::move(config)), rng_(config_.seed) {
  config_.validate();
  adam_.learning_rate = config_.initial_lr;
}

void Trainer::run(const std::vector<Sample>& data, std::optional<std::size_t> until_epoch) {
  const std::size_t stop = until_epoch.value_or(config_.max_epochs);
  if (next_epoch_ >= stop) return;
  if (data.empty()) throw UsageError("training set is empty");

  // Adjacency for every sample, built once per run.
  std::vector<std::array<std::optional<Matrix>, kGraphKinds>> graphs(data.size());
  const auto count = static_cast<std::int64_t>(data.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (std::int64_t k = 0; k < count; ++k)
    graphs[static_cast<std::size_t>(k)] = model_.prepare_graphs(data[static_cast<std::size_t>(k)]);

  auto& params = model_.params().tensors();
  for (; next_epoch_ < stop; ++next_epoch_) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t epoch = next_epoch_;
    adam_.learning_rate = lr_at(epoch, config_);
    const auto order = shuffled_indices(data.size(), rng_);
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0, batch = 0; start < order.size(); start += config_.batch_size, ++batch) {
      const std::size_t end = std::min(order.size(), start + config_.batch_size);
      Tensor total;
      std::size_t contributing = 0;
      for (std::size_t b = start; b < end; ++b) {
        const Sample& s = data[order[b]];
        Loss l = prediction_loss(model_.forward(s, graphs[order[b]]), s);
        if (!l.has_targets) continue;
        total = contributing == 0 ? l.value : add(total, l.value);
        ++contributing;
      }
      if (contributing == 0) continue;
      Tensor mean = scale(total, 1.0 / static_cast<double>(contributing));
      const double value = mean.item();
      if (!std::isfinite(value))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch));
      model_.params().zero_grad();
      mean.backward();
      adam_step(params, adam_);
      record_.step_losses.push_back(value);
      loss_sum += value;
      ++steps;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    record_.epochs.push_back(
        {epoch, steps ? loss_sum / static_cast<double>(steps) : 0.0, adam_.learning_rate, secs});
  }
}

// ---- checkpoints --------------------------------------------------------------

namespace {

constexpr char kCkptMagic[8] = {'E', 'P', 'G', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kCkptVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw FormatError("truncated checkpoint");
  return v;
}

void put_doubles(std::ostream& out, const std::vector<double>& v) {
  put<std::uint64_t>(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> take_doubles(std::istream& in, std::size_t expected) {
  const auto n = take<std::uint64_t>(in);
  if (n != expected) throw FormatError("optimizer moment size mismatch");
  std::vector<double> v(n);
  if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double))))
    throw FormatError("truncated checkpoint");
  return v;
}

}  // namespace

void Trainer::save_checkpoint(std::ostream& out) const {
  nlohmann::json h;
  h["model"] = to_json(model_.config());
  h["train"] = to_json(config_);
  h["next_epoch"] = next_epoch_;
  h["adam"] = {{"step_count", adam_.step_count}, {"learning_rate", adam_.learning_rate},
               {"beta1", adam_.beta1},           {"beta2", adam_.beta2},
               {"epsilon", adam_.epsilon}};
  std::ostringstream rng_text;
  rng_text << rng_;
  h["rng"] = rng_text.str();
  auto& epochs = h["epochs"] = nlohmann::json::array();
  for (const auto& e : record_.epochs)
    epochs.push_back({e.epoch, e.mean_loss, e.learning_rate, e.seconds});
  h["step_losses"] = record_.step_losses;
  h["checkpoints"] = record_.checkpoints;
  const std::string header = h.dump();

  out.write(kCkptMagic, sizeof kCkptMagic);
  put<std::uint32_t>(out, kCkptVersion);
  put<std::uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  save_params(model_.params(), out);
  put<std::uint64_t>(out, adam_.first_moment.size());
  for (std::size_t i = 0; i < adam_.first_moment.size(); ++i) {
    put_doubles(out, adam_.first_moment[i]);
    put_doubles(out, adam_.second_moment[i]);
  }
}

namespace {
nlohmann::json read_header(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCkptMagic, sizeof magic) != 0)
    throw FormatError("not a checkpoint");
  const auto version = take<std::uint32_t>(in);
  if (version != kCkptVersion)
    throw FormatError("checkpoint version " + std::to_string(version) + ", expected " +
                      std::to_string(kCkptVersion));
  const auto len = take<std::uint64_t>(in);
  if (len > (1ull << 32)) throw FormatError("corrupt checkpoint header");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError("truncated checkpoint");
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
}
}  // namespace

void Trainer::load_checkpoint(std::istream& in) {
  const auto h = read_header(in);
  load_params(model_.params(), in);
  AdamState adam;
  try {
    const auto& a = h.at("adam");
    adam.step_count = a.at("step_count").get<std::int64_t>();
    adam.learning_rate = a.at("learning_rate").get<double>();
    adam.beta1 = a.at("beta1").get<double>();
    adam.beta2 = a.at("beta2").get<double>();
    adam.epsilon = a.at("epsilon").get<double>();
    config_ = train_config_from_json(h.at("train"));
    next_epoch_ = h.at("next_epoch").get<std::size_t>();
    std::istringstream rng_text(h.at("rng").get<std::string>());
    rng_text >> rng_;
    if (!rng_text) throw FormatError("checkpoint shuffle stream state unreadable");
    record_ = {};
    for (const auto& e : h.at("epochs"))
      record_.epochs.push_back({e.at(0).get<std::size_t>(), e.at(1).get<double>(),
                                e.at(2).get<double>(), e.at(3).get<double>()});
    record_.step_losses = h.at("step_losses").get<std::vector<double>>();
    record_.checkpoints = h.at("checkpoints").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  const auto moments = take<std::uint64_t>(in);
  const auto& params = model_.params().tensors();
  if (moments != 0 && moments != params.size()) throw FormatError("optimizer state size mismatch");
  for (std::size_t i = 0; i < moments; ++i) {
    adam.first_moment.push_back(take_doubles(in, params[i].numel()));
    adam.second_moment.push_back(take_doubles(in, params[i].numel()));
  }
  adam_ = std::move(adam);
}

void Trainer::save_checkpoint(const std::filesystem::path& path) {
  record_.checkpoints.push_back(path.string());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  save_checkpoint(out);
  if (!out) throw IoError("write failed for " + path.string());
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  load_checkpoint(in);
}

TrainResult train(const std::vector<Sample>& data, const ModelConfig& model_config,
                  const TrainConfig& train_config) {
  TrainResult r{EpgMgcn(model_config, train_config.seed), {}};
  Trainer t(r.model, train_config);
  t.run(data);
  r.record = t.record();
  return r;
}

EpgMgcn load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const auto h = read_header(in);
  EpgMgcn model(model_config_from_json(h.at("model")), 0);
  load_params(model.params(), in);
  return model;
}

}  // namespace epg
