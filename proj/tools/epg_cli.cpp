#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "epg/error.hpp"
#include "epg/eval.hpp"
#include "epg/model.hpp"
#include "epg/scene.hpp"
#include "epg/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunConfig {
  epg::DatasetConfig dataset;
  epg::ModelConfig model;
  epg::TrainConfig train;
};

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw epg::IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw epg::UsageError("config " + path.string() + ": " + e.what());
  }
}

RunConfig load_run_config(const std::optional<fs::path>& path) {
  RunConfig rc;
  if (!path) return rc;
  const json j = read_json(*path);
  try {
    const std::string preset = j.value("preset", std::string("apollo"));
    if (preset == "ngsim") {
      rc.dataset = epg::DatasetConfig::ngsim();
      rc.train = epg::TrainConfig::ngsim();
      rc.model.obs_points = rc.dataset.obs_points;
      rc.model.pred_frames = rc.dataset.pred_frames;
      rc.model.categories_decoded = {epg::Category::Vehicle};
      rc.model.enabled_graphs[static_cast<std::size_t>(epg::GraphKind::Category)] = false;
    } else if (preset != "apollo") {
      throw epg::UsageError("unknown preset '" + preset + "'");
    }
    if (j.contains("dataset")) {
      const json& d = j.at("dataset");
      auto& c = rc.dataset;
      c.obs_points = d.value("obs_points", c.obs_points);
      c.pred_frames = d.value("pred_frames", c.pred_frames);
      c.distance_threshold = d.value("distance_threshold", c.distance_threshold);
      c.beta_degrees = d.value("beta_degrees", c.beta_degrees);
      c.scope_radius = d.value("scope_radius", c.scope_radius);
      c.band_longitudinal = d.value("band_longitudinal", c.band_longitudinal);
      c.band_lanes = d.value("band_lanes", c.band_lanes);
      c.window_stride = d.value("window_stride", c.window_stride);
      if (d.contains("neighborhood")) {
        const std::string n = d.at("neighborhood").get<std::string>();
        if (n == "radius")
          c.neighborhood = epg::Neighborhood::Radius;
        else if (n == "highway_band")
          c.neighborhood = epg::Neighborhood::HighwayBand;
        else
          throw epg::UsageError("unknown neighborhood '" + n + "'");
      }
      rc.model.obs_points = c.obs_points;
      rc.model.pred_frames = c.pred_frames;
      rc.model.distance_threshold = c.distance_threshold;
      rc.model.beta_degrees = c.beta_degrees;
    }
    if (j.contains("model")) {
      json m = epg::to_json(rc.model);
      m.merge_patch(j.at("model"));
      rc.model = epg::model_config_from_json(m);
    }
    if (j.contains("train")) {
      json t = epg::to_json(rc.train);
      t.merge_patch(j.at("train"));
      rc.train = epg::train_config_from_json(t);
    }
  } catch (const json::exception& e) {
    throw epg::UsageError("config " + path->string() + ": " + e.what());
  }
  rc.dataset.validate();
  rc.model.validate();
  rc.train.validate();
  return rc;
}

fs::path ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw epg::IoError("cannot create " + dir.string() + ": " + ec.message());
  return dir;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw epg::IoError("cannot write " + path.string());
  return out;
}

const epg::Sample& pick_sample(const std::vector<epg::Sample>& data, std::size_t index) {
  if (index >= data.size())
    throw epg::UsageError("sample index " + std::to_string(index) + " out of range (" +
                          std::to_string(data.size()) + " samples)");
  return data[index];
}

std::vector<epg::NamedPlan> read_plans(const fs::path& path) {
  const json j = read_json(path);
  std::vector<epg::NamedPlan> plans;
  try {
    for (const auto& p : j.at("plans")) {
      epg::NamedPlan np;
      np.name = p.at("name").get<std::string>();
      for (const auto& pt : p.at("points")) np.plan.push_back({pt.at(0).get<double>(), pt.at(1).get<double>()});
      plans.push_back(std::move(np));
    }
  } catch (const json::exception& e) {
    throw epg::UsageError("plans " + path.string() + ": " + e.what());
  }
  return plans;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ego-planning guided multi-graph trajectory prediction"};
  app.require_subcommand(1);

  std::optional<fs::path> config_path;
  std::vector<fs::path> data_paths;
  std::optional<std::uint64_t> seed;
  fs::path out_dir = "out";

  auto common = [&](CLI::App* sub, bool needs_data) {
    sub->add_option("--config", config_path, "Run configuration (JSON)")->check(CLI::ExistingFile);
    auto* d = sub->add_option("--data", data_paths, "Canonical sample files")->check(CLI::ExistingFile);
    if (needs_data) d->required();
    sub->add_option("--seed", seed, "Override the training seed");
    sub->add_option("--out", out_dir, "Output directory");
  };

  auto* prepare = app.add_subcommand("prepare", "Window trajectory tables into canonical samples");
  std::vector<fs::path> tables;
  std::string format = "apollo";
  std::optional<std::int64_t> ego_id;
  std::size_t synthetic_scenes = 0;
  prepare->add_option("--table", tables, "Trajectory tables")->check(CLI::ExistingFile);
  prepare->add_option("--format", format, "Table format")->check(CLI::IsMember({"apollo", "ngsim"}));
  prepare->add_option("--ego-id", ego_id, "Ego agent id (default: every complete agent)");
  prepare->add_option("--synthetic", synthetic_scenes, "Generate this many synthetic scenes instead");
  common(prepare, false);

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  common(train_cmd, true);

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  fs::path model_path;
  eval_cmd->add_option("--model", model_path, "Trainer checkpoint")->required()->check(CLI::ExistingFile);
  common(eval_cmd, true);

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate the six cumulative configurations");
  common(ablate, true);

  auto* whatif = app.add_subcommand("what-if", "Predict under alternative ego plans");
  fs::path plans_path;
  std::size_t sample_index = 0;
  whatif->add_option("--model", model_path, "Trainer checkpoint")->required()->check(CLI::ExistingFile);
  whatif->add_option("--plans", plans_path, "Alternative plans (JSON)")->required()->check(CLI::ExistingFile);
  whatif->add_option("--sample", sample_index, "Sample index");
  common(whatif, true);

  auto* render = app.add_subcommand("render", "Draw a sample as SVG");
  std::optional<fs::path> render_model;
  render->add_option("--model", render_model, "Trainer checkpoint for predictions")->check(CLI::ExistingFile);
  render->add_option("--sample", sample_index, "Sample index");
  common(render, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(epg::ErrorKind::Usage);
  }

  try {
    RunConfig rc = load_run_config(config_path);
    if (seed) rc.train.seed = *seed;
    auto load_data = [&] {
      std::vector<epg::Sample> all;
      for (const auto& p : data_paths) {
        auto part = epg::read_canonical(p);
        all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
      }
      return all;
    };

    if (*prepare) {
      if (tables.empty() == (synthetic_scenes == 0))
        throw epg::UsageError("prepare needs exactly one of --table or --synthetic");
      std::vector<epg::Sample> samples;
      if (synthetic_scenes) {
        epg::SyntheticOptions opts;
        opts.scenes = synthetic_scenes;
        opts.obs_points = rc.dataset.obs_points;
        opts.pred_frames = rc.dataset.pred_frames;
        if (seed) opts.seed = *seed;
        samples = epg::synthetic_samples(opts);
      } else {
        const auto fmt = format == "ngsim" ? epg::TableFormat::NgsimLike : epg::TableFormat::ApolloLike;
        for (const auto& t : tables) {
          const epg::Recording rec = epg::load_trajectory_table(t, fmt);
          const auto sel = ego_id ? epg::EgoSelection::GivenId : epg::EgoSelection::EveryCompleteAgent;
          for (const auto& s : epg::window_samples(rec, rc.dataset, sel, ego_id))
            samples.push_back(epg::ego_center(s));
        }
      }
      const fs::path path = ensure_dir(out_dir) / "samples.jsonl";
      epg::write_canonical(samples, path);
      std::cout << "wrote " << samples.size() << " samples to " << path.string() << '\n';
      return 0;
    }

    if (*train_cmd) {
      const auto data = load_data();
      ensure_dir(out_dir);
      epg::EpgMgcn model(rc.model, rc.train.seed);
      epg::Trainer trainer(model, rc.train);
      trainer.run(data);
      const fs::path ckpt = out_dir / "checkpoint.bin";
      trainer.save_checkpoint(ckpt);
      auto rec = open_out(out_dir / "run.jsonl");
      epg::write_run_record(trainer.record(), rec);
      const auto& epochs = trainer.record().epochs;
      std::printf("%-8s %-14s %-10s\n", "epoch", "loss", "lr");
      for (std::size_t k = 0; k < epochs.size(); ++k)
        if (k + 1 == epochs.size() || k % 50 == 0)
          std::printf("%-8zu %-14.6g %-10.3g\n", epochs[k].epoch, epochs[k].mean_loss,
                      epochs[k].learning_rate);
      std::cout << "checkpoint " << ckpt.string() << '\n';
      return 0;
    }

    if (*eval_cmd) {
      const auto data = load_data();
      const epg::EpgMgcn model = epg::load_model(model_path);
      const epg::MetricReport rep = epg::evaluate(model, data);
      epg::print_report(rep, std::cout);
      auto rec = open_out(ensure_dir(out_dir) / "metrics.jsonl");
      rec << rep.to_json().dump() << '\n';
      return 0;
    }

    if (*ablate) {
      const auto data = load_data();
      const auto rows = epg::run_ablation(data, rc.model, rc.train);
      auto rec = open_out(ensure_dir(out_dir) / "ablation.jsonl");
      epg::write_ablation_table(rows, std::cout, &rec);
      for (const auto& r : rows)
        if (!r.failure.empty()) return static_cast<int>(epg::ErrorKind::Numeric);
      return 0;
    }

    if (*whatif) {
      const auto data = load_data();
      const epg::Sample& s = pick_sample(data, sample_index);
      const epg::EpgMgcn model = epg::load_model(model_path);
      const auto result = epg::what_if(model, s, read_plans(plans_path));
      std::printf("%-16s %-10s %-14s\n", "plan", "agent", "divergence");
      for (const auto& o : result.outcomes)
        for (std::size_t k = 0; k < o.forecast.size(); ++k)
          std::printf("%-16s %-10lld %-14.6g\n", o.name.c_str(),
                      static_cast<long long>(s.agent_ids[o.forecast.agents[k]]), o.divergence[k]);
      auto rec = open_out(ensure_dir(out_dir) / "what_if.jsonl");
      rec << epg::to_json(result, s).dump() << '\n';
      return 0;
    }

    if (*render) {
      const auto data = load_data();
      const epg::Sample& s = pick_sample(data, sample_index);
      std::optional<epg::Forecast> forecast;
      if (render_model) forecast = epg::load_model(*render_model).forward(s);
      const fs::path path = ensure_dir(out_dir) / ("sample_" + std::to_string(sample_index) + ".svg");
      epg::render_scene(s, forecast ? &*forecast : nullptr, path);
      std::cout << "wrote " << path.string() << '\n';
      return 0;
    }
  } catch (const epg::Error& e) {
    std::cerr << e.what() << '\n';
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
