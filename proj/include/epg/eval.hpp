#pragma once

// Displacement metrics, the cumulative ablation harness, what-if prediction
// under alternative ego plans, and SVG scene rendering.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "epg/model.hpp"
#include "epg/trainer.hpp"

namespace epg {

/// Weights for vehicle, pedestrian, bicyclist.
inline constexpr std::array<double, 3> kCategoryWeights{0.20, 0.58, 0.22};

struct DisplacementError {
  double ade = 0.0;
  double fde = 0.0;
  std::size_t frames = 0;  // unmasked frames used
  std::vector<std::optional<double>> fde_at_seconds;  // index k-1 holds FDE@k s
};

/// ADE over unmasked frames and FDE at the last unmasked frame. FDE@k s uses
/// future frame round(k * frame_rate) (1-based). nullopt when every frame is
/// masked.
std::optional<DisplacementError> displacement_errors(std::span<const Vec2> predicted,
                                                     std::span<const Vec2> truth,
                                                     std::span<const std::uint8_t> mask,
                                                     double frame_rate);

struct WeightedScores {
  double wsade = 0.0;
  double wsfde = 0.0;
};

/// Per-category (ADE, FDE); all three weighted categories must be present.
WeightedScores weighted_scores(const std::map<Category, std::pair<double, double>>& per_category);

struct CategoryMetrics {
  double ade = 0.0;
  double fde = 0.0;
  std::size_t agents = 0;
  std::vector<std::optional<double>> fde_at_seconds;
};

struct MetricReport {
  std::map<Category, CategoryMetrics> per_category;
  double ade = 0.0;  // over all evaluated agents
  double fde = 0.0;
  std::vector<std::optional<double>> fde_at_seconds;
  std::optional<WeightedScores> weighted;  // absent unless all three categories were seen
  std::size_t samples = 0;
  std::size_t agents = 0;
  std::size_t excluded_agents = 0;  // predicted but with no unmasked future

  nlohmann::json to_json() const;
};

/// Evaluates every predicted non-ego agent with at least one unmasked future
/// frame. Samples run in parallel; aggregation order is fixed.
MetricReport evaluate(const EpgMgcn& model, const std::vector<Sample>& samples);

void print_report(const MetricReport& r, std::ostream& out);

// ---- ablation -----------------------------------------------------------------

struct ComponentFlags {
  std::array<bool, kGraphKinds> graphs{};
  bool plan_fusion = false;
  bool category_specific = false;
  friend bool operator==(const ComponentFlags&, const ComponentFlags&) = default;
};

/// Which components a configuration asks for.
ComponentFlags expected_components(const ModelConfig& c);
/// Which components the registered parameter names actually contain.
ComponentFlags audit_components(const ParamStore& params);

struct AblationRow {
  int index = 0;
  ComponentFlags flags;
  bool audit_ok = false;
  std::optional<double> wsade;
  std::optional<double> ade;
  std::string failure;
};

std::vector<AblationRow> run_ablation(const std::vector<Sample>& data, const ModelConfig& base,
                                      const TrainConfig& train_config);

void write_ablation_table(const std::vector<AblationRow>& rows, std::ostream& human,
                          std::ostream* records);

// ---- what-if ------------------------------------------------------------------

struct NamedPlan {
  std::string name;
  std::vector<Vec2> plan;
};

struct WhatIfOutcome {
  std::string name;
  Forecast forecast;
  std::vector<double> planning_column;  // raw planning-graph column 0
  std::vector<double> divergence;       // per forecast agent, L2 over all frames vs base plan
  std::vector<double> max_coordinate_difference;
};

struct WhatIfResult {
  Forecast base;
  std::vector<double> base_planning_column;
  std::vector<WhatIfOutcome> outcomes;
};

WhatIfResult what_if(const EpgMgcn& model, const Sample& sample,
                     const std::vector<NamedPlan>& alternatives);

nlohmann::json to_json(const WhatIfResult& r, const Sample& s);

// ---- rendering ----------------------------------------------------------------

/// Deterministic SVG: observed tracks solid, ground truth solid (lighter),
/// predictions dashed, ego drawn thicker in red. One <path> per agent per
/// drawn track type.
void render_scene(const Sample& sample, const Forecast* forecast, std::ostream& out);
void render_scene(const Sample& sample, const Forecast* forecast,
                  const std::filesystem::path& path);

}  // namespace epg
