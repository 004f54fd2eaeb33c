#include "epg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>

#include "epg/error.hpp"

namespace epg {

std::optional<DisplacementError> displacement_errors(std::span<const Vec2> predicted,
                                                     std::span<const Vec2> truth,
                                                     std::span<const std::uint8_t> mask,
                                                     double frame_rate) {
  if (predicted.size() != truth.size() || mask.size() != truth.size())
    throw DimensionError("displacement_errors: " + std::to_string(predicted.size()) +
                         " predicted, " + std::to_string(truth.size()) + " true, " +
                         std::to_string(mask.size()) + " mask entries");
  DisplacementError out;
  double total = 0.0;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    if (!mask[t]) continue;
    const double e = norm(predicted[t] - truth[t]);
    total += e;
    out.fde = e;
    ++out.frames;
  }
  if (out.frames == 0) return std::nullopt;
  out.ade = total / static_cast<double>(out.frames);
  const auto horizons = static_cast<std::size_t>(std::floor(static_cast<double>(truth.size()) / frame_rate + 1e-9));
  for (std::size_t k = 1; k <= horizons; ++k) {
    const auto idx = static_cast<std::size_t>(std::llround(static_cast<double>(k) * frame_rate));
    if (idx >= 1 && idx <= truth.size() && mask[idx - 1])
      out.fde_at_seconds.emplace_back(norm(predicted[idx - 1] - truth[idx - 1]));
    else
      out.fde_at_seconds.emplace_back(std::nullopt);
  }
  return out;
}

WeightedScores weighted_scores(const std::map<Category, std::pair<double, double>>& per_category) {
  static constexpr Category kOrder[3] = {Category::Vehicle, Category::Pedestrian, Category::Bicyclist};
  WeightedScores w;
  for (std::size_t k = 0; k < 3; ++k) {
    auto it = per_category.find(kOrder[k]);
    if (it == per_category.end())
      throw UsageError("weighted scores need category '" + std::string(category_name(kOrder[k])) + "'");
    w.wsade += kCategoryWeights[k] * it->second.first;
    w.wsfde += kCategoryWeights[k] * it->second.second;
  }
  return w;
}

namespace {

struct AgentResult {
  Category category;
  DisplacementError error;
};

struct SampleResult {
  std::vector<AgentResult> agents;
  std::size_t excluded = 0;
};

SampleResult evaluate_sample(const EpgMgcn& model, const Sample& s) {
  SampleResult r;
  const Forecast f = model.forward(s);
  std::vector<Vec2> pred(s.pred_frames), truth(s.pred_frames);
  std::vector<std::uint8_t> mask(s.pred_frames);
  for (std::size_t k = 0; k < f.size(); ++k) {
    const std::size_t i = f.agents[k];
    for (std::size_t t = 0; t < s.pred_frames; ++t) {
      pred[t] = f.at(k, t);
      truth[t] = s.fut(i, t);
      mask[t] = s.fut_mask[i * s.pred_frames + t];
    }
    if (auto e = displacement_errors(pred, truth, mask, s.frame_rate))
      r.agents.push_back({s.categories[i], std::move(*e)});
    else
      ++r.excluded;
  }
  return r;
}

void accumulate_horizons(std::vector<std::optional<double>>& sums, std::vector<std::size_t>& counts,
                         const std::vector<std::optional<double>>& values) {
  if (sums.size() < values.size()) {
    sums.resize(values.size());
    counts.resize(values.size(), 0);
  }
  for (std::size_t k = 0; k < values.size(); ++k)
    if (values[k]) {
      sums[k] = sums[k].value_or(0.0) + *values[k];
      ++counts[k];
    }
}

void finish_horizons(std::vector<std::optional<double>>& sums, const std::vector<std::size_t>& counts) {
  for (std::size_t k = 0; k < sums.size(); ++k)
    if (sums[k]) *sums[k] /= static_cast<double>(counts[k]);
}

}  // namespace

MetricReport evaluate(const EpgMgcn& model, const std::vector<Sample>& samples) {
  std::vector<SampleResult> results(samples.size());
  const auto count = static_cast<std::int64_t>(samples.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (std::int64_t k = 0; k < count; ++k)
    results[static_cast<std::size_t>(k)] = evaluate_sample(model, samples[static_cast<std::size_t>(k)]);

  MetricReport rep;
  rep.samples = samples.size();
  std::map<Category, std::vector<std::size_t>> horizon_counts;
  std::vector<std::size_t> all_counts;
  for (const auto& r : results) {
    rep.excluded_agents += r.excluded;
    for (const auto& a : r.agents) {
      auto& m = rep.per_category[a.category];
      m.ade += a.error.ade;
      m.fde += a.error.fde;
      ++m.agents;
      accumulate_horizons(m.fde_at_seconds, horizon_counts[a.category], a.error.fde_at_seconds);
      accumulate_horizons(rep.fde_at_seconds, all_counts, a.error.fde_at_seconds);
      rep.ade += a.error.ade;
      rep.fde += a.error.fde;
      ++rep.agents;
    }
  }
  for (auto& [cat, m] : rep.per_category) {
    m.ade /= static_cast<double>(m.agents);
    m.fde /= static_cast<double>(m.agents);
    finish_horizons(m.fde_at_seconds, horizon_counts[cat]);
  }
  if (rep.agents) {
    rep.ade /= static_cast<double>(rep.agents);
    rep.fde /= static_cast<double>(rep.agents);
  }
  finish_horizons(rep.fde_at_seconds, all_counts);
  std::map<Category, std::pair<double, double>> pc;
  for (const auto& [cat, m] : rep.per_category) pc[cat] = {m.ade, m.fde};
  if (pc.count(Category::Vehicle) && pc.count(Category::Pedestrian) && pc.count(Category::Bicyclist))
    rep.weighted = weighted_scores(pc);
  return rep;
}

nlohmann::json MetricReport::to_json() const {
  auto horizons = [](const std::vector<std::optional<double>>& h) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& v : h) a.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
    return a;
  };
  nlohmann::json j;
  j["samples"] = samples;
  j["agents"] = agents;
  j["excluded_agents"] = excluded_agents;
  j["ade"] = ade;
  j["fde"] = fde;
  j["fde_at_seconds"] = horizons(fde_at_seconds);
  auto& pc = j["per_category"] = nlohmann::json::object();
  for (const auto& [cat, m] : per_category)
    pc[std::string(category_name(cat))] = {{"ade", m.ade},
                                           {"fde", m.fde},
                                           {"agents", m.agents},
                                           {"fde_at_seconds", horizons(m.fde_at_seconds)}};
  if (weighted) {
    j["wsade"] = weighted->wsade;
    j["wsfde"] = weighted->wsfde;
  }
  return j;
}

void print_report(const MetricReport& r, std::ostream& out) {
  out << std::fixed << std::setprecision(4);
  out << "samples " << r.samples << ", agents " << r.agents << " (excluded " << r.excluded_agents
      << ")\n";
  out << std::left << std::setw(12) << "category" << std::setw(8) << "agents" << std::setw(10)
      << "ADE" << std::setw(10) << "FDE" << '\n';
  for (const auto& [cat, m] : r.per_category)
    out << std::setw(12) << category_name(cat) << std::setw(8) << m.agents << std::setw(10) << m.ade
        << std::setw(10) << m.fde << '\n';
  out << std::setw(12) << "all" << std::setw(8) << r.agents << std::setw(10) << r.ade
      << std::setw(10) << r.fde << '\n';
  for (std::size_t k = 0; k < r.fde_at_seconds.size(); ++k)
    if (r.fde_at_seconds[k]) out << "FDE@" << k + 1 << "s " << *r.fde_at_seconds[k] << '\n';
  if (r.weighted)
    out << "WSADE " << r.weighted->wsade << "  WSFDE " << r.weighted->wsfde << '\n';
  out.unsetf(std::ios::floatfield);
}

// ---- ablation -----------------------------------------------------------------

ComponentFlags expected_components(const ModelConfig& c) {
  ComponentFlags f;
  f.graphs = c.enabled_graphs;
  f.plan_fusion = c.planning_fusion_enabled;
  f.category_specific = c.category_specific_decoders;
  return f;
}

ComponentFlags audit_components(const ParamStore& params) {
  ComponentFlags f;
  auto starts = [](const std::string& s, const std::string& p) { return s.rfind(p, 0) == 0; };
  for (const auto& name : params.names()) {
    for (std::size_t g = 0; g < kGraphKinds; ++g)
      if (starts(name, "branch." + std::string(graph_name(static_cast<GraphKind>(g))) + "."))
        f.graphs[g] = true;
    if (starts(name, "plan.") || starts(name, "plan_fusion.")) f.plan_fusion = true;
    if (starts(name, "decoder.") && !starts(name, "decoder.shared.")) f.category_specific = true;
  }
  return f;
}

std::vector<AblationRow> run_ablation(const std::vector<Sample>& data, const ModelConfig& base,
                                      const TrainConfig& train_config) {
  std::vector<AblationRow> rows;
  for (int r = 1; r <= 6; ++r) {
    AblationRow row;
    row.index = r;
    try {
      const ModelConfig cfg = ModelConfig::ablation_row(r, base);
      row.flags = expected_components(cfg);
      TrainResult result = train(data, cfg, train_config);
      row.audit_ok = audit_components(result.model.params()) == row.flags;
      const MetricReport rep = evaluate(result.model, data);
      row.ade = rep.ade;
      if (rep.weighted) row.wsade = rep.weighted->wsade;
      if (!row.audit_ok) row.failure = "parameter audit mismatch";
    } catch (const std::exception& e) {
      row.failure = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_ablation_table(const std::vector<AblationRow>& rows, std::ostream& human,
                          std::ostream* records) {
  auto mark = [](bool b) { return b ? "v" : "x"; };
  human << "Index  G^D G^V G^P G^C PGP CS-GRU  WSADE\n";
  for (const auto& r : rows) {
    human << "A" << r.index << "     ";
    for (bool g : r.flags.graphs) human << " " << mark(g) << "  ";
    human << " " << mark(r.flags.plan_fusion) << "   " << mark(r.flags.category_specific) << "     ";
    if (r.wsade) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4f", *r.wsade);
      human << buf;
    } else {
      human << "FAILED";
    }
    if (!r.failure.empty()) human << "  (" << r.failure << ")";
    human << '\n';
    if (records) {
      nlohmann::json j{{"index", "A" + std::to_string(r.index)},
                       {"G_D", r.flags.graphs[0]},
                       {"G_V", r.flags.graphs[1]},
                       {"G_P", r.flags.graphs[2]},
                       {"G_C", r.flags.graphs[3]},
                       {"PGP", r.flags.plan_fusion},
                       {"CS_GRU", r.flags.category_specific},
                       {"audit_ok", r.audit_ok},
                       {"wsade", r.wsade ? nlohmann::json(*r.wsade) : nlohmann::json(nullptr)},
                       {"ade", r.ade ? nlohmann::json(*r.ade) : nlohmann::json(nullptr)}};
      if (!r.failure.empty()) j["failure"] = r.failure;
      *records << j.dump() << '\n';
    }
  }
}

// ---- what-if ------------------------------------------------------------------

namespace {
std::vector<double> planning_column(const Sample& s, double beta) {
  const Matrix p = build_planning_graph(s, beta);
  std::vector<double> col(s.agent_count());
  for (std::size_t i = 0; i < s.agent_count(); ++i) col[i] = p(i, 0);
  return col;
}
}  // namespace

WhatIfResult what_if(const EpgMgcn& model, const Sample& sample,
                     const std::vector<NamedPlan>& alternatives) {
  WhatIfResult r;
  r.base = model.forward(sample);
  r.base_planning_column = planning_column(sample, model.config().beta_degrees);
  for (const auto& alt : alternatives) {
    if (alt.plan.size() != sample.pred_frames)
      throw UsageError("plan '" + alt.name + "' has " + std::to_string(alt.plan.size()) +
                       " points, expected " + std::to_string(sample.pred_frames));
    Sample s = sample;
    s.plan = alt.plan;
    WhatIfOutcome o;
    o.name = alt.name;
    o.forecast = model.forward(s);
    o.planning_column = planning_column(s, model.config().beta_degrees);
    for (std::size_t k = 0; k < o.forecast.size(); ++k) {
      double sq = 0.0, mx = 0.0;
      for (std::size_t t = 0; t < sample.pred_frames; ++t) {
        const Vec2 d = o.forecast.at(k, t) - r.base.at(k, t);
        sq += dot(d, d);
        mx = std::max({mx, std::abs(d.x), std::abs(d.y)});
      }
      o.divergence.push_back(std::sqrt(sq));
      o.max_coordinate_difference.push_back(mx);
    }
    r.outcomes.push_back(std::move(o));
  }
  return r;
}

nlohmann::json to_json(const WhatIfResult& r, const Sample& s) {
  auto traj = [&](const Forecast& f) {
    nlohmann::json a = nlohmann::json::object();
    for (std::size_t k = 0; k < f.size(); ++k) {
      nlohmann::json pts = nlohmann::json::array();
      for (std::size_t t = 0; t < s.pred_frames; ++t) {
        const Vec2 p = f.at(k, t) + s.origin;
        pts.push_back({p.x, p.y});
      }
      a[std::to_string(s.agent_ids[f.agents[k]])] = pts;
    }
    return a;
  };
  nlohmann::json j;
  j["base"] = {{"predictions", traj(r.base)}, {"planning_column", r.base_planning_column}};
  auto& outs = j["alternatives"] = nlohmann::json::array();
  for (const auto& o : r.outcomes) {
    nlohmann::json div = nlohmann::json::object();
    for (std::size_t k = 0; k < o.forecast.size(); ++k)
      div[std::to_string(s.agent_ids[o.forecast.agents[k]])] = o.divergence[k];
    outs.push_back({{"name", o.name},
                    {"predictions", traj(o.forecast)},
                    {"planning_column", o.planning_column},
                    {"divergence", div}});
  }
  return j;
}

// ---- rendering ----------------------------------------------------------------

namespace {

const char* category_color(Category c) {
  switch (c) {
    case Category::Vehicle: return "#1f77b4";
    case Category::Pedestrian: return "#2ca02c";
    case Category::Bicyclist: return "#ff7f0e";
    case Category::Others: return "#7f7f7f";
  }
  return "#000000";
}

struct Canvas {
  double min_x, min_y, scale;
  static constexpr double kSize = 800.0, kMargin = 40.0;

  std::string point(Vec2 p) const {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f,%.3f", kMargin + (p.x - min_x) * scale,
                  kSize - kMargin - (p.y - min_y) * scale);
    return buf;
  }
};

}  // namespace

void render_scene(const Sample& s, const Forecast* forecast, std::ostream& out) {
  const std::size_t n = s.agent_count();
  std::vector<Vec2> all;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < s.obs_points; ++t)
      if (s.obs_present(i, t)) all.push_back(s.obs(i, t));
    for (std::size_t t = 0; t < s.pred_frames; ++t)
      if (s.fut_present(i, t)) all.push_back(s.fut(i, t));
  }
  all.insert(all.end(), s.plan.begin(), s.plan.end());
  if (forecast)
    for (std::size_t k = 0; k < forecast->size(); ++k)
      for (std::size_t t = 0; t < s.pred_frames; ++t) all.push_back(forecast->at(k, t));
  double min_x = all.front().x, max_x = min_x, min_y = all.front().y, max_y = min_y;
  for (const Vec2& p : all) {
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  }
  const double extent = std::max({max_x - min_x, max_y - min_y, 1e-6});
  const Canvas cv{min_x, min_y, (Canvas::kSize - 2 * Canvas::kMargin) / extent};

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"800\" "
         "viewBox=\"0 0 800 800\">\n"
      << "<rect width=\"800\" height=\"800\" fill=\"white\"/>\n";
  auto path = [&](const std::vector<Vec2>& pts, const char* cls, const char* color, double width,
                  const char* extra, std::int64_t id) {
    if (pts.empty()) return;
    out << "<path class=\"" << cls << "\" data-agent=\"" << id << "\" d=\"";
    for (std::size_t k = 0; k < pts.size(); ++k) out << (k ? " L " : "M ") << cv.point(pts[k]);
    out << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << width << "\"" << extra
        << "/>\n";
  };
  for (std::size_t i = 0; i < n; ++i) {
    const bool ego = i == 0;
    const char* color = ego ? "#d62728" : category_color(s.categories[i]);
    const double width = ego ? 3.0 : 1.5;
    std::vector<Vec2> obs;
    for (std::size_t t = 0; t < s.obs_points; ++t)
      if (s.obs_present(i, t)) obs.push_back(s.obs(i, t));
    path(obs, "observed", color, width, "", s.agent_ids[i]);

    std::vector<Vec2> truth;
    if (s.obs_present(i, s.last_obs())) truth.push_back(s.obs(i, s.last_obs()));
    const std::size_t before = truth.size();
    for (std::size_t t = 0; t < s.pred_frames; ++t) {
      if (ego)
        truth.push_back(s.plan[t]);
      else if (s.fut_present(i, t))
        truth.push_back(s.fut(i, t));
    }
    if (truth.size() > before)
      path(truth, ego ? "plan" : "truth", color, width, " stroke-opacity=\"0.4\"", s.agent_ids[i]);
  }
  if (forecast)
    for (std::size_t k = 0; k < forecast->size(); ++k) {
      const std::size_t i = forecast->agents[k];
      std::vector<Vec2> pts{s.obs(i, s.last_obs())};
      for (std::size_t t = 0; t < s.pred_frames; ++t) pts.push_back(forecast->at(k, t));
      path(pts, "prediction", category_color(s.categories[i]), 1.5, " stroke-dasharray=\"6,4\"",
           s.agent_ids[i]);
    }
  out << "</svg>\n";
}

void render_scene(const Sample& s, const Forecast* forecast, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  render_scene(s, forecast, out);
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace epg
