#include "epg/model.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "epg/error.hpp"

namespace epg {

// ---- config -----------------------------------------------------------------

std::size_t ModelConfig::enabled_graph_count() const {
  std::size_t n = 0;
  for (bool b : enabled_graphs) n += b ? 1 : 0;
  return n;
}

void ModelConfig::validate() const {
  if (channels == 0) throw UsageError("channels must be positive");
  if (blocks_per_branch == 0) throw UsageError("blocks_per_branch must be positive");
  if (obs_points < 2 || pred_frames < 1) throw UsageError("bad window lengths");
  if (enabled_graph_count() == 0) throw UsageError("at least one graph must be enabled");
  if (categories_decoded.empty()) throw UsageError("no categories to decode");
  for (Category c : categories_decoded)
    if (c == Category::Others) throw UsageError("'others' agents are context only");
}

ModelConfig ModelConfig::ablation_row(int row, const ModelConfig& base) {
  if (row < 1 || row > 6) throw UsageError("ablation rows are 1..6");
  ModelConfig c = base;
  for (std::size_t g = 0; g < kGraphKinds; ++g) c.enabled_graphs[g] = row >= static_cast<int>(g) + 1;
  c.planning_fusion_enabled = row >= 5;
  c.category_specific_decoders = row >= 6;
  return c;
}

nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["channels"] = c.channels;
  j["blocks_per_branch"] = c.blocks_per_branch;
  j["obs_points"] = c.obs_points;
  j["pred_frames"] = c.pred_frames;
  auto& cats = j["categories_decoded"] = nlohmann::json::array();
  for (Category cat : c.categories_decoded) cats.push_back(std::string(category_name(cat)));
  auto& graphs = j["enabled_graphs"] = nlohmann::json::array();
  for (std::size_t g = 0; g < kGraphKinds; ++g)
    if (c.enabled_graphs[g]) graphs.push_back(std::string(graph_name(static_cast<GraphKind>(g))));
  j["planning_fusion_enabled"] = c.planning_fusion_enabled;
  j["category_specific_decoders"] = c.category_specific_decoders;
  j["distance_threshold"] = c.distance_threshold;
  j["beta_degrees"] = c.beta_degrees;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.channels = j.value("channels", c.channels);
  c.blocks_per_branch = j.value("blocks_per_branch", c.blocks_per_branch);
  c.obs_points = j.value("obs_points", c.obs_points);
  c.pred_frames = j.value("pred_frames", c.pred_frames);
  if (j.contains("categories_decoded")) {
    c.categories_decoded.clear();
    for (const auto& s : j.at("categories_decoded"))
      c.categories_decoded.push_back(parse_category(s.get<std::string>()));
  }
  if (j.contains("enabled_graphs")) {
    c.enabled_graphs.fill(false);
    for (const auto& s : j.at("enabled_graphs")) {
      bool found = false;
      for (std::size_t g = 0; g < kGraphKinds; ++g)
        if (graph_name(static_cast<GraphKind>(g)) == s.get<std::string>()) {
          c.enabled_graphs[g] = true;
          found = true;
        }
      if (!found) throw UsageError("unknown graph '" + s.get<std::string>() + "'");
    }
  }
  c.planning_fusion_enabled = j.value("planning_fusion_enabled", c.planning_fusion_enabled);
  c.category_specific_decoders = j.value("category_specific_decoders", c.category_specific_decoders);
  c.distance_threshold = j.value("distance_threshold", c.distance_threshold);
  c.beta_degrees = j.value("beta_degrees", c.beta_degrees);
  c.validate();
  return c;
}

// ---- parameters ---------------------------------------------------------------

Tensor ParamStore::add(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng) {
  if (index_.count(name)) throw UsageError("parameter '" + name + "' registered twice");
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = uniform(rng, -bound, bound);
  Tensor t = Tensor::from(std::move(shape), std::move(v), true);
  t.set_name(name);
  index_[name] = tensors_.size();
  tensors_.push_back(t);
  return t;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("no parameter named '" + name + "'");
  return tensors_[it->second];
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  for (const auto& t : tensors_) out.push_back(t.name());
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& t : tensors_) t.zero_grad();
}

void fill_params(ParamStore& params, double v) {
  for (auto& t : params.tensors())
    for (double& x : t.mutable_data()) x = v;
}

namespace {

constexpr char kParamMagic[8] = {'E', 'P', 'G', 'P', 'A', 'R', 'A', 'M'};
constexpr std::uint32_t kParamVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw FormatError("truncated parameter file");
  return v;
}

}  // namespace

void save_params(const ParamStore& params, std::ostream& out) {
  out.write(kParamMagic, sizeof kParamMagic);
  put<std::uint32_t>(out, kParamVersion);
  put<std::uint64_t>(out, params.tensors().size());
  for (const auto& t : params.tensors()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name().size()));
    out.write(t.name().data(), static_cast<std::streamsize>(t.name().size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
}

void load_params(ParamStore& params, std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kParamMagic, sizeof magic) != 0)
    throw FormatError("not a parameter file");
  const auto version = take<std::uint32_t>(in);
  if (version != kParamVersion)
    throw FormatError("parameter file version " + std::to_string(version) + ", expected " +
                      std::to_string(kParamVersion));
  const auto count = take<std::uint64_t>(in);
  auto& tensors = params.tensors();
  // Reads and checks every tensor before writing any of them.
  std::vector<std::vector<double>> values;
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto len = take<std::uint32_t>(in);
    if (len > 4096) throw FormatError("corrupt parameter name length");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw FormatError("truncated parameter file");
    const auto rank = take<std::uint32_t>(in);
    if (rank > 8) throw FormatError("corrupt rank for '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) d = take<std::uint64_t>(in);
    if (k >= tensors.size())
      throw FormatError("parameter mismatch: file has extra parameter '" + name + "'");
    const Tensor& t = tensors[k];
    if (name != t.name() || shape != t.shape())
      throw FormatError("parameter mismatch at '" + t.name() + "' " + shape_str(t.shape()) +
                        ": file has '" + name + "' " + shape_str(shape));
    std::vector<double> v(t.numel());
    if (!in.read(reinterpret_cast<char*>(v.data()),
                 static_cast<std::streamsize>(v.size() * sizeof(double))))
      throw FormatError("truncated data for '" + name + "'");
    values.push_back(std::move(v));
  }
  if (count < tensors.size())
    throw FormatError("parameter mismatch: file lacks parameter '" + tensors[count].name() + "'");
  for (std::size_t k = 0; k < tensors.size(); ++k)
    std::copy(values[k].begin(), values[k].end(), tensors[k].mutable_data().begin());
}

// ---- model --------------------------------------------------------------------

namespace {

GruParams make_gru(ParamStore& ps, const std::string& prefix, std::size_t cx, std::size_t ch,
                   Rng& rng) {
  GruParams g;
  g.w_z = ps.add(prefix + ".w_z", {ch, cx}, cx, rng);
  g.w_r = ps.add(prefix + ".w_r", {ch, cx}, cx, rng);
  g.w_h = ps.add(prefix + ".w_h", {ch, cx}, cx, rng);
  g.u_z = ps.add(prefix + ".u_z", {ch, ch}, ch, rng);
  g.u_r = ps.add(prefix + ".u_r", {ch, ch}, ch, rng);
  g.u_h = ps.add(prefix + ".u_h", {ch, ch}, ch, rng);
  g.b_z = ps.add(prefix + ".b_z", {ch}, ch, rng);
  g.b_r = ps.add(prefix + ".b_r", {ch}, ch, rng);
  g.b_h = ps.add(prefix + ".b_h", {ch}, ch, rng);
  return g;
}

Tensor matrix_tensor(const Matrix& m) {
  return Tensor::from({m.size(), m.size()}, std::vector<double>(m.values().begin(), m.values().end()));
}

// 1x1 fusion across a stack of equally shaped [N,C,T] maps.
Tensor fuse_stack(const std::vector<Tensor>& parts, const Tensor& w, const Tensor& b) {
  const Shape shape = parts.front().shape();
  const std::size_t depth = parts.size();
  Tensor stacked = reshape(stack(parts), {1, depth, parts.front().numel()});
  return relu(reshape(pointwise_conv(stacked, w, b), shape));
}

}  // namespace

Vec2 Forecast::at(std::size_t k, std::size_t t) const {
  const std::size_t T = positions.dim(1);
  return {positions.data()[(k * T + t) * 2], positions.data()[(k * T + t) * 2 + 1]};
}

EpgMgcn::EpgMgcn(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const std::size_t C = config_.channels;
  embed_w_ = params_.add("embed.weight", {C, 2}, 2, rng);
  embed_b_ = params_.add("embed.bias", {C}, 2, rng);
  for (std::size_t g = 0; g < kGraphKinds; ++g) {
    if (!config_.enabled_graphs[g]) continue;
    const std::string prefix = "branch." + std::string(graph_name(static_cast<GraphKind>(g)));
    for (std::size_t k = 0; k < config_.blocks_per_branch; ++k) {
      const std::string bp = prefix + ".block" + std::to_string(k);
      GraphBlockParams blk;
      blk.spatial = params_.add(bp + ".spatial", {C, C}, C, rng);
      blk.temporal = params_.add(bp + ".temporal", {C, C, 3}, 3 * C, rng);
      branches_[g].push_back(blk);
    }
  }
  const std::size_t depth = config_.enabled_graph_count();
  graph_fuse_w_ = params_.add("graph_fusion.weight", {1, depth}, depth, rng);
  graph_fuse_b_ = params_.add("graph_fusion.bias", {1}, depth, rng);
  if (config_.planning_fusion_enabled) {
    plan_embed_w_ = params_.add("plan.embed.weight", {C, 2}, 2, rng);
    plan_embed_b_ = params_.add("plan.embed.bias", {C}, 2, rng);
    plan_gru_ = make_gru(params_, "plan.gru", C, C, rng);
    plan_fuse_w_ = params_.add("plan_fusion.weight", {1, 2}, 2, rng);
    plan_fuse_b_ = params_.add("plan_fusion.bias", {1}, 2, rng);
  }
  std::vector<std::string> heads;
  if (config_.category_specific_decoders)
    for (Category c : config_.categories_decoded) heads.emplace_back(category_name(c));
  else
    heads.emplace_back("shared");
  for (const auto& h : heads) {
    const std::string prefix = "decoder." + h;
    DecoderParams d;
    d.encoder = make_gru(params_, prefix + ".enc", C, C, rng);
    d.decoder = make_gru(params_, prefix + ".dec", 2, C, rng);
    d.out_weight = params_.add(prefix + ".out.weight", {2, C}, C, rng);
    d.out_bias = params_.add(prefix + ".out.bias", {2}, C, rng);
    decoders_.emplace(h, std::move(d));
  }
}

const GraphBlockParams& EpgMgcn::block(GraphKind g, std::size_t k) const {
  const auto& b = branches_[static_cast<std::size_t>(g)];
  if (k >= b.size())
    throw UsageError("graph '" + std::string(graph_name(g)) + "' has no block " + std::to_string(k));
  return b[k];
}

bool EpgMgcn::decodes(Category c) const {
  if (c == Category::Others) return false;
  if (!config_.category_specific_decoders) return true;
  return decoders_.count(std::string(category_name(c))) != 0;
}

const DecoderParams& EpgMgcn::decoder_for(Category c) const {
  const std::string key = config_.category_specific_decoders ? std::string(category_name(c)) : "shared";
  auto it = decoders_.find(key);
  if (c == Category::Others || it == decoders_.end())
    throw RoutingError("no decoder for category '" + std::string(category_name(c)) + "'");
  return it->second;
}

std::array<std::optional<Matrix>, kGraphKinds> EpgMgcn::prepare_graphs(const Sample& s) const {
  std::array<std::optional<Matrix>, kGraphKinds> out;
  for (std::size_t g = 0; g < kGraphKinds; ++g) {
    if (!config_.enabled_graphs[g]) continue;
    Matrix raw;
    switch (static_cast<GraphKind>(g)) {
      case GraphKind::Distance: raw = build_distance_graph(s, config_.distance_threshold); break;
      case GraphKind::Visibility: raw = build_visibility_graph(s); break;
      case GraphKind::Planning: raw = build_planning_graph(s, config_.beta_degrees); break;
      case GraphKind::Category: raw = build_category_graph(s); break;
    }
    out[g] = normalize_adjacency(raw);
  }
  return out;
}

Tensor EpgMgcn::embed_inputs(const Sample& s) const {
  const std::size_t N = s.agent_count(), T = s.obs_points, C = config_.channels;
  if (T != config_.obs_points)
    throw DimensionError("sample has " + std::to_string(T) + " observed points, model expects " +
                         std::to_string(config_.obs_points));
  std::vector<double> coords(N * 2 * T), mask(N * C * T);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 0; t < T; ++t) {
      coords[(n * 2 + 0) * T + t] = s.obs(n, t).x;
      coords[(n * 2 + 1) * T + t] = s.obs(n, t).y;
      const double m = s.obs_present(n, t) ? 1.0 : 0.0;
      for (std::size_t c = 0; c < C; ++c) mask[(n * C + c) * T + t] = m;
    }
  Tensor x = Tensor::from({N, 2, T}, std::move(coords));
  return mul(pointwise_conv(x, embed_w_, embed_b_), Tensor::from({N, C, T}, std::move(mask)));
}

Tensor EpgMgcn::graph_conv_block(const Tensor& z, const Matrix& norm_adj,
                                 const GraphBlockParams& block) const {
  if (z.rank() != 3 || z.dim(0) != norm_adj.size())
    throw DimensionError("graph_conv_block: features " + shape_str(z.shape()) + " vs adjacency " +
                         std::to_string(norm_adj.size()) + "x" + std::to_string(norm_adj.size()));
  const Shape shape = z.shape();
  Tensor mixed = reshape(matmul(matrix_tensor(norm_adj), reshape(z, {shape[0], shape[1] * shape[2]})),
                         shape);
  return temporal_conv(relu(pointwise_conv(mixed, block.spatial)), block.temporal);
}

Tensor EpgMgcn::run_branch(GraphKind g, const Tensor& z, const Matrix& norm_adj) const {
  Tensor h = z;
  for (const auto& blk : branches_[static_cast<std::size_t>(g)]) h = graph_conv_block(h, norm_adj, blk);
  return h;
}

Tensor EpgMgcn::fuse_graph_features(const std::vector<Tensor>& branches) const {
  if (branches.size() != config_.enabled_graph_count())
    throw DimensionError("graph fusion expects " + std::to_string(config_.enabled_graph_count()) +
                         " branch outputs, got " + std::to_string(branches.size()));
  for (const auto& b : branches)
    if (b.shape() != branches.front().shape())
      throw DimensionError("graph fusion: " + shape_str(b.shape()) + " vs " +
                           shape_str(branches.front().shape()));
  return fuse_stack(branches, graph_fuse_w_, graph_fuse_b_);
}

Tensor EpgMgcn::encode_plan(const std::vector<Vec2>& plan) const {
  const std::size_t T = plan.size(), C = config_.channels;
  if (!config_.planning_fusion_enabled) throw UsageError("plan encoder disabled in this configuration");
  std::vector<double> coords(2 * T);
  for (std::size_t t = 0; t < T; ++t) {
    coords[t] = plan[t].x;
    coords[T + t] = plan[t].y;
  }
  Tensor emb = reshape(pointwise_conv(Tensor::from({2, T}, std::move(coords)), plan_embed_w_,
                                      plan_embed_b_),
                       {1, C, T});
  Tensor h = Tensor::zeros({C});
  for (std::size_t t = 0; t < T; ++t) h = gru_cell(select_column(emb, 0, t), h, plan_gru_);
  return h;
}

Tensor EpgMgcn::fuse_plan_features(const Tensor& graphs, const Tensor& plan_encoding) const {
  if (!config_.planning_fusion_enabled) return relu(graphs);
  if (plan_encoding.rank() != 1 || plan_encoding.dim(0) != graphs.dim(1))
    throw DimensionError("plan encoding " + shape_str(plan_encoding.shape()) + " vs features " +
                         shape_str(graphs.shape()));
  Tensor broadcast = expand_channels(plan_encoding, graphs.dim(0), graphs.dim(2));
  return fuse_stack({graphs, broadcast}, plan_fuse_w_, plan_fuse_b_);
}

Forecast EpgMgcn::cs_gru_decode(const Tensor& fusion, const Sample& s) const {
  const std::size_t C = config_.channels, T = fusion.dim(2);
  Forecast out;
  std::vector<Tensor> rows;
  for (std::size_t i = 1; i < s.agent_count(); ++i) {
    if (s.categories[i] == Category::Others || !s.obs_present(i, s.last_obs())) continue;
    const DecoderParams& d = decoder_for(s.categories[i]);
    Tensor h = Tensor::zeros({C});
    for (std::size_t t = 0; t < T; ++t) h = gru_cell(select_column(fusion, i, t), h, d.encoder);
    const Vec2 now = s.obs(i, s.last_obs());
    Tensor pos = Tensor::from({2}, {now.x, now.y});
    std::vector<Tensor> steps;
    for (std::size_t k = 0; k < config_.pred_frames; ++k) {
      h = gru_cell(pos, h, d.decoder);
      pos = add(pos, linear(h, d.out_weight, d.out_bias));
      steps.push_back(pos);
    }
    rows.push_back(stack(steps));
    out.agents.push_back(i);
  }
  if (!rows.empty()) out.positions = stack(rows);
  return out;
}

Forecast EpgMgcn::forward(const Sample& s) const { return forward(s, prepare_graphs(s)); }

Forecast EpgMgcn::forward(const Sample& s,
                          const std::array<std::optional<Matrix>, kGraphKinds>& graphs) const {
  if (s.pred_frames != config_.pred_frames || s.plan.size() != config_.pred_frames)
    throw DimensionError("sample predicts " + std::to_string(s.pred_frames) +
                         " frames, model expects " + std::to_string(config_.pred_frames));
  const Tensor z = embed_inputs(s);
  std::vector<Tensor> branch_out;
  for (std::size_t g = 0; g < kGraphKinds; ++g) {
    if (!config_.enabled_graphs[g]) continue;
    if (!graphs[g]) throw UsageError("missing adjacency for graph '" +
                                     std::string(graph_name(static_cast<GraphKind>(g))) + "'");
    branch_out.push_back(run_branch(static_cast<GraphKind>(g), z, *graphs[g]));
  }
  const Tensor fused = fuse_graph_features(branch_out);
  const Tensor plan = config_.planning_fusion_enabled ? encode_plan(s.plan) : Tensor{};
  return cs_gru_decode(fuse_plan_features(fused, plan), s);
}

Loss prediction_loss(const Forecast& f, const Sample& s) {
  Loss loss;
  if (f.size() == 0) {
    loss.value = Tensor::scalar(0.0);
    return loss;
  }
  const std::size_t K = f.size(), T = s.pred_frames;
  std::vector<double> target(K * T * 2, 0.0), mask(K * T, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t i = f.agents[k];
    if (!s.is_supervised(i)) continue;
    for (std::size_t t = 0; t < T; ++t) {
      if (!s.fut_present(i, t)) continue;
      mask[k * T + t] = 1.0;
      target[(k * T + t) * 2] = s.fut(i, t).x;
      target[(k * T + t) * 2 + 1] = s.fut(i, t).y;
      loss.has_targets = true;
    }
  }
  loss.value = masked_squared_error(f.positions, Tensor::from({K, T, 2}, std::move(target)),
                                    Tensor::from({K, T}, std::move(mask)));
  return loss;
}

}  // namespace epg
