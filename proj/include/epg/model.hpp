#pragma once

// The ego-planning guided multi-graph network: coordinate embedding, one
// branch of graph-convolution blocks per enabled interaction graph, 1x1
// fusion of the branch stack, plan encoding fused back into every agent and
// frame, and category-specific GRU encoder-decoders that roll out residual
// displacements from each agent's last observed position.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "epg/multigraph.hpp"
#include "epg/rng.hpp"
#include "epg/scene.hpp"
#include "epg/tensor.hpp"

namespace epg {

struct ModelConfig {
  std::size_t channels = 64;
  std::size_t blocks_per_branch = 2;
  std::size_t obs_points = 6;
  std::size_t pred_frames = 6;
  std::vector<Category> categories_decoded{Category::Vehicle, Category::Pedestrian,
                                           Category::Bicyclist};
  std::array<bool, kGraphKinds> enabled_graphs{true, true, true, true};
  bool planning_fusion_enabled = true;
  bool category_specific_decoders = true;
  double distance_threshold = 10.0;
  double beta_degrees = 20.0;

  bool graph_enabled(GraphKind g) const { return enabled_graphs[static_cast<std::size_t>(g)]; }
  std::size_t enabled_graph_count() const;
  void validate() const;

  /// Cumulative ablation rows 1..6: distance, +visibility, +planning,
  /// +category, +plan fusion, +category-specific decoders.
  static ModelConfig ablation_row(int row, const ModelConfig& base);
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Ordered, named parameter registry.
class ParamStore {
 public:
  /// Registers a new tensor initialized uniformly in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  Tensor add(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  std::vector<std::string> names() const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<Tensor> tensors_;
  std::map<std::string, std::size_t> index_;
};

/// Binary parameter container: magic "EPGPARAM", u32 version, u64 count, then
/// per tensor: u32 name length, name bytes, u32 rank, u64 dims, raw
/// little-endian doubles. Loading checks names and shapes in order.
void save_params(const ParamStore& params, std::ostream& out);
void load_params(ParamStore& params, std::istream& in);

struct GraphBlockParams {
  Tensor spatial;   // [C_out, C_in]: y = norm(E) Z W applied as a 1x1 channel map
  Tensor temporal;  // [C, C, 3]
};

struct DecoderParams {
  GruParams encoder;  // input C, hidden C
  GruParams decoder;  // input 2 (position), hidden C
  Tensor out_weight;  // [2, C]
  Tensor out_bias;    // [2]
};

/// Predicted positions for the agents the model decodes, in sample order.
struct Forecast {
  std::vector<std::size_t> agents;
  Tensor positions;  // [K, pred_frames, 2], undefined when K == 0

  std::size_t size() const { return agents.size(); }
  Vec2 at(std::size_t k, std::size_t t) const;
};

struct Loss {
  Tensor value;
  bool has_targets = false;
};

class EpgMgcn {
 public:
  EpgMgcn(ModelConfig config, std::uint64_t seed);
  // Parameters are shared handles; a copy would alias them.
  EpgMgcn(const EpgMgcn&) = delete;
  EpgMgcn& operator=(const EpgMgcn&) = delete;
  EpgMgcn(EpgMgcn&&) = default;
  EpgMgcn& operator=(EpgMgcn&&) = default;

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Normalized adjacency per enabled graph, built from an ego-centered sample.
  std::array<std::optional<Matrix>, kGraphKinds> prepare_graphs(const Sample& s) const;

  Tensor embed_inputs(const Sample& s) const;
  Tensor graph_conv_block(const Tensor& z, const Matrix& norm_adj,
                          const GraphBlockParams& block) const;
  Tensor run_branch(GraphKind g, const Tensor& z, const Matrix& norm_adj) const;
  Tensor fuse_graph_features(const std::vector<Tensor>& branches) const;
  Tensor encode_plan(const std::vector<Vec2>& plan) const;
  Tensor fuse_plan_features(const Tensor& graphs, const Tensor& plan_encoding) const;
  Forecast cs_gru_decode(const Tensor& fusion, const Sample& s) const;

  Forecast forward(const Sample& s) const;
  Forecast forward(const Sample& s,
                   const std::array<std::optional<Matrix>, kGraphKinds>& graphs) const;

  const GraphBlockParams& block(GraphKind g, std::size_t k) const;
  const DecoderParams& decoder_for(Category c) const;
  bool decodes(Category c) const;

 private:
  ModelConfig config_;
  ParamStore params_;
  Tensor embed_w_, embed_b_;
  std::array<std::vector<GraphBlockParams>, kGraphKinds> branches_;
  Tensor graph_fuse_w_, graph_fuse_b_;
  Tensor plan_embed_w_, plan_embed_b_;
  GruParams plan_gru_;
  Tensor plan_fuse_w_, plan_fuse_b_;
  std::map<std::string, DecoderParams> decoders_;  // by category name, or "shared"
};

/// Mean squared Euclidean error over supervised agents and unmasked future
/// frames. The ego never contributes.
Loss prediction_loss(const Forecast& f, const Sample& s);

/// Zero-params helper for tests: sets every parameter to `v`.
void fill_params(ParamStore& params, double v);

}  // namespace epg
