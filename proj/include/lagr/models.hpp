#pragma once

// Learned simulators mapping a GraphSample to normalised per-particle
// accelerations.
//
// GNS: encoder (dense nets on node and edge features) -> residual
// message-passing processor -> dense decoder.
//
// SEGNN: steerable embedding -> residual steerable message passing, with
// messages conditioned on edge attributes a_ij = Y(p_i - p_j) and updates on
// node attributes a_i produced by a historical attribute embedding (HAE)
// -> linear steerable readout of one vector channel.

#include "lagr/autodiff.hpp"
#include "lagr/graph.hpp"
#include "lagr/steerable.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace lagr {

enum class ModelKind { Gns, Segnn, Zero };
enum class HaeMode { Avg, Lin, Tensor };

std::string to_string(HaeMode mode);

struct ModelConfig {
  ModelKind kind = ModelKind::Segnn;
  HaeMode hae = HaeMode::Avg;
  int layers = 10;
  int hidden = 64;  // GNS latent width; SEGNN total channels, split evenly between l = 0 and l = 1
  int history = 5;
  bool force_in_attributes = false;

  /// "gns", "segnn-avg", "segnn-lin", "segnn-tensor" or "zero".
  static ModelConfig from_name(const std::string& name);
  std::string name() const;
};

/// Steerable node and edge attributes, both with irreps {1, 1}.
template <typename S>
struct AttributeVars {
  ad::Var edge;  // E x 4, in message order
  ad::Var node;  // N x 4
};

template <typename S>
struct Attributes {
  Matrix<S> edge;
  Matrix<S> node;
};

/// Edge processing order: by receiver, then by displacement. Depends only on
/// geometry, so relabelling particles permutes the result exactly.
std::vector<std::size_t> message_order(const EdgeList& edges);

template <typename S>
class LearnedSimulator {
 public:
  explicit LearnedSimulator(ModelConfig config);

  const ModelConfig& config() const { return config_; }

  ad::ParamStore<S> init_params(std::uint64_t seed) const;
  Eigen::Index parameter_count() const;

  /// Normalised accelerations, N x 3.
  ad::Var forward(ad::Tape<S>& tape, const ad::ParamStore<S>& params, const GraphSample& sample,
                  const NormalizationStats& stats) const;

  /// SEGNN attributes at one HAE site ("embed" or "layerN").
  AttributeVars<S> attributes(ad::Tape<S>& tape, const ad::ParamStore<S>& params, const GraphSample& sample,
                              const NormalizationStats& stats, const std::string& site) const;

  /// HAE sites of the SEGNN.
  std::vector<std::string> hae_sites() const;

 private:
  struct Dense {
    std::string name;
    int in = 0, out = 0;
  };
  struct Mlp {
    std::string name;
    int in = 0, hidden = 0, out = 0;
    bool norm = true;
  };

  void init_mlp(ad::ParamStore<S>& store, std::mt19937_64& rng, const Mlp& mlp) const;
  ad::Var apply_mlp(ad::Tape<S>& t, const ad::ParamStore<S>& store, const Mlp& mlp, ad::Var x) const;

  ad::Var forward_gns(ad::Tape<S>& t, const ad::ParamStore<S>& params, const GraphSample& sample,
                      const NormalizationStats& stats) const;
  ad::Var forward_segnn(ad::Tape<S>& t, const ad::ParamStore<S>& params, const GraphSample& sample,
                        const NormalizationStats& stats) const;

  struct SegnnLayer {
    TensorProductLayer message0, message1, update0, update1;
  };

  ModelConfig config_;
  // GNS
  Mlp node_encoder_, edge_encoder_, decoder_;
  std::vector<std::pair<Mlp, Mlp>> processor_;  // (edge, node) per layer
  // SEGNN
  Irreps input_irreps_, hidden_irreps_;
  TensorProductLayer embed_, readout_;
  std::vector<SegnnLayer> segnn_layers_;
  TensorProductLayer hae_tensor(const std::string& site) const;
};

/// Attributes of one site evaluated outside any training tape.
template <typename S>
Attributes<S> hae_attributes(const LearnedSimulator<S>& model, const ad::ParamStore<S>& params,
                             const GraphSample& sample, const NormalizationStats& stats, const std::string& site);

extern template class LearnedSimulator<float>;
extern template class LearnedSimulator<double>;

}  // namespace lagr
