#include "lagr/models.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>

namespace lagr {

std::string to_string(HaeMode mode) {
  switch (mode) {
    case HaeMode::Avg: return "avg";
    case HaeMode::Lin: return "lin";
    case HaeMode::Tensor: return "tensor";
  }
  return "?";
}

ModelConfig ModelConfig::from_name(const std::string& name) {
  ModelConfig c;
  if (name == "gns") {
    c.kind = ModelKind::Gns;
    c.hidden = 128;
  } else if (name == "segnn-avg") {
    c.hae = HaeMode::Avg;
  } else if (name == "segnn-lin") {
    c.hae = HaeMode::Lin;
  } else if (name == "segnn-tensor") {
    c.hae = HaeMode::Tensor;
  } else if (name == "zero") {
    c.kind = ModelKind::Zero;
  } else {
    throw std::invalid_argument("unknown model '" + name + "' (expected gns, segnn-avg, segnn-lin, segnn-tensor, zero)");
  }
  return c;
}

std::string ModelConfig::name() const {
  switch (kind) {
    case ModelKind::Gns: return "gns";
    case ModelKind::Zero: return "zero";
    case ModelKind::Segnn: return "segnn-" + to_string(hae);
  }
  return "?";
}

std::vector<std::size_t> message_order(const EdgeList& edges) {
  std::vector<std::size_t> order(edges.size());
  std::iota(order.begin(), order.end(), 0);
  const Points& d = edges.displacement;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (edges.receivers[a] != edges.receivers[b]) return edges.receivers[a] < edges.receivers[b];
    for (int k = 0; k < 3; ++k) {
      const auto ia = static_cast<Eigen::Index>(a), ib = static_cast<Eigen::Index>(b);
      if (d(ia, k) != d(ib, k)) return d(ia, k) < d(ib, k);
    }
    return false;
  });
  return order;
}

namespace {

template <typename S>
Matrix<S> to_scalar(const Points& p) {
  return p.cast<S>();
}

// Rows [1, v / |v|] for every row of v.
double mean_degree(const GraphSample& sample) {
  const int n = sample.num_nodes();
  return n > 0 ? static_cast<double>(sample.edges.size()) / n : 0.0;
}

template <typename S>
Matrix<S> sh_rows(const Points& v) {
  Matrix<S> out = Matrix<S>::Zero(v.rows(), 4);
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    out(i, 0) = S(1);
    const double n = v.row(i).norm();
    if (n > 0.0) {
      for (int k = 0; k < 3; ++k) out(i, 1 + k) = static_cast<S>(v(i, k) / n);
    }
  }
  return out;
}

struct OrderedEdges {
  IndexList senders, receivers;
  Points displacement;
  std::vector<double> distance;
};

OrderedEdges ordered_edges(const EdgeList& edges) {
  const auto order = message_order(edges);
  OrderedEdges o;
  o.senders.resize(order.size());
  o.receivers.resize(order.size());
  o.displacement.resize(static_cast<Eigen::Index>(order.size()), 3);
  o.distance.resize(order.size());
  for (std::size_t e = 0; e < order.size(); ++e) {
    o.senders[e] = edges.senders[order[e]];
    o.receivers[e] = edges.receivers[order[e]];
    o.displacement.row(static_cast<Eigen::Index>(e)) = edges.displacement.row(static_cast<Eigen::Index>(order[e]));
    o.distance[e] = edges.distance[order[e]];
  }
  return o;
}

}  // namespace

template <typename S>
LearnedSimulator<S>::LearnedSimulator(ModelConfig config) : config_(std::move(config)) {
  if (config_.history < 1) throw std::invalid_argument("model: history must be >= 1");
  if (config_.layers < 1 && config_.kind != ModelKind::Zero) throw std::invalid_argument("model: layers must be >= 1");
  const int H = config_.history;
  if (config_.kind == ModelKind::Gns) {
    const int w = config_.hidden;
    node_encoder_ = {"gns/encoder/node", 3 * H + 3, w, w, true};
    edge_encoder_ = {"gns/encoder/edge", 4, w, w, true};
    for (int l = 0; l < config_.layers; ++l) {
      const std::string p = "gns/processor/layer" + std::to_string(l);
      processor_.push_back({Mlp{p + "/edge", 3 * w, w, w, true}, Mlp{p + "/node", 2 * w, w, w, true}});
    }
    decoder_ = {"gns/decoder", w, w, 3, false};
  } else if (config_.kind == ModelKind::Segnn) {
    const int c = std::max(1, config_.hidden / 2);
    const Irreps attr{1, 1};
    input_irreps_ = {H, H + 1};
    hidden_irreps_ = {c, c};
    const Irreps gated{2 * c, c};
    embed_ = {"segnn/embed", input_irreps_, attr, hidden_irreps_, true, false};
    for (int l = 0; l < config_.layers; ++l) {
      const std::string p = "segnn/layer" + std::to_string(l);
      SegnnLayer layer;
      layer.message0 = {p + "/message0", Irreps{2 * c + 1, 2 * c}, attr, gated, true, false};
      layer.message1 = {p + "/message1", hidden_irreps_, attr, hidden_irreps_, true, false};
      layer.update0 = {p + "/update0", Irreps{2 * c, 2 * c}, attr, gated, true, false};
      layer.update1 = {p + "/update1", hidden_irreps_, attr, hidden_irreps_, true, false};
      segnn_layers_.push_back(layer);
    }
    readout_ = {"segnn/readout", hidden_irreps_, attr, Irreps{0, 1}, false, false};
  }
}

template <typename S>
std::vector<std::string> LearnedSimulator<S>::hae_sites() const {
  std::vector<std::string> sites{"embed"};
  for (int l = 0; l < config_.layers; ++l) sites.push_back("layer" + std::to_string(l));
  return sites;
}

template <typename S>
TensorProductLayer LearnedSimulator<S>::hae_tensor(const std::string& site) const {
  const int H = config_.history;
  // Stacked history (x) most recent attribute -> one scalar, one gate, one vector.
  return {"hae/" + site + "/tp", Irreps{H, H}, Irreps{1, 1}, Irreps{2, 1}, false, false};
}

template <typename S>
void LearnedSimulator<S>::init_mlp(ad::ParamStore<S>& store, std::mt19937_64& rng, const Mlp& mlp) const {
  auto dense = [&](const std::string& name, int in, int out) {
    std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
    Matrix<S> w(in, out);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<S>(nd(rng));
    store.add(name + "/w", std::move(w));
    store.add(name + "/b", Matrix<S>::Zero(1, out));
  };
  dense(mlp.name + "/lin0", mlp.in, mlp.hidden);
  dense(mlp.name + "/lin1", mlp.hidden, mlp.out);
  if (mlp.norm) {
    store.add(mlp.name + "/norm/gain", Matrix<S>::Ones(1, mlp.out));
    store.add(mlp.name + "/norm/offset", Matrix<S>::Zero(1, mlp.out));
  }
}

template <typename S>
ad::Var LearnedSimulator<S>::apply_mlp(ad::Tape<S>& t, const ad::ParamStore<S>& store, const Mlp& mlp,
                                       ad::Var x) const {
  auto dense = [&](const std::string& name, ad::Var in) {
    return ad::add_row(t, ad::matmul(t, in, t.parameter(store, name + "/w")), t.parameter(store, name + "/b"));
  };
  ad::Var h = ad::silu(t, dense(mlp.name + "/lin0", x));
  ad::Var y = dense(mlp.name + "/lin1", h);
  if (mlp.norm) {
    y = ad::layer_norm(t, y, t.parameter(store, mlp.name + "/norm/gain"), t.parameter(store, mlp.name + "/norm/offset"));
  }
  return y;
}

template <typename S>
ad::ParamStore<S> LearnedSimulator<S>::init_params(std::uint64_t seed) const {
  ad::ParamStore<S> store;
  std::mt19937_64 rng(seed);
  if (config_.kind == ModelKind::Gns) {
    init_mlp(store, rng, node_encoder_);
    init_mlp(store, rng, edge_encoder_);
    for (const auto& [e, n] : processor_) {
      init_mlp(store, rng, e);
      init_mlp(store, rng, n);
    }
    init_mlp(store, rng, decoder_);
  } else if (config_.kind == ModelKind::Segnn) {
    const int H = config_.history;
    for (const auto& site : hae_sites()) {
      if (config_.hae == HaeMode::Lin) {
        // Shifted init: N(1/H, 1/sqrt(H)) per history weight.
        std::normal_distribution<double> nd(1.0 / H, 1.0 / std::sqrt(static_cast<double>(H)));
        for (int h = 1; h <= H; ++h) {
          store.add("hae/" + site + "/w_h" + std::to_string(h), Matrix<S>::Constant(1, 1, static_cast<S>(nd(rng))));
        }
      } else if (config_.hae == HaeMode::Tensor) {
        hae_tensor(site).init(store, rng, InitMode::Shifted);
      }
    }
    embed_.init(store, rng);
    for (const auto& layer : segnn_layers_) {
      layer.message0.init(store, rng);
      layer.message1.init(store, rng);
      layer.update0.init(store, rng);
      layer.update1.init(store, rng);
    }
    readout_.init(store, rng);
  }
  return store;
}

template <typename S>
Eigen::Index LearnedSimulator<S>::parameter_count() const {
  return init_params(0).parameter_count();
}

template <typename S>
ad::Var LearnedSimulator<S>::forward(ad::Tape<S>& tape, const ad::ParamStore<S>& params, const GraphSample& sample,
                                     const NormalizationStats& stats) const {
  if (sample.history() != config_.history) {
    throw std::invalid_argument("model: sample history " + std::to_string(sample.history()) +
                                " does not match model history " + std::to_string(config_.history));
  }
  switch (config_.kind) {
    case ModelKind::Gns: return forward_gns(tape, params, sample, stats);
    case ModelKind::Segnn: return forward_segnn(tape, params, sample, stats);
    case ModelKind::Zero: return tape.constant(Matrix<S>::Zero(sample.num_nodes(), 3));
  }
  throw std::logic_error("model: unknown kind");
}

template <typename S>
ad::Var LearnedSimulator<S>::forward_gns(ad::Tape<S>& t, const ad::ParamStore<S>& params, const GraphSample& sample,
                                         const NormalizationStats& stats) const {
  const int n = sample.num_nodes();
  const int H = config_.history;
  Matrix<S> node_in(n, 3 * H + 3);
  for (int h = 0; h < H; ++h) node_in.middleCols(3 * h, 3) = to_scalar<S>(stats.normalize_velocity(sample.velocity_history[h]));
  node_in.rightCols(3) = to_scalar<S>(stats.normalize_force(sample.force));

  const OrderedEdges edges = ordered_edges(sample.edges);
  const auto ne = static_cast<Eigen::Index>(edges.senders.size());
  Matrix<S> edge_in(ne, 4);
  for (Eigen::Index e = 0; e < ne; ++e) {
    for (int k = 0; k < 3; ++k) edge_in(e, k) = static_cast<S>(edges.displacement(e, k) / sample.radius);
    edge_in(e, 3) = static_cast<S>(edges.distance[static_cast<std::size_t>(e)] / sample.radius);
  }

  ad::Var node = apply_mlp(t, params, node_encoder_, t.constant(std::move(node_in)));
  ad::Var edge = apply_mlp(t, params, edge_encoder_, t.constant(std::move(edge_in)));
  for (const auto& [edge_mlp, node_mlp] : processor_) {
    const ad::Var e_in = ad::concat_cols(
        t, {edge, ad::gather_rows(t, node, edges.receivers), ad::gather_rows(t, node, edges.senders)});
    const ad::Var e_new = apply_mlp(t, params, edge_mlp, e_in);
    edge = ad::add(t, edge, e_new);
    const ad::Var agg = ad::scatter_add_rows(t, e_new, edges.receivers, n);
    const ad::Var n_new = apply_mlp(t, params, node_mlp, ad::concat_cols(t, {node, agg}));
    node = ad::add(t, node, n_new);
  }
  return apply_mlp(t, params, decoder_, node);
}

template <typename S>
AttributeVars<S> LearnedSimulator<S>::attributes(ad::Tape<S>& t, const ad::ParamStore<S>& params,
                                                 const GraphSample& sample, const NormalizationStats& stats,
                                                 const std::string& site) const {
  if (sample.history() != config_.history) throw std::invalid_argument("model: sample history does not match model");
  const int n = sample.num_nodes();
  const int H = config_.history;
  const OrderedEdges edges = ordered_edges(sample.edges);

  Matrix<S> edge_attr = sh_rows<S>(edges.displacement);
  Matrix<S> neighbour_sum = Matrix<S>::Zero(n, 4);
  for (std::size_t e = 0; e < edges.receivers.size(); ++e) {
    neighbour_sum.row(edges.receivers[e]) += edge_attr.row(static_cast<Eigen::Index>(e));
  }
  if (config_.force_in_attributes) neighbour_sum += sh_rows<S>(sample.force);

  // The scalar part of a_i^(h) is 1 + deg(i); dividing by 1 + mean degree
  // keeps conditioned products at unit scale.
  const S inv_scale = static_cast<S>(1.0 / (1.0 + mean_degree(sample)));

  // Canonical {1, 1} columns: [scalar, x, y, z] coincide with sh_rows.
  std::vector<ad::Var> history;
  for (int h = 0; h < H; ++h) {
    history.push_back(
        t.constant(inv_scale * (sh_rows<S>(stats.normalize_velocity(sample.velocity_history[h])) + neighbour_sum)));
  }

  AttributeVars<S> out;
  out.edge = t.constant(std::move(edge_attr));
  switch (config_.hae) {
    case HaeMode::Avg: {
      Matrix<S> mean = Matrix<S>::Zero(n, 4);
      for (ad::Var h : history) mean += t.value(h);
      out.node = t.constant(mean / static_cast<S>(H));
      break;
    }
    case HaeMode::Lin: {
      std::vector<ad::Var> w;
      for (int h = 1; h <= H; ++h) w.push_back(t.parameter(params, "hae/" + site + "/w_h" + std::to_string(h)));
      out.node = ad::weighted_sum(t, history, H == 1 ? w[0] : ad::concat_cols(t, w));
      break;
    }
    case HaeMode::Tensor: {
      std::vector<std::pair<ad::Var, Irreps>> items;
      for (ad::Var h : history) items.emplace_back(h, Irreps{1, 1});
      const auto [stacked, stacked_irreps] = direct_sum(t, items);
      const TensorProductLayer tp = hae_tensor(site);
      out.node = gate(t, tp.apply(t, params, stacked, history.back()), tp.out);
      break;
    }
  }
  return out;
}

template <typename S>
ad::Var LearnedSimulator<S>::forward_segnn(ad::Tape<S>& t, const ad::ParamStore<S>& params, const GraphSample& sample,
                                           const NormalizationStats& stats) const {
  const int n = sample.num_nodes();
  const int H = config_.history;
  const OrderedEdges edges = ordered_edges(sample.edges);
  const auto ne = static_cast<Eigen::Index>(edges.senders.size());

  // Node input: |v_h| scalars; v_1..v_H and F as vectors.
  Matrix<S> x(n, input_irreps_.dim());
  std::vector<Points> vecs;
  for (int h = 0; h < H; ++h) vecs.push_back(stats.normalize_velocity(sample.velocity_history[h]));
  vecs.push_back(stats.normalize_force(sample.force));
  for (int h = 0; h < H; ++h) x.col(h) = vecs[h].rowwise().norm().cast<S>();
  for (int c = 0; c < H + 1; ++c) {
    for (int k = 0; k < 3; ++k) x.col(input_irreps_.vector_offset(k) + c) = vecs[c].col(k).cast<S>();
  }

  Matrix<S> dist2(ne, 1);
  for (Eigen::Index e = 0; e < ne; ++e) {
    const double r = edges.distance[static_cast<std::size_t>(e)] / sample.radius;
    dist2(e, 0) = static_cast<S>(r * r);
  }
  const ad::Var d2 = t.constant(std::move(dist2));

  const S agg_scale = static_cast<S>(1.0 / std::max(1.0, mean_degree(sample)));
  const AttributeVars<S> embed_attr = attributes(t, params, sample, stats, "embed");
  ad::Var f = embed_.apply(t, params, t.constant(std::move(x)), embed_attr.node);
  const Irreps hid = hidden_irreps_;
  const Irreps gated{hid.scalars + hid.vectors, hid.vectors};

  for (std::size_t l = 0; l < segnn_layers_.size(); ++l) {
    const SegnnLayer& layer = segnn_layers_[l];
    const AttributeVars<S> attr = attributes(t, params, sample, stats, "layer" + std::to_string(l));

    const auto [msg_in, msg_irreps] = direct_sum(
        t, {{ad::gather_rows(t, f, edges.receivers), hid}, {ad::gather_rows(t, f, edges.senders), hid}, {d2, Irreps{1, 0}}});
    ad::Var m = gate(t, layer.message0.apply(t, params, msg_in, attr.edge), gated);
    m = layer.message1.apply(t, params, m, attr.edge);
    const ad::Var agg = ad::scale(t, ad::scatter_add_rows(t, m, edges.receivers, n), agg_scale);

    const auto [upd_in, upd_irreps] = direct_sum(t, {{f, hid}, {agg, hid}});
    ad::Var u = gate(t, layer.update0.apply(t, params, upd_in, attr.node), gated);
    u = layer.update1.apply(t, params, u, attr.node);
    f = ad::add(t, f, u);
  }
  return readout_.apply(t, params, f, embed_attr.node);
}

template <typename S>
Attributes<S> hae_attributes(const LearnedSimulator<S>& model, const ad::ParamStore<S>& params,
                             const GraphSample& sample, const NormalizationStats& stats, const std::string& site) {
  ad::Tape<S> t;
  const AttributeVars<S> v = model.attributes(t, params, sample, stats, site);
  return {t.value(v.edge), t.value(v.node)};
}

template class LearnedSimulator<float>;
template class LearnedSimulator<double>;
template Attributes<float> hae_attributes(const LearnedSimulator<float>&, const ad::ParamStore<float>&,
                                          const GraphSample&, const NormalizationStats&, const std::string&);
template Attributes<double> hae_attributes(const LearnedSimulator<double>&, const ad::ParamStore<double>&,
                                           const GraphSample&, const NormalizationStats&, const std::string&);

}  // namespace lagr
