#pragma once

// Operation-level reverse-mode differentiation over dense Eigen blocks.
//
// A Tape records each primitive with its value and a closure that maps the
// output adjoint to input adjoints. Parameters enter the tape by name from a
// ParamStore, so gradients come back in a store with identical names and
// shapes. Parameters never touched by the recorded graph get exact zeros.

#include "lagr/types.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lagr::ad {

/// Named, ordered collection of dense parameter blocks.
template <typename Scalar>
class ParamStore {
 public:
  using Mat = Matrix<Scalar>;

  Mat& add(const std::string& name, Mat value) {
    if (index_.count(name)) throw std::invalid_argument("param store: duplicate name " + name);
    index_[name] = names_.size();
    names_.push_back(name);
    values_.push_back(std::move(value));
    return values_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Mat& value(std::size_t i) { return values_[i]; }
  const Mat& value(std::size_t i) const { return values_[i]; }

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("param store: no parameter named " + name);
    return it->second;
  }
  Mat& at(const std::string& name) { return values_[index_of(name)]; }
  const Mat& at(const std::string& name) const { return values_[index_of(name)]; }

  Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  ParamStore zeros_like() const {
    ParamStore out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], Mat::Zero(values_[i].rows(), values_[i].cols()));
    return out;
  }

  template <typename Other>
  ParamStore<Other> cast() const {
    ParamStore<Other> out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], values_[i].template cast<Other>());
    return out;
  }

  void axpy(Scalar alpha, const ParamStore& other) {
    for (std::size_t i = 0; i < size(); ++i) values_[i] += alpha * other.values_[i];
  }

  bool same_layout(const ParamStore& other) const {
    if (size() != other.size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      if (names_[i] != other.names_[i] || values_[i].rows() != other.values_[i].rows() ||
          values_[i].cols() != other.values_[i].cols()) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Mat> values_;
  std::map<std::string, std::size_t> index_;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using Backward = std::function<void(Tape&, const Mat&)>;

  Var constant(Mat value) { return push(std::move(value), false, "const", {}); }

  /// Leaf bound to a named parameter; repeated lookups return the same node.
  Var parameter(const ParamStore<Scalar>& store, const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    Var v = push(store.at(name), true, "param", {});
    bound_[name] = v;
    return v;
  }

  /// Records an op. `fn` is only invoked if some input requires gradients.
  Var record(Mat value, std::initializer_list<Var> inputs, const char* op, Backward fn) {
    return record(std::move(value), std::vector<Var>(inputs), op, std::move(fn));
  }
  Var record(Mat value, const std::vector<Var>& inputs, const char* op, Backward fn) {
    bool needs = false;
    for (Var in : inputs) needs = needs || nodes_.at(in.id).needs_grad;
    Var v = push(std::move(value), needs, op, needs ? std::move(fn) : Backward{});
    return v;
  }

  const Mat& value(Var v) const { return nodes_.at(v.id).value; }
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Adjoint accumulator of a node; allocated as zeros on first use.
  Mat& grad(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.size() == 0 && n.value.size() != 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// Test fixture: scales the adjoint flowing into every op named `op`.
  void inject_fault(std::string op, Scalar factor = Scalar(1.01)) {
    fault_op_ = std::move(op);
    fault_factor_ = factor;
  }

  /// Reverse sweep from a 1x1 node.
  void backward(Var loss) {
    const Node& l = nodes_.at(loss.id);
    if (l.value.rows() != 1 || l.value.cols() != 1) throw std::invalid_argument("tape: loss must be 1x1");
    grad(loss).setOnes();
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.needs_grad || !n.backward || n.grad.size() == 0) continue;
      if (!fault_op_.empty() && fault_op_ == n.op) {
        const Mat scaled = n.grad * fault_factor_;
        n.backward(*this, scaled);
      } else {
        n.backward(*this, n.grad);
      }
    }
  }

  /// Gradients aligned with `params`; untouched parameters are zero.
  ParamStore<Scalar> gradients(const ParamStore<Scalar>& params) const {
    ParamStore<Scalar> out = params.zeros_like();
    for (const auto& [name, v] : bound_) {
      if (!params.contains(name)) continue;
      const Node& n = nodes_[v.id];
      if (n.grad.size() != 0) out.at(name) = n.grad;
    }
    return out;
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    const char* op = "";
    Backward backward;
  };

  Var push(Mat value, bool needs, const char* op, Backward fn) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs;
    n.op = op;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  std::map<std::string, Var> bound_;
  std::string fault_op_;
  Scalar fault_factor_ = Scalar(1);
};

// ---------------------------------------------------------------------------
// Primitives

template <typename S>
Var matmul(Tape<S>& t, Var a, Var b) {
  return t.record(t.value(a) * t.value(b), {a, b}, "matmul", [a, b](Tape<S>& t, const Matrix<S>& g) {
    if (t.needs_grad(a)) t.grad(a).noalias() += g * t.value(b).transpose();
    if (t.needs_grad(b)) t.grad(b).noalias() += t.value(a).transpose() * g;
  });
}

template <typename S>
Var add(Tape<S>& t, Var a, Var b) {
  if (t.value(a).rows() != t.value(b).rows() || t.value(a).cols() != t.value(b).cols()) {
    throw std::invalid_argument("add: shape mismatch");
  }
  return t.record(t.value(a) + t.value(b), {a, b}, "add", [a, b](Tape<S>& t, const Matrix<S>& g) {
    if (t.needs_grad(a)) t.grad(a) += g;
    if (t.needs_grad(b)) t.grad(b) += g;
  });
}

template <typename S>
Var sub(Tape<S>& t, Var a, Var b) {
  return t.record(t.value(a) - t.value(b), {a, b}, "sub", [a, b](Tape<S>& t, const Matrix<S>& g) {
    if (t.needs_grad(a)) t.grad(a) += g;
    if (t.needs_grad(b)) t.grad(b) -= g;
  });
}

template <typename S>
Var scale(Tape<S>& t, Var a, S alpha) {
  return t.record(alpha * t.value(a), {a}, "scale",
                  [a, alpha](Tape<S>& t, const Matrix<S>& g) { t.grad(a) += alpha * g; });
}

/// a + bias, with a 1 x m bias broadcast over rows.
template <typename S>
Var add_row(Tape<S>& t, Var a, Var bias) {
  Matrix<S> v = t.value(a);
  v.rowwise() += t.value(bias).row(0);
  return t.record(std::move(v), {a, bias}, "add_row", [a, bias](Tape<S>& t, const Matrix<S>& g) {
    if (t.needs_grad(a)) t.grad(a) += g;
    if (t.needs_grad(bias)) t.grad(bias) += g.colwise().sum();
  });
}

template <typename S>
Var hadamard(Tape<S>& t, Var a, Var b) {
  return t.record(t.value(a).cwiseProduct(t.value(b)), {a, b}, "hadamard", [a, b](Tape<S>& t, const Matrix<S>& g) {
    if (t.needs_grad(a)) t.grad(a) += g.cwiseProduct(t.value(b));
    if (t.needs_grad(b)) t.grad(b) += g.cwiseProduct(t.value(a));
  });
}

/// Scales row n of `a` by c(n, 0).
template <typename S>
Var scale_rows(Tape<S>& t, Var a, Var c) {
  Matrix<S> v = t.value(a).array().colwise() * t.value(c).col(0).array();
  return t.record(std::move(v), {a, c}, "scale_rows", [a, c](Tape<S>& t, const Matrix<S>& g) {
    if (t.needs_grad(a)) t.grad(a).array() += g.array().colwise() * t.value(c).col(0).array();
    if (t.needs_grad(c)) t.grad(c).col(0) += g.cwiseProduct(t.value(a)).rowwise().sum();
  });
}

template <typename S>
Var sigmoid(Tape<S>& t, Var a) {
  Matrix<S> s = t.value(a).unaryExpr([](S x) { return S(1) / (S(1) + std::exp(-x)); });
  Var out = t.record(s, {a}, "sigmoid", [a, s](Tape<S>& t, const Matrix<S>& g) {
    t.grad(a).array() += g.array() * s.array() * (S(1) - s.array());
  });
  return out;
}

/// x * sigmoid(x)
template <typename S>
Var silu(Tape<S>& t, Var a) {
  const Matrix<S>& x = t.value(a);
  Matrix<S> s = x.unaryExpr([](S v) { return S(1) / (S(1) + std::exp(-v)); });
  Matrix<S> y = x.cwiseProduct(s);
  return t.record(std::move(y), {a}, "silu", [a, s](Tape<S>& t, const Matrix<S>& g) {
    const auto& x = t.value(a);
    t.grad(a).array() += g.array() * s.array() * (S(1) + x.array() * (S(1) - s.array()));
  });
}

/// Row-wise layer normalisation with learned gain and offset (1 x m each).
template <typename S>
Var layer_norm(Tape<S>& t, Var a, Var gain, Var offset, S eps = S(1e-5)) {
  const Matrix<S>& x = t.value(a);
  const Eigen::Index m = x.cols();
  Vector<S> inv_std(x.rows());
  Matrix<S> xhat(x.rows(), m);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const S mean = x.row(r).mean();
    const S var = (x.row(r).array() - mean).square().mean();
    inv_std[r] = S(1) / std::sqrt(var + eps);
    xhat.row(r) = (x.row(r).array() - mean) * inv_std[r];
  }
  Matrix<S> y = xhat.array().rowwise() * t.value(gain).row(0).array();
  y.rowwise() += t.value(offset).row(0);
  return t.record(std::move(y), {a, gain, offset}, "layer_norm",
                  [a, gain, offset, xhat, inv_std](Tape<S>& t, const Matrix<S>& g) {
                    if (t.needs_grad(gain)) t.grad(gain) += g.cwiseProduct(xhat).colwise().sum();
                    if (t.needs_grad(offset)) t.grad(offset) += g.colwise().sum();
                    if (!t.needs_grad(a)) return;
                    const Matrix<S> dxhat = g.array().rowwise() * t.value(gain).row(0).array();
                    Matrix<S>& ga = t.grad(a);
                    for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
                      const S m1 = dxhat.row(r).mean();
                      const S m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
                      ga.row(r).array() +=
                          inv_std[r] * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                    }
                  });
}

template <typename S>
Var concat_cols(Tape<S>& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const Eigen::Index rows = t.value(parts[0]).rows();
  Eigen::Index cols = 0;
  for (Var p : parts) {
    if (t.value(p).rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += t.value(p).cols();
  }
  Matrix<S> v(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index c = 0;
  for (Var p : parts) {
    offsets.push_back(c);
    v.middleCols(c, t.value(p).cols()) = t.value(p);
    c += t.value(p).cols();
  }
  return t.record(std::move(v), parts, "concat_cols", [parts, offsets](Tape<S>& t, const Matrix<S>& g) {
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (t.needs_grad(parts[k])) t.grad(parts[k]) += g.middleCols(offsets[k], t.value(parts[k]).cols());
    }
  });
}

template <typename S>
Var slice_cols(Tape<S>& t, Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > t.value(a).cols()) throw std::out_of_range("slice_cols");
  return t.record(t.value(a).middleCols(start, count), {a}, "slice_cols",
                  [a, start, count](Tape<S>& t, const Matrix<S>& g) { t.grad(a).middleCols(start, count) += g; });
}

template <typename S>
Var gather_rows(Tape<S>& t, Var a, const IndexList& index) {
  const Matrix<S>& x = t.value(a);
  Matrix<S> v(static_cast<Eigen::Index>(index.size()), x.cols());
  for (std::size_t e = 0; e < index.size(); ++e) v.row(static_cast<Eigen::Index>(e)) = x.row(index[e]);
  return t.record(std::move(v), {a}, "gather_rows", [a, index](Tape<S>& t, const Matrix<S>& g) {
    Matrix<S>& ga = t.grad(a);
    for (std::size_t e = 0; e < index.size(); ++e) ga.row(index[e]) += g.row(static_cast<Eigen::Index>(e));
  });
}

/// out.row(index[e]) += a.row(e), accumulated in edge order.
template <typename S>
Var scatter_add_rows(Tape<S>& t, Var a, const IndexList& index, Eigen::Index rows) {
  const Matrix<S>& x = t.value(a);
  Matrix<S> v = Matrix<S>::Zero(rows, x.cols());
  for (std::size_t e = 0; e < index.size(); ++e) v.row(index[e]) += x.row(static_cast<Eigen::Index>(e));
  return t.record(std::move(v), {a}, "scatter_add", [a, index](Tape<S>& t, const Matrix<S>& g) {
    Matrix<S>& ga = t.grad(a);
    for (std::size_t e = 0; e < index.size(); ++e) ga.row(static_cast<Eigen::Index>(e)) += g.row(index[e]);
  });
}

/// sum_h w(0, h) * items[h]
template <typename S>
Var weighted_sum(Tape<S>& t, const std::vector<Var>& items, Var w) {
  const Matrix<S>& wv = t.value(w);
  if (wv.size() != static_cast<Eigen::Index>(items.size())) throw std::invalid_argument("weighted_sum: size");
  Matrix<S> v = Matrix<S>::Zero(t.value(items[0]).rows(), t.value(items[0]).cols());
  for (std::size_t h = 0; h < items.size(); ++h) v += wv(static_cast<Eigen::Index>(h)) * t.value(items[h]);
  std::vector<Var> inputs = items;
  inputs.push_back(w);
  return t.record(std::move(v), inputs, "weighted_sum", [items, w](Tape<S>& t, const Matrix<S>& g) {
    for (std::size_t h = 0; h < items.size(); ++h) {
      const auto hh = static_cast<Eigen::Index>(h);
      if (t.needs_grad(items[h])) t.grad(items[h]) += t.value(w)(hh) * g;
      if (t.needs_grad(w)) t.grad(w)(hh) += g.cwiseProduct(t.value(items[h])).sum();
    }
  });
}

/// Mean of squared differences to a constant target, as a 1x1 node.
template <typename S>
Var mse(Tape<S>& t, Var a, const Matrix<S>& target) {
  const Matrix<S>& x = t.value(a);
  if (x.rows() != target.rows() || x.cols() != target.cols()) throw std::invalid_argument("mse: shape mismatch");
  Matrix<S> diff = x - target;
  const S n = static_cast<S>(diff.size());
  Matrix<S> v(1, 1);
  v(0, 0) = diff.squaredNorm() / n;
  return t.record(std::move(v), {a}, "mse", [a, diff, n](Tape<S>& t, const Matrix<S>& g) {
    t.grad(a) += (S(2) * g(0, 0) / n) * diff;
  });
}

template <typename S>
Var sum_all(Tape<S>& t, Var a) {
  Matrix<S> v(1, 1);
  v(0, 0) = t.value(a).sum();
  return t.record(std::move(v), {a}, "sum_all",
                  [a](Tape<S>& t, const Matrix<S>& g) { t.grad(a).array() += g(0, 0); });
}

}  // namespace lagr::ad
