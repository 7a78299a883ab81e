#pragma once

// O(3)-steerable features of degree l <= 1.
//
// Batched layout ("Irreps"): a feature matrix has one row per node or edge and
// columns [scalars | x of every vector channel | y ... | z ...]. The general
// IrrepsLayout used by the single-tensor API is an ordered list of (l, mult)
// blocks; an l = 1 block of multiplicity m stores its 3m coefficients the
// same component-major way (all x, then all y, then all z).
//
// Clebsch-Gordan paths and their constants (component normalisation, i.e. the
// real-basis CG coefficients of SO(3)):
//   0 x 0 -> 0 : s * t
//   0 x 1 -> 1 : s * w
//   1 x 0 -> 1 : u * t
//   1 x 1 -> 0 : (u . w) / sqrt(3)
//   1 x 1 -> 1 : (u x w) / sqrt(2)
// With proper vectors the last path yields a pseudovector, so it commutes
// with rotations but flips sign under reflections. Models leave it disabled
// to stay O(3)-equivariant.
//
// Gate convention: a gated layer's pre-activation carries s + v scalars and v
// vectors; the trailing v scalars are gates, consumed by sigmoid(gate) * vec.
// The remaining scalars pass through SiLU.

#include "lagr/autodiff.hpp"
#include "lagr/types.hpp"

#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lagr {

inline constexpr double kDotPathConstant = 0.57735026918962576451;   // 1 / sqrt(3)
inline constexpr double kCrossPathConstant = 0.70710678118654752440; // 1 / sqrt(2)

/// Canonical batched layout: `scalars` l = 0 channels then `vectors` l = 1 channels.
struct Irreps {
  int scalars = 0;
  int vectors = 0;

  int dim() const { return scalars + 3 * vectors; }
  Eigen::Index vector_offset(int component) const { return scalars + static_cast<Eigen::Index>(component) * vectors; }
  bool operator==(const Irreps&) const = default;
};

/// Ordered list of (degree, multiplicity) blocks, degrees in {0, 1}.
class IrrepsLayout {
 public:
  IrrepsLayout() = default;
  IrrepsLayout(std::initializer_list<std::pair<int, int>> blocks);
  explicit IrrepsLayout(std::vector<std::pair<int, int>> blocks);
  static IrrepsLayout canonical(const Irreps& irreps);

  const std::vector<std::pair<int, int>>& blocks() const { return blocks_; }
  int dim() const;
  Irreps irreps() const;

  /// order[c] = position in this layout of canonical coefficient c.
  std::vector<int> canonical_order() const;

  bool operator==(const IrrepsLayout&) const = default;

 private:
  std::vector<std::pair<int, int>> blocks_;
};

template <typename Scalar>
struct SteerableTensor {
  IrrepsLayout layout;
  Vector<Scalar> coeffs;

  void check() const {
    if (coeffs.size() != layout.dim()) {
      throw std::invalid_argument("steerable tensor: " + std::to_string(coeffs.size()) +
                                  " coefficients for layout of dimension " + std::to_string(layout.dim()));
    }
  }

  /// Coefficients as a 1 x dim row in canonical order.
  Matrix<Scalar> canonical_row() const {
    check();
    const auto order = layout.canonical_order();
    Matrix<Scalar> row(1, layout.dim());
    for (std::size_t c = 0; c < order.size(); ++c) row(0, static_cast<Eigen::Index>(c)) = coeffs[order[c]];
    return row;
  }

  static SteerableTensor from_canonical(const Irreps& irreps, const Matrix<Scalar>& row) {
    return {IrrepsLayout::canonical(irreps), row.row(0).transpose()};
  }
};

/// Weights of one parametrised CG product, one matrix per path, each of shape
/// (mult_in * mult_attr) x mult_out with row index u * mult_attr + v.
template <typename Scalar>
struct CGWeights {
  Matrix<Scalar> w00;   // 0 x 0 -> 0
  Matrix<Scalar> w110;  // 1 x 1 -> 0
  Matrix<Scalar> w01;   // 0 x 1 -> 1  (scalar input, vector attribute)
  Matrix<Scalar> w10;   // 1 x 0 -> 1  (vector input, scalar attribute)
  Matrix<Scalar> w111;  // 1 x 1 -> 1  (may be empty)

  static CGWeights zeros(const Irreps& in, const Irreps& attr, const Irreps& out, bool cross = true) {
    CGWeights w;
    w.w00 = Matrix<Scalar>::Zero(in.scalars * attr.scalars, out.scalars);
    w.w110 = Matrix<Scalar>::Zero(in.vectors * attr.vectors, out.scalars);
    w.w01 = Matrix<Scalar>::Zero(in.scalars * attr.vectors, out.vectors);
    w.w10 = Matrix<Scalar>::Zero(in.vectors * attr.scalars, out.vectors);
    if (cross) w.w111 = Matrix<Scalar>::Zero(in.vectors * attr.vectors, out.vectors);
    return w;
  }

  Irreps output() const {
    return {static_cast<int>(std::max(w00.cols(), w110.cols())),
            static_cast<int>(std::max({w01.cols(), w10.cols(), w111.cols()}))};
  }
};

namespace steerable_detail {

template <typename S>
Matrix<S> outer(const Matrix<S>& x, const Matrix<S>& y) {
  const Eigen::Index p = x.cols(), q = y.cols();
  if (q == 1) return x.array().colwise() * y.col(0).array();
  Matrix<S> out(x.rows(), p * q);
  for (Eigen::Index u = 0; u < p; ++u) {
    for (Eigen::Index v = 0; v < q; ++v) out.col(u * q + v) = x.col(u).cwiseProduct(y.col(v));
  }
  return out;
}

// d/dx of sum(g .* outer(x, y))
template <typename S>
Matrix<S> contract_left(const Matrix<S>& g, const Matrix<S>& y, Eigen::Index p) {
  const Eigen::Index q = y.cols();
  if (q == 1) return g.array().colwise() * y.col(0).array();
  Matrix<S> dx = Matrix<S>::Zero(g.rows(), p);
  for (Eigen::Index u = 0; u < p; ++u) {
    for (Eigen::Index v = 0; v < q; ++v) dx.col(u) += g.col(u * q + v).cwiseProduct(y.col(v));
  }
  return dx;
}

// d/dy of sum(g .* outer(x, y))
template <typename S>
Matrix<S> contract_right(const Matrix<S>& g, const Matrix<S>& x, Eigen::Index q) {
  const Eigen::Index p = x.cols();
  if (q == 1) return g.cwiseProduct(x).rowwise().sum();
  Matrix<S> dy = Matrix<S>::Zero(g.rows(), q);
  for (Eigen::Index u = 0; u < p; ++u) {
    for (Eigen::Index v = 0; v < q; ++v) dy.col(v) += g.col(u * q + v).cwiseProduct(x.col(u));
  }
  return dy;
}

inline void require_shape(Eigen::Index rows, Eigen::Index cols, Eigen::Index want_rows, Eigen::Index want_cols,
                          const char* path) {
  if (rows != want_rows || cols != want_cols) {
    throw std::invalid_argument(std::string("cg_product: weight shape mismatch on path ") + path + " (got " +
                                std::to_string(rows) + "x" + std::to_string(cols) + ", expected " +
                                std::to_string(want_rows) + "x" + std::to_string(want_cols) + ")");
  }
}

}  // namespace steerable_detail

/// Tape handles for the weights of one CG product; invalid handles disable a path.
struct TensorProductVars {
  ad::Var w00, w110, w01, w10, w111, bias;
};

/// Batched parametrised CG product f (x) a -> out, row by row.
template <typename S>
ad::Var tensor_product(ad::Tape<S>& t, ad::Var f, const Irreps& fi, ad::Var a, const Irreps& ai,
                       const TensorProductVars& w, const Irreps& oi) {
  using steerable_detail::contract_left;
  using steerable_detail::contract_right;
  using steerable_detail::outer;
  using steerable_detail::require_shape;
  const Matrix<S>& F = t.value(f);
  const Matrix<S>& A = t.value(a);
  if (F.cols() != fi.dim() || A.cols() != ai.dim()) throw std::invalid_argument("cg_product: layout/length mismatch");
  if (F.rows() != A.rows()) throw std::invalid_argument("cg_product: row count mismatch");

  const auto fs = fi.scalars, fv = fi.vectors, as = ai.scalars, av = ai.vectors, os = oi.scalars, ov = oi.vectors;
  auto check = [&](ad::Var v, Eigen::Index r, Eigen::Index c, const char* path) {
    if (v.valid()) require_shape(t.value(v).rows(), t.value(v).cols(), r, c, path);
  };
  check(w.w00, fs * as, os, "0x0->0");
  check(w.w110, fv * av, os, "1x1->0");
  check(w.w01, fs * av, ov, "0x1->1");
  check(w.w10, fv * as, ov, "1x0->1");
  check(w.w111, fv * av, ov, "1x1->1");
  if (w.bias.valid()) require_shape(t.value(w.bias).rows(), t.value(w.bias).cols(), 1, os, "bias");

  const S c_dot = static_cast<S>(kDotPathConstant);
  const S c_cross = static_cast<S>(kCrossPathConstant);
  const auto Fs = [&] { return Matrix<S>(F.leftCols(fs)); };
  const auto Fk = [&](int k) { return Matrix<S>(F.middleCols(fi.vector_offset(k), fv)); };
  const auto As = [&] { return Matrix<S>(A.leftCols(as)); };
  const auto Ak = [&](int k) { return Matrix<S>(A.middleCols(ai.vector_offset(k), av)); };
  const bool p00 = w.w00.valid() && fs * as * os > 0;
  const bool p110 = w.w110.valid() && fv * av * os > 0;
  const bool p01 = w.w01.valid() && fs * av * ov > 0;
  const bool p10 = w.w10.valid() && fv * as * ov > 0;
  const bool p111 = w.w111.valid() && fv * av * ov > 0;

  Matrix<S> out = Matrix<S>::Zero(F.rows(), oi.dim());
  if (p00) out.leftCols(os).noalias() += outer(Fs(), As()) * t.value(w.w00);
  if (p110) {
    for (int k = 0; k < 3; ++k) out.leftCols(os).noalias() += c_dot * (outer(Fk(k), Ak(k)) * t.value(w.w110));
  }
  for (int k = 0; k < 3; ++k) {
    auto ok = out.middleCols(oi.vector_offset(k), ov);
    if (p01) ok.noalias() += outer(Fs(), Ak(k)) * t.value(w.w01);
    if (p10) ok.noalias() += outer(Fk(k), As()) * t.value(w.w10);
    if (p111) {
      const int k1 = (k + 1) % 3, k2 = (k + 2) % 3;
      ok.noalias() += c_cross * ((outer(Fk(k1), Ak(k2)) - outer(Fk(k2), Ak(k1))) * t.value(w.w111));
    }
  }
  if (w.bias.valid() && os > 0) out.leftCols(os).rowwise() += t.value(w.bias).row(0);

  std::vector<ad::Var> inputs{f, a};
  for (ad::Var v : {w.w00, w.w110, w.w01, w.w10, w.w111, w.bias}) {
    if (v.valid()) inputs.push_back(v);
  }

  auto backward = [=](ad::Tape<S>& t, const Matrix<S>& g) {
    const Matrix<S>& F = t.value(f);
    const Matrix<S>& A = t.value(a);
    const bool gf = t.needs_grad(f), ga = t.needs_grad(a);
    Matrix<S> dF = Matrix<S>::Zero(F.rows(), F.cols());
    Matrix<S> dA = Matrix<S>::Zero(A.rows(), A.cols());
    const Matrix<S> Fs = F.leftCols(fs), As = A.leftCols(as);
    Matrix<S> Fk[3], Ak[3], Gk[3];
    for (int k = 0; k < 3; ++k) {
      Fk[k] = F.middleCols(fi.vector_offset(k), fv);
      Ak[k] = A.middleCols(ai.vector_offset(k), av);
      Gk[k] = g.middleCols(oi.vector_offset(k), ov);
    }
    const Matrix<S> Gs = g.leftCols(os);
    auto acc = [&](Matrix<S>& dst, Eigen::Index off, const Matrix<S>& src) {
      dst.middleCols(off, src.cols()) += src;
    };

    if (p00) {
      if (t.needs_grad(w.w00)) t.grad(w.w00).noalias() += outer(Fs, As).transpose() * Gs;
      const Matrix<S> dO = Gs * t.value(w.w00).transpose();
      if (gf) acc(dF, 0, contract_left(dO, As, fs));
      if (ga) acc(dA, 0, contract_right(dO, Fs, as));
    }
    if (p110) {
      const Matrix<S> dO = c_dot * (Gs * t.value(w.w110).transpose());
      for (int k = 0; k < 3; ++k) {
        if (t.needs_grad(w.w110)) t.grad(w.w110).noalias() += c_dot * (outer(Fk[k], Ak[k]).transpose() * Gs);
        if (gf) acc(dF, fi.vector_offset(k), contract_left(dO, Ak[k], fv));
        if (ga) acc(dA, ai.vector_offset(k), contract_right(dO, Fk[k], av));
      }
    }
    for (int k = 0; k < 3; ++k) {
      if (p01) {
        if (t.needs_grad(w.w01)) t.grad(w.w01).noalias() += outer(Fs, Ak[k]).transpose() * Gk[k];
        const Matrix<S> dO = Gk[k] * t.value(w.w01).transpose();
        if (gf) acc(dF, 0, contract_left(dO, Ak[k], fs));
        if (ga) acc(dA, ai.vector_offset(k), contract_right(dO, Fs, av));
      }
      if (p10) {
        if (t.needs_grad(w.w10)) t.grad(w.w10).noalias() += outer(Fk[k], As).transpose() * Gk[k];
        const Matrix<S> dO = Gk[k] * t.value(w.w10).transpose();
        if (gf) acc(dF, fi.vector_offset(k), contract_left(dO, As, fv));
        if (ga) acc(dA, 0, contract_right(dO, Fk[k], as));
      }
      if (p111) {
        const int k1 = (k + 1) % 3, k2 = (k + 2) % 3;
        if (t.needs_grad(w.w111)) {
          t.grad(w.w111).noalias() +=
              c_cross * ((outer(Fk[k1], Ak[k2]) - outer(Fk[k2], Ak[k1])).transpose() * Gk[k]);
        }
        const Matrix<S> dO = c_cross * (Gk[k] * t.value(w.w111).transpose());
        if (gf) {
          acc(dF, fi.vector_offset(k1), contract_left(dO, Ak[k2], fv));
          acc(dF, fi.vector_offset(k2), Matrix<S>(-contract_left(dO, Ak[k1], fv)));
        }
        if (ga) {
          acc(dA, ai.vector_offset(k2), contract_right(dO, Fk[k1], av));
          acc(dA, ai.vector_offset(k1), Matrix<S>(-contract_right(dO, Fk[k2], av)));
        }
      }
    }
    if (w.bias.valid() && os > 0 && t.needs_grad(w.bias)) t.grad(w.bias) += Gs.colwise().sum();
    if (gf) t.grad(f) += dF;
    if (ga) t.grad(a) += dA;
  };
  return t.record(std::move(out), inputs, "cg_product", backward);
}

/// Gated nonlinearity. `pre` has s + v scalars (trailing v are gates) and v
/// vectors; the result has layout {s, v}.
template <typename S>
ad::Var gate(ad::Tape<S>& t, ad::Var x, const Irreps& pre) {
  const int v = pre.vectors;
  const int s = pre.scalars - v;
  if (s < 0) throw std::invalid_argument("gate: layout lacks one gate scalar per vector channel");
  if (t.value(x).cols() != pre.dim()) throw std::invalid_argument("gate: layout/length mismatch");
  std::vector<ad::Var> parts;
  if (s > 0) parts.push_back(ad::silu(t, ad::slice_cols(t, x, 0, s)));
  if (v > 0) {
    const ad::Var g = ad::sigmoid(t, ad::slice_cols(t, x, s, v));
    for (int k = 0; k < 3; ++k) parts.push_back(ad::hadamard(t, ad::slice_cols(t, x, pre.vector_offset(k), v), g));
  }
  if (parts.empty()) return t.constant(Matrix<S>(t.value(x).rows(), 0));
  return parts.size() == 1 ? parts[0] : ad::concat_cols(t, parts);
}

/// Direct sum of batched steerable features (same row count).
template <typename S>
std::pair<ad::Var, Irreps> direct_sum(ad::Tape<S>& t, const std::vector<std::pair<ad::Var, Irreps>>& items) {
  Irreps total;
  for (const auto& [v, ir] : items) {
    total.scalars += ir.scalars;
    total.vectors += ir.vectors;
  }
  std::vector<ad::Var> parts;
  for (const auto& [v, ir] : items) {
    if (ir.scalars > 0) parts.push_back(ad::slice_cols(t, v, 0, ir.scalars));
  }
  for (int k = 0; k < 3; ++k) {
    for (const auto& [v, ir] : items) {
      if (ir.vectors > 0) parts.push_back(ad::slice_cols(t, v, ir.vector_offset(k), ir.vectors));
    }
  }
  return {ad::concat_cols(t, parts), total};
}

/// Applies R to every l = 1 channel of a batched feature matrix.
template <typename S>
Matrix<S> rotate_features(const Matrix<S>& x, const Irreps& irreps, const Eigen::Matrix3d& rotation) {
  Matrix<S> out = x;
  const Eigen::Matrix<S, 3, 3> r = rotation.cast<S>();
  for (int k = 0; k < 3; ++k) {
    auto dst = out.middleCols(irreps.vector_offset(k), irreps.vectors);
    dst.setZero();
    for (int j = 0; j < 3; ++j) dst += r(k, j) * x.middleCols(irreps.vector_offset(j), irreps.vectors);
  }
  return out;
}

/// Weight initialisation for one CG product layer. Both modes draw with
/// standard deviation 1/sqrt(fan_in); Shifted moves the mean to 1/fan_in so a
/// fresh layer starts close to an average over its inputs.
enum class InitMode { Plain, Shifted };

/// One parametrised CG product with its named parameters.
struct TensorProductLayer {
  std::string name;
  Irreps in, attr, out;
  bool bias = true;
  bool cross_path = false;

  int scalar_fan_in() const { return in.scalars * attr.scalars + in.vectors * attr.vectors; }
  int vector_fan_in() const {
    return in.scalars * attr.vectors + in.vectors * attr.scalars + (cross_path ? in.vectors * attr.vectors : 0);
  }

  struct PathShape {
    const char* suffix;
    int rows, cols;
    bool vector_out;
  };
  std::vector<PathShape> paths() const {
    std::vector<PathShape> p;
    auto add = [&](const char* s, int r, int c, bool vec) {
      if (r * c > 0) p.push_back({s, r, c, vec});
    };
    add("w00", in.scalars * attr.scalars, out.scalars, false);
    add("w110", in.vectors * attr.vectors, out.scalars, false);
    add("w01", in.scalars * attr.vectors, out.vectors, true);
    add("w10", in.vectors * attr.scalars, out.vectors, true);
    if (cross_path) add("w111", in.vectors * attr.vectors, out.vectors, true);
    return p;
  }

  Eigen::Index parameter_count() const {
    Eigen::Index n = (bias && out.scalars > 0) ? out.scalars : 0;
    for (const auto& p : paths()) n += static_cast<Eigen::Index>(p.rows) * p.cols;
    return n;
  }

  template <typename S>
  void init(ad::ParamStore<S>& store, std::mt19937_64& rng, InitMode mode = InitMode::Plain) const {
    for (const auto& p : paths()) {
      const int fan = p.vector_out ? vector_fan_in() : scalar_fan_in();
      const double sd = 1.0 / std::sqrt(static_cast<double>(fan));
      const double mean = mode == InitMode::Shifted ? 1.0 / fan : 0.0;
      std::normal_distribution<double> nd(mean, sd);
      Matrix<S> w(p.rows, p.cols);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<S>(nd(rng));
      store.add(name + "/" + p.suffix, std::move(w));
    }
    if (bias && out.scalars > 0) store.add(name + "/bias", Matrix<S>::Zero(1, out.scalars));
  }

  template <typename S>
  ad::Var apply(ad::Tape<S>& t, const ad::ParamStore<S>& store, ad::Var f, ad::Var a) const {
    TensorProductVars v;
    for (const auto& p : paths()) {
      const ad::Var pv = t.parameter(store, name + "/" + p.suffix);
      const std::string s = p.suffix;
      if (s == "w00") v.w00 = pv;
      else if (s == "w110") v.w110 = pv;
      else if (s == "w01") v.w01 = pv;
      else if (s == "w10") v.w10 = pv;
      else v.w111 = pv;
    }
    if (bias && out.scalars > 0) v.bias = t.parameter(store, name + "/bias");
    return tensor_product(t, f, in, a, attr, v, out);
  }
};

// ---------------------------------------------------------------------------
// Single-tensor API

/// Component-normalised l <= 1 spherical harmonics: (1, v / |v|); the zero
/// vector maps to (1, 0).
template <typename S>
SteerableTensor<S> sh_embed(const Vec3& v) {
  SteerableTensor<S> out{IrrepsLayout{{0, 1}, {1, 1}}, Vector<S>::Zero(4)};
  out.coeffs[0] = S(1);
  const double n = v.norm();
  if (n > 0.0) {
    for (int k = 0; k < 3; ++k) out.coeffs[1 + k] = static_cast<S>(v[k] / n);
  }
  return out;
}

namespace steerable_detail {

template <typename S>
TensorProductVars bind_weights(ad::Tape<S>& t, const CGWeights<S>& w) {
  TensorProductVars v;
  if (w.w00.size()) v.w00 = t.constant(w.w00);
  if (w.w110.size()) v.w110 = t.constant(w.w110);
  if (w.w01.size()) v.w01 = t.constant(w.w01);
  if (w.w10.size()) v.w10 = t.constant(w.w10);
  if (w.w111.size()) v.w111 = t.constant(w.w111);
  return v;
}

template <typename S>
void check_weights(const CGWeights<S>& w, const Irreps& fi, const Irreps& ai, const Irreps& oi) {
  auto chk = [](const Matrix<S>& m, Eigen::Index r, Eigen::Index c, const char* path) {
    if (m.size() == 0 && r * c == 0) return;
    if (m.size() == 0) return;  // path disabled
    require_shape(m.rows(), m.cols(), r, c, path);
  };
  chk(w.w00, fi.scalars * ai.scalars, oi.scalars, "0x0->0");
  chk(w.w110, fi.vectors * ai.vectors, oi.scalars, "1x1->0");
  chk(w.w01, fi.scalars * ai.vectors, oi.vectors, "0x1->1");
  chk(w.w10, fi.vectors * ai.scalars, oi.vectors, "1x0->1");
  chk(w.w111, fi.vectors * ai.vectors, oi.vectors, "1x1->1");
}

}  // namespace steerable_detail

template <typename S>
SteerableTensor<S> cg_product(const SteerableTensor<S>& f, const SteerableTensor<S>& a, const CGWeights<S>& w,
                              const IrrepsLayout& out_layout) {
  f.check();
  a.check();
  const Irreps fi = f.layout.irreps(), ai = a.layout.irreps(), oi = out_layout.irreps();
  steerable_detail::check_weights(w, fi, ai, oi);
  ad::Tape<S> t;
  const ad::Var out = tensor_product(t, t.constant(f.canonical_row()), fi, t.constant(a.canonical_row()), ai,
                                     steerable_detail::bind_weights(t, w), oi);
  SteerableTensor<S> result{out_layout, Vector<S>::Zero(out_layout.dim())};
  const auto order = out_layout.canonical_order();
  for (std::size_t c = 0; c < order.size(); ++c) result.coeffs[order[c]] = t.value(out)(0, static_cast<Eigen::Index>(c));
  return result;
}

template <typename S>
SteerableTensor<S> gated_nonlinearity(const SteerableTensor<S>& f) {
  f.check();
  const Irreps pre = f.layout.irreps();
  ad::Tape<S> t;
  const ad::Var out = gate(t, t.constant(f.canonical_row()), pre);
  return SteerableTensor<S>::from_canonical({pre.scalars - pre.vectors, pre.vectors}, t.value(out));
}

/// Alternating CG products (conditioned on `attr`) and gates; the last
/// product is linear.
template <typename S>
SteerableTensor<S> steerable_mlp(const SteerableTensor<S>& f, const SteerableTensor<S>& attr,
                                 const std::vector<CGWeights<S>>& layers) {
  if (layers.empty()) throw std::invalid_argument("steerable_mlp: no layers");
  f.check();
  attr.check();
  ad::Tape<S> t;
  Irreps cur = f.layout.irreps();
  const Irreps ai = attr.layout.irreps();
  ad::Var x = t.constant(f.canonical_row());
  const ad::Var a = t.constant(attr.canonical_row());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Irreps oi = layers[l].output();
    steerable_detail::check_weights(layers[l], cur, ai, oi);
    x = tensor_product(t, x, cur, a, ai, steerable_detail::bind_weights(t, layers[l]), oi);
    cur = oi;
    if (l + 1 < layers.size()) {
      x = gate(t, x, cur);
      cur = {cur.scalars - cur.vectors, cur.vectors};
    }
  }
  return SteerableTensor<S>::from_canonical(cur, t.value(x));
}

/// R applied to each l = 1 block.
template <typename S>
SteerableTensor<S> rotate(const SteerableTensor<S>& f, const Eigen::Matrix3d& rotation) {
  const Irreps ir = f.layout.irreps();
  const Matrix<S> row = rotate_features<S>(f.canonical_row(), ir, rotation);
  SteerableTensor<S> out{f.layout, Vector<S>::Zero(f.layout.dim())};
  const auto order = f.layout.canonical_order();
  for (std::size_t c = 0; c < order.size(); ++c) out.coeffs[order[c]] = row(0, static_cast<Eigen::Index>(c));
  return out;
}

}  // namespace lagr
