#include "lagr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace lagr {

double mse_positions(const Points& pred, const Points& ref, const DomainSpec& domain) {
  if (pred.rows() != ref.rows()) throw std::invalid_argument("mse_positions: particle count mismatch");
  if (pred.rows() == 0) return 0.0;
  double sum = 0;
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    sum += domain.minimum_image((pred.row(i) - ref.row(i)).transpose()).squaredNorm();
  }
  return sum / (3.0 * static_cast<double>(pred.rows()));
}

double kinetic_energy(const Points& velocity, const Eigen::VectorXd& mass) {
  if (mass.size() != velocity.rows()) throw std::invalid_argument("kinetic_energy: mass/velocity size mismatch");
  return 0.5 * (velocity.rowwise().squaredNorm().array() * mass.array()).sum();
}

double kinetic_energy(const Points& velocity, double mass) { return 0.5 * mass * velocity.squaredNorm(); }

namespace {

// Rows in lexicographic order, so results do not depend on labelling.
Points canonical(const Points& p) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(p.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (int k = 0; k < 3; ++k) {
      if (p(a, k) != p(b, k)) return p(a, k) < p(b, k);
    }
    return false;
  });
  Points out(p.rows(), 3);
  for (std::size_t i = 0; i < order.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = p.row(order[i]);
  return out;
}

bool lex_less(const Points& a, const Points& b) {
  if (a.rows() != b.rows()) return a.rows() < b.rows();
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a.data()[i] != b.data()[i]) return a.data()[i] < b.data()[i];
  }
  return false;
}

Eigen::MatrixXd cost_matrix(const Points& a, const Points& b, const DomainSpec& domain) {
  Eigen::MatrixXd c(a.rows(), b.rows());
  for (Eigen::Index j = 0; j < b.rows(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      c(i, j) = domain.minimum_image((a.row(i) - b.row(j)).transpose()).squaredNorm();
    }
  }
  return c;
}

// Terms more than kCutoff below the largest exponent of a log-sum-exp are
// below double resolution of the sum (which is at least 1) and are skipped.
constexpr double kCutoff = 50.0;

// Costs seen by each entry, sorted ascending, so that a soft-min can stop once
// no remaining term can clear the cutoff.
struct SortedCosts {
  Eigen::MatrixXd cost;   // column i: sorted costs of entry i
  Eigen::MatrixXi index;  // matching partner indices

  explicit SortedCosts(const Eigen::MatrixXd& c) : cost(c.rows(), c.cols()), index(c.rows(), c.cols()) {
    std::vector<int> order(static_cast<std::size_t>(c.rows()));
    for (Eigen::Index i = 0; i < c.cols(); ++i) {
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return c(a, i) < c(b, i); });
      for (Eigen::Index k = 0; k < c.rows(); ++k) {
        index(k, i) = order[static_cast<std::size_t>(k)];
        cost(k, i) = c(order[static_cast<std::size_t>(k)], i);
      }
    }
  }
};

// out_i = -eps * log sum_j w * exp((potential_j - cost_ij) / eps), stabilised.
Eigen::VectorXd soft_min(const SortedCosts& sc, const Eigen::VectorXd& potential, double log_w, double eps) {
  const double inv_eps = 1.0 / eps;
  const double p_max = potential.maxCoeff();
  Eigen::VectorXd out(sc.cost.cols());
  std::vector<double> x(static_cast<std::size_t>(sc.cost.rows()));
  for (Eigen::Index i = 0; i < sc.cost.cols(); ++i) {
    double m = -std::numeric_limits<double>::infinity();
    std::size_t count = 0;
    for (Eigen::Index k = 0; k < sc.cost.rows(); ++k) {
      const double c = sc.cost(k, i);
      // Every later term is bounded by (p_max - c) / eps.
      if ((p_max - c) * inv_eps < m - kCutoff) break;
      x[count] = (potential[sc.index(k, i)] - c) * inv_eps;
      m = std::max(m, x[count]);
      ++count;
    }
    double s = 0;
    for (std::size_t k = 0; k < count; ++k) {
      const double d = x[k] - m;
      if (d > -kCutoff) s += std::exp(d);
    }
    out[i] = -eps * (m + std::log(s) + log_w);
  }
  return out;
}

constexpr double kWarmStartTol = 1e-4;

}  // namespace

SinkhornResult entropic_ot(const Points& a, const Points& b, const DomainSpec& domain, const SinkhornOptions& opt) {
  if (!(opt.epsilon > 0)) throw std::invalid_argument("sinkhorn: epsilon must be positive");
  if (a.rows() == 0 || b.rows() == 0) throw std::invalid_argument("sinkhorn: empty point set");
  const Eigen::MatrixXd c = cost_matrix(a, b, domain);
  const Eigen::Index n = a.rows(), m = b.rows();
  const double log_a = -std::log(static_cast<double>(n));
  const double log_b = -std::log(static_cast<double>(m));
  Eigen::VectorXd f = Eigen::VectorXd::Zero(n), g = Eigen::VectorXd::Zero(m);

  std::vector<double> schedule;
  if (opt.anneal) {
    for (double e = std::max(c.maxCoeff(), opt.epsilon); e > opt.epsilon; e *= opt.anneal_factor) schedule.push_back(e);
  }
  schedule.push_back(opt.epsilon);

  // Self-transport: the symmetric averaged update converges far faster than
  // alternating scalings and keeps f == g exactly.
  const bool self = n == m && a == b;
  const SortedCosts by_row(c.transpose());  // f updates
  const SortedCosts by_col = self ? by_row : SortedCosts(c);

  SinkhornResult r;
  for (std::size_t stage = 0; stage < schedule.size(); ++stage) {
    const double eps = schedule[stage];
    const bool last = stage + 1 == schedule.size();
    // Intermediate stages only warm-start the next one.
    const double stage_tol = last ? opt.tol : std::max(opt.tol, kWarmStartTol);
    bool done = false;
    for (int it = 0; it < opt.max_iters; ++it) {
      // With g = T(f) the columns are exact and row i sums to exp((f_i - T(g)_i) / eps),
      // so the next f update also measures the current violation.
      const Eigen::VectorXd h = soft_min(by_row, self ? f : g, log_b, eps);
      if (self || it > 0) {
        r.marginal_error = (((f - h).array() / eps).exp() - 1.0).abs().mean();
        done = r.marginal_error < stage_tol;
        if (done) break;
      }
      if (self) {
        f = 0.5 * (f + h);
        g = f;
      } else {
        f = h;
        g = soft_min(by_col, f, log_a, eps);
      }
      ++r.iterations;
    }
    if (last) r.converged = done;
  }
  r.value = f.sum() / static_cast<double>(n) + g.sum() / static_cast<double>(m);
  return r;
}

SinkhornResult sinkhorn_distance(const Points& a_in, const Points& b_in, const DomainSpec& domain,
                                 const SinkhornOptions& opt) {
  Points a = canonical(a_in), b = canonical(b_in);
  if (lex_less(b, a)) std::swap(a, b);
  const SinkhornResult ab = entropic_ot(a, b, domain, opt);
  const SinkhornResult aa = entropic_ot(a, a, domain, opt);
  const SinkhornResult bb = entropic_ot(b, b, domain, opt);
  SinkhornResult r;
  r.value = ab.value - 0.5 * aa.value - 0.5 * bb.value;
  r.converged = ab.converged && aa.converged && bb.converged;
  r.iterations = ab.iterations + aa.iterations + bb.iterations;
  r.marginal_error = std::max({ab.marginal_error, aa.marginal_error, bb.marginal_error});
  return r;
}

double exact_ot(const Points& a, const Points& b, const DomainSpec& domain) {
  if (a.rows() != b.rows()) throw std::invalid_argument("exact_ot: sets must have equal size");
  if (a.rows() > 8) throw std::invalid_argument("exact_ot: at most 8 points");
  const Eigen::MatrixXd c = cost_matrix(a, b, domain);
  std::vector<int> perm(static_cast<std::size_t>(a.rows()));
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0;
    for (std::size_t i = 0; i < perm.size(); ++i) s += c(static_cast<Eigen::Index>(i), perm[i]);
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return a.rows() == 0 ? 0.0 : best / static_cast<double>(a.rows());
}

double EvalReport::mse_p_mean() const {
  if (mse_p.empty()) return 0.0;
  return std::accumulate(mse_p.begin(), mse_p.end(), 0.0) / static_cast<double>(mse_p.size());
}

double particle_mass(const Trajectory& traj) {
  if (traj.metadata.contains("particle_mass")) return traj.metadata.at("particle_mass").get<double>();
  const double rho = traj.metadata.value("rest_density", 1.0);
  return rho * traj.domain.volume() / std::max(1, traj.num_particles());
}

EvalReport evaluate_rollout(const Trajectory& predicted, const Trajectory& reference, const EvalOptions& options) {
  if (predicted.num_particles() != reference.num_particles()) {
    throw std::invalid_argument("evaluate: particle count mismatch");
  }
  if (options.sinkhorn_stride < 1) throw std::invalid_argument("evaluate: sinkhorn_stride must be >= 1");
  if (!(reference.frame_dt > 0)) throw std::invalid_argument("evaluate: reference frame_dt must be positive");
  const int first = options.history + 1;
  const int last = std::min(predicted.num_frames(), reference.num_frames());
  const double mass = particle_mass(reference);
  const DomainSpec& dom = reference.domain;

  auto velocity = [&](const Trajectory& traj, int k) {
    const Points& p = traj.positions[static_cast<std::size_t>(k)];
    const Points& q = traj.positions[static_cast<std::size_t>(k - 1)];
    Points v(p.rows(), 3);
    for (Eigen::Index i = 0; i < p.rows(); ++i) v.row(i) = dom.minimum_image((p.row(i) - q.row(i)).transpose()).transpose();
    return Points(v / reference.frame_dt);
  };

  EvalReport r;
  for (int k = first; k < last; ++k) {
    const Points& p = predicted.positions[static_cast<std::size_t>(k)];
    const Points& q = reference.positions[static_cast<std::size_t>(k)];
    r.mse_p.push_back(mse_positions(p, q, dom));
    r.ekin_pred.push_back(kinetic_energy(velocity(predicted, k), mass));
    r.ekin_ref.push_back(kinetic_energy(velocity(reference, k), mass));
    if ((k - first) % options.sinkhorn_stride == 0) {
      const SinkhornResult s = sinkhorn_distance(p, q, dom, options.sinkhorn);
      r.sinkhorn.push_back(s.value);
      r.sinkhorn_steps.push_back(k - first);
      r.sinkhorn_converged = r.sinkhorn_converged && s.converged;
    }
  }
  if (!r.mse_p.empty()) {
    double s = 0;
    for (std::size_t i = 0; i < r.ekin_pred.size(); ++i) s += std::pow(r.ekin_pred[i] - r.ekin_ref[i], 2);
    r.mse_ekin = s / static_cast<double>(r.ekin_pred.size());
  }
  if (!r.sinkhorn.empty()) {
    r.sinkhorn_mean = std::accumulate(r.sinkhorn.begin(), r.sinkhorn.end(), 0.0) / static_cast<double>(r.sinkhorn.size());
  }
  return r;
}

nlohmann::json summary_json(const std::vector<EvalReport>& reports) {
  double mse_p = 0, mse_ekin = 0, sinkhorn = 0;
  for (const auto& r : reports) {
    mse_p += r.mse_p_mean();
    mse_ekin += r.mse_ekin;
    sinkhorn += r.sinkhorn_mean;
  }
  const double n = reports.empty() ? 1.0 : static_cast<double>(reports.size());
  return {{"mse_p", mse_p / n}, {"mse_ekin", mse_ekin / n}, {"sinkhorn_mean", sinkhorn / n}};
}

void write_eval_csv(std::ostream& os, const std::vector<EvalReport>& reports) {
  os << "traj,step,mse_p,ekin_pred,ekin_ref,sinkhorn\n";
  const auto old = os.precision(17);
  for (std::size_t t = 0; t < reports.size(); ++t) {
    const EvalReport& r = reports[t];
    std::size_t s_idx = 0;
    for (std::size_t k = 0; k < r.mse_p.size(); ++k) {
      os << t << ',' << k << ',' << r.mse_p[k] << ',' << r.ekin_pred[k] << ',' << r.ekin_ref[k] << ',';
      if (s_idx < r.sinkhorn_steps.size() && r.sinkhorn_steps[s_idx] == static_cast<int>(k)) os << r.sinkhorn[s_idx++];
      os << '\n';
    }
  }
  os.precision(old);
}

}  // namespace lagr
