#pragma once

#include "lagr/neighbors.hpp"
#include "lagr/trajectory.hpp"

#include <json.hpp>

#include <iosfwd>
#include <string>
#include <vector>

namespace lagr {

/// Mean over particles and components of the squared minimum-image offset.
double mse_positions(const Points& pred, const Points& ref, const DomainSpec& domain);

/// sum_i m_i |v_i|^2 / 2.
double kinetic_energy(const Points& velocity, const Eigen::VectorXd& mass);
double kinetic_energy(const Points& velocity, double mass);

struct SinkhornOptions {
  double epsilon = 1e-3;      // squared-length units
  int max_iters = 500;        // per epsilon stage
  double tol = 1e-6;          // L1 marginal violation
  bool anneal = true;         // start at the cost scale and shrink to epsilon
  double anneal_factor = 0.5;
};

struct SinkhornResult {
  double value = 0.0;        // debiased divergence
  bool converged = true;
  int iterations = 0;        // summed over the three problems
  double marginal_error = 0.0;
};

/// Entropic OT cost OT_eps(A, B) with uniform weights, log-domain updates and
/// squared minimum-image cost. Reports the dual objective.
SinkhornResult entropic_ot(const Points& a, const Points& b, const DomainSpec& domain, const SinkhornOptions& opt = {});

/// Debiased Sinkhorn divergence OT(A,B) - OT(A,A)/2 - OT(B,B)/2.
SinkhornResult sinkhorn_distance(const Points& a, const Points& b, const DomainSpec& domain,
                                 const SinkhornOptions& opt = {});

/// Exact uniform-weight OT between equal-size sets by enumerating assignments.
/// Mean squared minimum-image distance; |A| = |B| <= 8.
double exact_ot(const Points& a, const Points& b, const DomainSpec& domain);

struct EvalReport {
  std::vector<double> mse_p;        // per rollout step
  std::vector<double> ekin_pred;
  std::vector<double> ekin_ref;
  std::vector<double> sinkhorn;     // per evaluated step (see sinkhorn_steps)
  std::vector<int> sinkhorn_steps;
  double mse_ekin = 0.0;
  double sinkhorn_mean = 0.0;
  bool sinkhorn_converged = true;
  int diverged_at = -1;             // rollout step of a blow-up, -1 if none

  double mse_p_mean() const;
};

struct EvalOptions {
  int history = 5;
  int sinkhorn_stride = 1;          // evaluate the OT metric every k-th step
  SinkhornOptions sinkhorn;
};

/// Compares predicted frames H+1.. with the same reference frames. Velocities
/// come from backward differences over frame_dt; the particle mass is
/// metadata "particle_mass" or rest density * volume / N.
EvalReport evaluate_rollout(const Trajectory& predicted, const Trajectory& reference, const EvalOptions& options);

/// Combines per-trajectory reports by averaging their summaries.
nlohmann::json summary_json(const std::vector<EvalReport>& reports);

/// Per-step CSV: traj,step,mse_p,ekin_pred,ekin_ref,sinkhorn.
void write_eval_csv(std::ostream& os, const std::vector<EvalReport>& reports);

double particle_mass(const Trajectory& traj);

}  // namespace lagr
