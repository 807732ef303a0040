#pragma once

#include <Eigen/Dense>
#include <array>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "otafl/channel.hpp"
#include "otafl/resource.hpp"

namespace otafl {

/// One participating user as seen by Block B.
struct BlockBUser {
  double amp_ul = 1.0;  // |alpha_u|
  double amp_dl = 1.0;  // |beta_u|
  double aoa = kPi / 2;
  double aod = kPi / 2;
  double power = 0.2;   // uplink transmit power used in the rate
};

struct BlockBProblem {
  std::vector<BlockBUser> users;
  double wavelength = 1.0;
  double ul_bandwidth = 1.0;
  double dl_bandwidth = 1.0;
  double ul_noise_density = 1.0;
  double dl_noise_density = 1.0;
  double server_power = 1.0;
  double payload_bits = 1.0;
  double time_weight = 0.0;  // c_t in c_t (t1 + t2); 0 picks 1/(t1 + t2) at the start

  std::size_t num_users() const { return users.size(); }
};

struct AuxState {
  double t1 = 0.0;
  double t2 = 0.0;
  std::vector<cd> g_ul;
  std::vector<cd> g_dl;
  std::vector<Eigen::VectorXcd> theta_ul;
  std::vector<Eigen::VectorXcd> theta_dl;
};

/// Primal variables of Block B.
struct BlockBState {
  AuxState aux;
  Eigen::VectorXcd q;
  Eigen::VectorXcd w;
  ArrayGeometry geometry;
};

/// Multipliers are stored as a real vector: per user [Re,Im](g_ul - q^H th_ul),
/// [Re,Im](g_dl - th_dl^H w), then [Re,Im] of th_ul - a_ul(x) and th_dl - a_dl(x).
struct PenaltyState {
  double penalty_weight = 1.0;  // mu
  Eigen::VectorXd multipliers;
  std::vector<double> violation_history;
};

struct SolverReport {
  std::vector<double> objective_trace;
  std::vector<double> constraint_violation_trace;
  std::vector<double> penalty_trace;
  int inner_iterations = 0;
  bool converged = false;
  std::pair<int, int> best_MN{0, 0};
};

/// Minimal |g| such that the uplink rate reaches payload/t.
double required_gain_ul(const BlockBProblem& p, std::size_t u, double t);
double required_gain_dl(const BlockBProblem& p, std::size_t u, double t);
/// payload / R(g); +inf when the gain is zero.
double slot_time_ul(const BlockBProblem& p, std::size_t u, cd g);
double slot_time_dl(const BlockBProblem& p, std::size_t u, cd g);

/// Flattened real equality residuals in the multiplier layout.
Eigen::VectorXd block_b_residuals(const BlockBProblem& p, const BlockBState& s);

/// c_t (t1 + t2) + lambda^T h + mu/2 ||h||^2 with t1, t2 tight at the current g.
double block_b_objective(const BlockBProblem& p, const BlockBState& s, const PenaltyState& pen);

/// Subproblem 1: update g (and the tight t1, t2) with theta, q, w fixed.
AuxState solve_aux(const BlockBProblem& p, const BlockBState& s, const PenaltyState& pen);

/// One cyclic sweep of min |target - comb^H th|^2 + ||th - anchor||^2 over unit-modulus th.
Eigen::VectorXcd unit_modulus_sweep(cd target, const Eigen::VectorXcd& comb,
                                    const Eigen::VectorXcd& anchor, const Eigen::VectorXcd& theta0);

/// Subproblem 2: returns (theta_ul, theta_dl) for all users.
std::pair<std::vector<Eigen::VectorXcd>, std::vector<Eigen::VectorXcd>> unit_modulus_update(
    const BlockBProblem& p, const BlockBState& s, const PenaltyState& pen);

/// ||Theta^H x - b||^2 and its gradient 2 Theta (Theta^H x - b).
double sphere_ls_objective(const Eigen::MatrixXcd& theta, const Eigen::VectorXcd& b,
                           const Eigen::VectorXcd& x);
Eigen::VectorXcd sphere_ls_gradient(const Eigen::MatrixXcd& theta, const Eigen::VectorXcd& b,
                                    const Eigen::VectorXcd& x);

struct SphereResult {
  Eigen::VectorXcd x;
  double objective = 0.0;
  double riemannian_grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Riemannian gradient descent on the unit sphere with Armijo backtracking.
SphereResult sphere_least_squares(const Eigen::MatrixXcd& theta, const Eigen::VectorXcd& b,
                                  const Eigen::VectorXcd& x0, int max_iter = 500,
                                  double grad_tol = 1e-10);

struct BeamformerUpdate {
  Eigen::VectorXcd q;
  Eigen::VectorXcd w;
  SphereResult q_info;
  SphereResult w_info;
};

/// Subproblem 3.
BeamformerUpdate beamformer_update(const BlockBProblem& p, const BlockBState& s,
                                   const PenaltyState& pen, int max_iter = 500);

/// Unwrapped phase targets and projection coefficients for subproblem 4.
struct PositionTargets {
  std::vector<Eigen::VectorXd> psi;  // one vector of per-element phases per term
  std::vector<double> coeff;         // k cos(phi_u) or k sin(theta_u) per term
};

PositionTargets position_targets(const BlockBProblem& p, const BlockBState& s,
                                 const PenaltyState& pen);
/// sum_terms sum_i (psi_i - coeff x_i)^2 and its gradient.
double position_objective(const PositionTargets& t, const Eigen::VectorXd& x);
Eigen::VectorXd position_gradient(const PositionTargets& t, const Eigen::VectorXd& x);

/// Array-consistency part of the augmented objective as a function of x.
double array_penalty(const BlockBProblem& p, const BlockBState& s, const PenaltyState& pen,
                     const std::vector<double>& x);
Eigen::VectorXd array_penalty_gradient(const BlockBProblem& p, const BlockBState& s,
                                       const PenaltyState& pen, const std::vector<double>& x);

/// Closed-form minimizer of the phase fit under spacing linearized at the anchor
/// and aperture bounds. Throws InfeasibleError when v (N_t - 1) exceeds the aperture.
std::vector<double> solve_position_qp(const PositionTargets& t, const ArrayGeometry& anchor);

/// Subproblem 4: SCA position step with a backtracking safeguard on the augmented objective.
ArrayGeometry ma_position_update(const BlockBProblem& p, const BlockBState& s,
                                 const PenaltyState& pen);

/// Multiplier step when the max violation shrank to <= 0.9 of the previous one, else mu *= rho.
PenaltyState pdd_outer(const PenaltyState& state, const Eigen::VectorXd& violations,
                       double rho_mu = 5.0);

struct BlockBOptions {
  double epsilon = 1e-4;
  int max_outer = 50;
  double mu0 = 1.0;
  double rho_mu = 5.0;
  double violation_tol = 1e-5;
  int max_rgd = 500;
};

/// Initial point: theta = a(x), matched beams, g = q^H theta, t tight.
BlockBState initial_block_b_state(const BlockBProblem& p, const ArrayGeometry& g);

struct BlockBResult {
  BlockBState state;
  PenaltyState penalty;
  SolverReport report;
  /// Augmented objective after each subproblem: [start, after 1, 2, 3, 4] per sweep,
  /// all at the multipliers of that sweep.
  std::vector<std::array<double, 5>> sweep_objectives;
  double t1_true = 0.0;  // slots evaluated with q^H a(x), not the auxiliary g
  double t2_true = 0.0;
};

BlockBResult solve_block_b(const BlockBProblem& p, const ArrayGeometry& init,
                           const BlockBOptions& opt = {});

/// Uplink amplitude gains |alpha_u| |q^H a_ul(x)| at a Block-B state.
std::vector<double> effective_ul_gains(const BlockBProblem& p, const BlockBState& s);

/// Per-entry OTA noise variance with power aligned to equal weights:
/// eta = min_u gain_u sqrt(p_u) U, variance = noise_power / eta^2.
double aligned_noise_variance(const std::vector<double>& gains, const std::vector<double>& powers,
                              double noise_power);

struct PairRecord {
  int M = 0;
  int N = 0;
  bool feasible = false;
  double psi = 0.0;
  std::string reason;
  int iterations = 0;
};

struct HybridProblem {
  std::vector<int> M_set;
  std::vector<int> N_set;
  BlockBProblem link;
  ArrayGeometry initial_geometry;
  ComputeModel model;
  Budget budget;
  BoxBounds box;
  std::vector<int> participants;
  BlockAVars initial;
  /// Psi(M, N, 1/W, 1/b, sigma2): the objective to minimize.
  std::function<double(int, int, double, double, double)> psi;
  double epsilon = 1e-4;
  double trust_fraction = 0.2;
  int max_outer = 50;
  BlockBOptions block_b;
};

struct HybridResult {
  SolverReport report;
  int M = 0;
  int N = 0;
  double psi = 0.0;
  BlockAVars z;
  BlockBState block_b;
  double sigma2 = 0.0;
  double latency = 0.0;
  double energy = 0.0;
  std::vector<PairRecord> pairs;
};

/// Enumerates (M, N); throws InfeasibleError when every pair is infeasible.
HybridResult hybrid_sca_pdd(const HybridProblem& prob);

}  // namespace otafl
