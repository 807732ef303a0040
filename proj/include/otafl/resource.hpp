#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace otafl {

struct PhasePlan {
  int pretrain_rounds = 0;  // M
  int finetune_rounds = 1;  // N
  void validate() const;
};

struct ComputeModel {
  double flops_per_sample = 1e6;             // C
  double server_cycle_factor = 1.0;          // c
  std::vector<double> client_cycle_factor;   // c_u
  double cpu_power_coeff = 1e-28;            // kappa_0
  std::vector<double> client_power_coeff;    // kappa_u
  double energy_scale = 1.0;                 // eta_E
  double energy_exponent_coeff = 1.0;        // phi_E
  void validate() const;
};

/// One round of decisions. Pretraining rounds use server_batch/server_freq only.
struct RoundPlan {
  std::vector<int> selected;
  std::vector<double> powers;       // W, aligned with selected
  std::vector<double> batch_sizes;  // samples, aligned with selected
  std::vector<double> cpu_freqs;    // Hz, aligned with selected
  double server_batch = 0.0;
  double server_freq = 0.0;
};

struct Budget {
  double latency_cap = 1e9;  // L_max, s
  double energy_cap = 1e9;   // Q_max, J
  double payload_bits = 1e6; // beta
  std::vector<double> avg_power_caps;  // p_u^ave
  double max_power = 0.2;    // P_a
  int max_users = 1;         // U_max
  void validate() const;
};

struct BoxBounds {
  double b_min = 1.0;
  double b_max = 512.0;
  double f_min = 0.1e9;
  double f_max = 3e9;
};

/// sum_m W C / (f c).
double pretrain_latency(const PhasePlan& plan, std::span<const double> batches,
                        std::span<const double> freqs, const ComputeModel& model);

/// max_u (beta/R_dl + b C/(f c_u) + beta/R_ul) over the selected users.
double round_latency(const RoundPlan& plan, std::span<const double> rates_dl,
                     std::span<const double> rates_ul, const Budget& budget,
                     const ComputeModel& model);

/// kappa_u f^2 b C / c_u.
double client_compute_energy(double kappa, double freq, double batch, double flops_per_sample,
                             double cycle_factor);

/// eta_E phi_E kappa_0 f^2 W C / c.
double server_compute_energy(const ComputeModel& model, double batch, double freq);

struct RoundAccounting {
  RoundPlan plan;
  std::vector<double> rates_dl;
  std::vector<double> rates_ul;
};

/// Downlink P t1 plus client compute and transmit p_u t2 for one round.
double finetune_round_energy(const RoundAccounting& r, double server_power,
                             const ComputeModel& model, const Budget& budget);

double total_energy(std::span<const RoundPlan> pretrain, std::span<const RoundAccounting> finetune,
                    double server_power, const ComputeModel& model, const Budget& budget);

struct PowerViolation {
  int user = 0;
  std::string kind;  // "instantaneous" | "average"
  int round = -1;    // -1 for the average constraint
  double value = 0.0;
};

struct PowerReport {
  bool ok = true;
  std::vector<PowerViolation> violations;
};

PowerReport check_power(std::span<const RoundPlan> rounds, const Budget& budget, int num_users);

/// Tangent of 1/x at x_old: 1/x_old - (x - x_old)/x_old^2.
double tangent_inverse(double x_old, double x);

/// Tangent of x^3 at x_old.
double tangent_cubic(double x_old, double x);

/// Continuous variables of Block A.
struct BlockAVars {
  double server_batch = 1.0;  // W
  double server_freq = 1e9;   // f
  double client_batch = 1.0;  // b
  double client_freq = 1e9;   // f_u (common to the round's clients)
};

struct BlockAContext {
  PhasePlan phase;
  ComputeModel model;
  Budget budget;
  BoxBounds box;
  double t1 = 0.0;  // downlink slot from Block B
  double t2 = 0.0;  // uplink slot from Block B
  double server_power = 1.0;
  std::vector<int> participants;   // users active in a fine-tuning round
  std::vector<double> powers;      // their transmit powers
  /// Objective in terms of (1/W, 1/b); must be nondecreasing in both.
  std::function<double(double, double)> psi_of_inverse;
};

double blockA_latency(const BlockAContext& ctx, const BlockAVars& z);
double blockA_energy(const BlockAContext& ctx, const BlockAVars& z);
/// Energy with kappa_0 f^3 replaced by its tangent at z_old.
double blockA_energy_linearized(const BlockAContext& ctx, const BlockAVars& z,
                                const BlockAVars& z_old);
double blockA_objective(const BlockAContext& ctx, const BlockAVars& z);
/// Objective with 1/W and 1/b replaced by their tangents at z_old.
double blockA_surrogate(const BlockAContext& ctx, const BlockAVars& z, const BlockAVars& z_old);

struct BlockAResult {
  BlockAVars z;
  double surrogate_at_old = 0.0;
  double surrogate_at_new = 0.0;
  int iterations = 0;
  bool feasible = true;  // false: no point of the trust region meets the constraints
};

/// One SCA step of Block A. trust_fraction scales the per-coordinate box width.
/// When neither the previous plan nor the surrogate solution is feasible the result
/// carries feasible = false and the least-violating point found.
BlockAResult sca_surrogate_blockA(const BlockAVars& previous, const BlockAContext& ctx,
                                  double trust_fraction = 0.2);

}  // namespace otafl
