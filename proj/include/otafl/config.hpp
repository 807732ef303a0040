#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace otafl {

struct ExperimentSection {
  std::uint64_t seed = 0;
  int num_users = 10;
  int pretrain_rounds = 5;    // M
  int finetune_rounds = 30;   // N
  std::string output_dir = "run";
};

struct WirelessSection {
  double carrier_hz = 28e9;
  double ul_bandwidth_hz = 20e6;
  double dl_bandwidth_hz = 20e6;
  double noise_density_dbm_hz = -174.0;
  double rician_k_db = 8.0;
  int num_paths = 3;
  double p_los = 0.8;
  double blockage_prob = 0.03;
  double shadowing_std_db = 4.0;
  double user_speed_mps = 0.2;
  int num_elements = 16;
  double min_spacing_wavelengths = 0.5;
  double aperture_wavelengths = 8.0;
  double server_power_w = 1.0;
  double distance_min_m = 50.0;
  double distance_max_m = 200.0;
  double pathloss_exponent = 2.5;
  double angle_min_rad = 0.5235987755982988;  // pi/6
  double angle_max_rad = 2.6179938779914944;  // 5 pi/6
};

struct TaskSection {
  std::string kind = "quadratic";
  int dimension = 10;
  double hessian_min = 0.5;
  double hessian_max = 2.0;
  double sample_std = 1.0;
  double shift_norm = 1.0;        // distance between pretraining and fine-tuning centers
  double user_spread = 0.3;       // per-user offset around the fine-tuning center
  double init_norm = 3.0;
  double step_pre = 0.1;
  double step_fine = 0.1;
  int eval_samples = 2000;
};

struct PolicySection {
  std::string kind = "sca_pdd";
  int k = 1;
  double gibbs_temperature = 1.0;
  double fairness_weight = 1.0;
};

struct OtaSection {
  std::string mismatch_mode = "modeled";
  double noise_scale = 1.0;       // multiplies B N0 / eta^2
  double receive_scale = 0.0;     // 0 picks the per-policy rule
};

struct ComputeSection {
  double flops_per_sample = 1e7;
  double server_cycle_factor = 1.0;
  double client_cycle_factor = 1.0;
  double cpu_power_coeff = 1e-28;
  double client_power_coeff = 1e-28;
  double energy_scale = 1.0;
  double energy_exponent_coeff = 1.0;
  double server_batch = 64.0;
  double server_freq_hz = 2e9;
  double client_batch = 32.0;
  double client_freq_hz = 1e9;
};

struct BudgetSection {
  double latency_cap_s = 1e6;
  double energy_cap_j = 1e6;
  double payload_bits = 1e6;
  double pmax_w = 0.2;
  double avg_power_cap_w = 0.2;
};

struct SolverSection {
  double epsilon = 1e-4;
  double violation_tol = 1e-5;
  int max_outer = 50;
  double mu0 = 1.0;
  double rho_mu = 5.0;
  int max_rgd = 500;
  int greedy_grid_points = 33;
};

struct ExperimentConfig {
  ExperimentSection experiment;
  WirelessSection wireless;
  TaskSection task;
  PolicySection policy;
  OtaSection ota;
  ComputeSection compute;
  BudgetSection budget;
  SolverSection solver;

  /// Throws ConfigError naming every offending key.
  void validate() const;
};

/// Missing keys keep their defaults; unknown keys throw ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::ordered_json config_to_json(const ExperimentConfig& c);
ExperimentConfig load_config(const std::string& path);

}  // namespace otafl
