#include "otafl/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "otafl/errors.hpp"

namespace otafl {

namespace {

// One field list per section drives parsing, serialization and the unknown-key check.
template <class F> void fields(ExperimentSection& s, F&& f) {
  f("seed", s.seed);
  f("num_users", s.num_users);
  f("pretrain_rounds", s.pretrain_rounds);
  f("finetune_rounds", s.finetune_rounds);
  f("output_dir", s.output_dir);
}

template <class F> void fields(WirelessSection& s, F&& f) {
  f("carrier_hz", s.carrier_hz);
  f("ul_bandwidth_hz", s.ul_bandwidth_hz);
  f("dl_bandwidth_hz", s.dl_bandwidth_hz);
  f("noise_density_dbm_hz", s.noise_density_dbm_hz);
  f("rician_k_db", s.rician_k_db);
  f("num_paths", s.num_paths);
  f("p_los", s.p_los);
  f("blockage_prob", s.blockage_prob);
  f("shadowing_std_db", s.shadowing_std_db);
  f("user_speed_mps", s.user_speed_mps);
  f("num_elements", s.num_elements);
  f("min_spacing_wavelengths", s.min_spacing_wavelengths);
  f("aperture_wavelengths", s.aperture_wavelengths);
  f("server_power_w", s.server_power_w);
  f("distance_min_m", s.distance_min_m);
  f("distance_max_m", s.distance_max_m);
  f("pathloss_exponent", s.pathloss_exponent);
  f("angle_min_rad", s.angle_min_rad);
  f("angle_max_rad", s.angle_max_rad);
}

template <class F> void fields(TaskSection& s, F&& f) {
  f("kind", s.kind);
  f("dimension", s.dimension);
  f("hessian_min", s.hessian_min);
  f("hessian_max", s.hessian_max);
  f("sample_std", s.sample_std);
  f("shift_norm", s.shift_norm);
  f("user_spread", s.user_spread);
  f("init_norm", s.init_norm);
  f("step_pre", s.step_pre);
  f("step_fine", s.step_fine);
  f("eval_samples", s.eval_samples);
}

template <class F> void fields(PolicySection& s, F&& f) {
  f("kind", s.kind);
  f("k", s.k);
  f("gibbs_temperature", s.gibbs_temperature);
  f("fairness_weight", s.fairness_weight);
}

template <class F> void fields(OtaSection& s, F&& f) {
  f("mismatch_mode", s.mismatch_mode);
  f("noise_scale", s.noise_scale);
  f("receive_scale", s.receive_scale);
}

template <class F> void fields(ComputeSection& s, F&& f) {
  f("flops_per_sample", s.flops_per_sample);
  f("server_cycle_factor", s.server_cycle_factor);
  f("client_cycle_factor", s.client_cycle_factor);
  f("cpu_power_coeff", s.cpu_power_coeff);
  f("client_power_coeff", s.client_power_coeff);
  f("energy_scale", s.energy_scale);
  f("energy_exponent_coeff", s.energy_exponent_coeff);
  f("server_batch", s.server_batch);
  f("server_freq_hz", s.server_freq_hz);
  f("client_batch", s.client_batch);
  f("client_freq_hz", s.client_freq_hz);
}

template <class F> void fields(BudgetSection& s, F&& f) {
  f("latency_cap_s", s.latency_cap_s);
  f("energy_cap_j", s.energy_cap_j);
  f("payload_bits", s.payload_bits);
  f("pmax_w", s.pmax_w);
  f("avg_power_cap_w", s.avg_power_cap_w);
}

template <class F> void fields(SolverSection& s, F&& f) {
  f("epsilon", s.epsilon);
  f("violation_tol", s.violation_tol);
  f("max_outer", s.max_outer);
  f("mu0", s.mu0);
  f("rho_mu", s.rho_mu);
  f("max_rgd", s.max_rgd);
  f("greedy_grid_points", s.greedy_grid_points);
}

template <class F> void sections(ExperimentConfig& c, F&& f) {
  f("experiment", c.experiment);
  f("wireless", c.wireless);
  f("task", c.task);
  f("policy", c.policy);
  f("ota", c.ota);
  f("compute", c.compute);
  f("budget", c.budget);
  f("solver", c.solver);
}

template <class T> void read_value(const nlohmann::json& j, const std::string& key, T& out) {
  try {
    out = j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config: wrong type for '" + key + "'", {key});
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(out)) throw ConfigError("config: '" + key + "' must be finite", {key});
  }
}

}  // namespace

ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object", {});
  ExperimentConfig c;
  std::vector<std::string> unknown;
  std::set<std::string> known_sections;
  sections(c, [&](const std::string& name, auto& section) {
    known_sections.insert(name);
    if (!j.contains(name)) return;
    const auto& sj = j.at(name);
    if (!sj.is_object()) throw ConfigError("config: section '" + name + "' must be an object", {name});
    std::set<std::string> known;
    fields(section, [&](const std::string& key, auto& member) {
      known.insert(key);
      if (sj.contains(key)) read_value(sj.at(key), name + "." + key, member);
    });
    for (const auto& [key, _] : sj.items())
      if (!known.count(key)) unknown.push_back(name + "." + key);
  });
  for (const auto& [key, _] : j.items())
    if (!known_sections.count(key)) unknown.push_back(key);
  if (!unknown.empty()) {
    std::string msg = "config: unknown keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg, unknown);
  }
  return c;
}

nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  sections(c, [&](const std::string& name, auto& section) {
    nlohmann::ordered_json sj = nlohmann::ordered_json::object();
    fields(section, [&](const std::string& key, auto& member) { sj[key] = member; });
    out[name] = std::move(sj);
  });
  return out;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read '" + path + "'", {"path"});
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: parse error: ") + e.what(), {"path"});
  }
  ExperimentConfig c = config_from_json(j);
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  std::vector<std::string> bad;
  std::ostringstream why;
  auto need = [&](bool ok, const std::string& key, const std::string& rule) {
    if (!ok) {
      bad.push_back(key);
      why << " " << key << " (" << rule << ");";
    }
  };
  const auto& e = experiment;
  need(e.num_users >= 1, "experiment.num_users", ">= 1");
  need(e.pretrain_rounds >= 0, "experiment.pretrain_rounds", ">= 0");
  need(e.finetune_rounds >= 0, "experiment.finetune_rounds", ">= 0");
  need(!e.output_dir.empty(), "experiment.output_dir", "non-empty");

  const auto& w = wireless;
  need(w.carrier_hz > 0, "wireless.carrier_hz", "> 0");
  need(w.ul_bandwidth_hz > 0, "wireless.ul_bandwidth_hz", "> 0");
  need(w.dl_bandwidth_hz > 0, "wireless.dl_bandwidth_hz", "> 0");
  need(w.num_paths >= 1, "wireless.num_paths", ">= 1");
  need(w.p_los >= 0 && w.p_los <= 1, "wireless.p_los", "in [0, 1]");
  need(w.blockage_prob >= 0 && w.blockage_prob <= 1, "wireless.blockage_prob", "in [0, 1]");
  need(w.shadowing_std_db >= 0, "wireless.shadowing_std_db", ">= 0");
  need(w.user_speed_mps >= 0, "wireless.user_speed_mps", ">= 0");
  need(w.num_elements >= 1, "wireless.num_elements", ">= 1");
  need(w.min_spacing_wavelengths > 0, "wireless.min_spacing_wavelengths", "> 0");
  need(w.aperture_wavelengths >= (w.num_elements - 1) * w.min_spacing_wavelengths,
       "wireless.aperture_wavelengths", ">= (num_elements - 1) * min_spacing_wavelengths");
  need(w.server_power_w > 0, "wireless.server_power_w", "> 0");
  need(w.distance_min_m > 0 && w.distance_max_m >= w.distance_min_m, "wireless.distance_min_m",
       "0 < distance_min_m <= distance_max_m");
  need(w.pathloss_exponent > 0, "wireless.pathloss_exponent", "> 0");
  need(w.angle_min_rad >= 0 && w.angle_max_rad <= 3.141592653589794 &&
           w.angle_min_rad <= w.angle_max_rad,
       "wireless.angle_min_rad", "0 <= angle_min_rad <= angle_max_rad <= pi");

  const auto& t = task;
  need(t.kind == "quadratic" || t.kind == "logistic", "task.kind", "quadratic or logistic");
  need(t.dimension >= 1, "task.dimension", ">= 1");
  need(t.hessian_min > 0 && t.hessian_max >= t.hessian_min, "task.hessian_min",
       "0 < hessian_min <= hessian_max");
  need(t.sample_std >= 0, "task.sample_std", ">= 0");
  need(t.shift_norm >= 0, "task.shift_norm", ">= 0");
  need(t.user_spread >= 0, "task.user_spread", ">= 0");
  need(t.init_norm >= 0, "task.init_norm", ">= 0");
  need(t.step_pre > 0, "task.step_pre", "> 0");
  need(t.step_fine > 0, "task.step_fine", "> 0");
  need(t.eval_samples >= 1, "task.eval_samples", ">= 1");

  const auto& p = policy;
  static const std::set<std::string> kinds = {"digital_fedavg", "topk_snr", "gibbs",
                                              "ota_nopc",       "ma_greedy", "sca_pdd"};
  need(kinds.count(p.kind) == 1, "policy.kind",
       "one of digital_fedavg, topk_snr, gibbs, ota_nopc, ma_greedy, sca_pdd");
  need(p.k >= 1 && p.k <= e.num_users, "policy.k", "1 <= k <= num_users");
  need(p.gibbs_temperature > 0, "policy.gibbs_temperature", "> 0");
  need(p.fairness_weight >= 0, "policy.fairness_weight", ">= 0");

  need(ota.mismatch_mode == "modeled" || ota.mismatch_mode == "ideal", "ota.mismatch_mode",
       "modeled or ideal");
  need(ota.noise_scale >= 0, "ota.noise_scale", ">= 0");
  need(ota.receive_scale >= 0, "ota.receive_scale", ">= 0");

  const auto& c = compute;
  need(c.flops_per_sample > 0, "compute.flops_per_sample", "> 0");
  need(c.server_cycle_factor > 0, "compute.server_cycle_factor", "> 0");
  need(c.client_cycle_factor > 0, "compute.client_cycle_factor", "> 0");
  need(c.cpu_power_coeff > 0, "compute.cpu_power_coeff", "> 0");
  need(c.client_power_coeff > 0, "compute.client_power_coeff", "> 0");
  need(c.energy_scale > 0, "compute.energy_scale", "> 0");
  need(c.energy_exponent_coeff > 0, "compute.energy_exponent_coeff", "> 0");
  need(c.server_batch >= 1, "compute.server_batch", ">= 1");
  need(c.server_freq_hz > 0, "compute.server_freq_hz", "> 0");
  need(c.client_batch >= 1, "compute.client_batch", ">= 1");
  need(c.client_freq_hz > 0, "compute.client_freq_hz", "> 0");

  const auto& b = budget;
  need(b.latency_cap_s > 0, "budget.latency_cap_s", "> 0");
  need(b.energy_cap_j > 0, "budget.energy_cap_j", "> 0");
  need(b.payload_bits > 0, "budget.payload_bits", "> 0");
  need(b.pmax_w > 0, "budget.pmax_w", "> 0");
  need(b.avg_power_cap_w > 0, "budget.avg_power_cap_w", "> 0");

  const auto& s = solver;
  need(s.epsilon > 0, "solver.epsilon", "> 0");
  need(s.violation_tol > 0, "solver.violation_tol", "> 0");
  need(s.max_outer >= 1, "solver.max_outer", ">= 1");
  need(s.mu0 > 0, "solver.mu0", "> 0");
  need(s.rho_mu > 1, "solver.rho_mu", "> 1");
  need(s.max_rgd >= 1, "solver.max_rgd", ">= 1");
  need(s.greedy_grid_points >= 2, "solver.greedy_grid_points", ">= 2");

  if (!bad.empty()) throw ConfigError("config validation failed:" + why.str(), bad);
}

}  // namespace otafl
