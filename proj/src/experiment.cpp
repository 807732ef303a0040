#include "otafl/experiment.hpp"

#include <cmath>
#include <limits>

#include "otafl/errors.hpp"
#include "otafl/rng.hpp"

namespace otafl {

namespace {

double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }

TaskSpec build_task(const ExperimentConfig& cfg) {
  const auto& t = cfg.task;
  const int d = t.dimension;
  TaskSpec spec;
  spec.kind = t.kind == "logistic" ? TaskKind::kLogistic : TaskKind::kQuadratic;
  spec.dimension = d;
  spec.hessian_diag.resize(d);
  for (int i = 0; i < d; ++i) {
    const double frac = d > 1 ? static_cast<double>(i) / (d - 1) : 0.0;
    spec.hessian_diag(i) = t.hessian_min * std::pow(t.hessian_max / t.hessian_min, frac);
  }
  spec.sample_std = t.sample_std;
  spec.step_pre = t.step_pre;
  spec.step_fine = t.step_fine;
  spec.eval_samples = t.eval_samples;
  spec.eval_seed = cfg.experiment.seed;

  auto rng = make_rng(cfg.experiment.seed, Stream::kTaskSetup, 0, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto unit = [&] {
    Eigen::VectorXd v(d);
    for (int i = 0; i < d; ++i) v(i) = normal(rng);
    return Eigen::VectorXd(v / v.norm());
  };
  const Eigen::VectorXd dir = unit();
  spec.pretrain_center = Eigen::VectorXd::Zero(d);
  for (int u = 0; u < cfg.experiment.num_users; ++u)
    spec.finetune_centers.push_back(t.shift_norm * dir + t.user_spread * unit());
  // start on the far side of the pretraining optimum from the shift
  spec.init = -t.init_norm * dir;
  spec.logistic_truth = 2.0 * unit();
  spec.validate(cfg.experiment.num_users);
  return spec;
}

}  // namespace

double pathloss_gain(double carrier_hz, double distance_m, double exponent) {
  const double lambda = kSpeedOfLight / carrier_hz;
  const double fspl_1m = std::pow(lambda / (4.0 * kPi), 2.0);
  return fspl_1m * std::pow(distance_m, -exponent);
}

Scenario build_scenario(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto& w = cfg.wireless;
  const int U = cfg.experiment.num_users;
  Scenario s;
  s.fading.carrier_hz = w.carrier_hz;
  s.fading.rician_k_db = w.rician_k_db;
  s.fading.num_paths = w.num_paths;
  s.fading.p_los = w.p_los;
  s.fading.blockage_prob = w.blockage_prob;
  s.fading.shadowing_std_db = w.shadowing_std_db;
  s.fading.user_speed_mps = w.user_speed_mps;
  s.fading.rng_seed = cfg.experiment.seed;
  s.fading.validate();

  const double lambda = kSpeedOfLight / w.carrier_hz;
  const double n0 = dbm_to_watts(w.noise_density_dbm_hz);
  auto rng = make_rng(cfg.experiment.seed, Stream::kPlacement, 0, 0);
  std::uniform_real_distribution<double> dist(w.distance_min_m, w.distance_max_m);
  std::uniform_real_distribution<double> angle(w.angle_min_rad, w.angle_max_rad);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
  for (int u = 0; u < U; ++u) {
    const double d = dist(rng);
    const double a = angle(rng);
    const cd g = std::polar(std::sqrt(pathloss_gain(w.carrier_hz, d, w.pathloss_exponent)), phase(rng));
    LinkState l;
    l.ul_path_gain = g;
    l.dl_path_gain = g;
    l.aoa = a;
    l.aod = a;
    l.wavelength = lambda;
    l.ul_bandwidth = w.ul_bandwidth_hz;
    l.dl_bandwidth = w.dl_bandwidth_hz;
    l.ul_noise_density = n0;
    l.dl_noise_density = n0;
    l.server_power = w.server_power_w;
    l.validate();
    s.links.push_back(l);
    s.distances_m.push_back(d);
  }
  const double v = w.min_spacing_wavelengths * lambda;
  s.geometry = uniform_geometry(w.num_elements, v, v, w.aperture_wavelengths * lambda);

  const auto& b = cfg.budget;
  s.budget.latency_cap = b.latency_cap_s;
  s.budget.energy_cap = b.energy_cap_j;
  s.budget.payload_bits = b.payload_bits;
  s.budget.avg_power_caps.assign(static_cast<std::size_t>(U), b.avg_power_cap_w);
  s.budget.max_power = b.pmax_w;
  s.budget.max_users = cfg.policy.k;
  s.budget.validate();

  const auto& c = cfg.compute;
  s.model.flops_per_sample = c.flops_per_sample;
  s.model.server_cycle_factor = c.server_cycle_factor;
  s.model.client_cycle_factor.assign(static_cast<std::size_t>(U), c.client_cycle_factor);
  s.model.cpu_power_coeff = c.cpu_power_coeff;
  s.model.client_power_coeff.assign(static_cast<std::size_t>(U), c.client_power_coeff);
  s.model.energy_scale = c.energy_scale;
  s.model.energy_exponent_coeff = c.energy_exponent_coeff;
  s.model.validate();

  s.task = build_task(cfg);

  s.policy.kind = policy_from_string(cfg.policy.kind);
  s.policy.k = cfg.policy.k;
  s.policy.gibbs_temperature = cfg.policy.gibbs_temperature;
  s.policy.fairness_weight = cfg.policy.fairness_weight;
  s.policy.validate(U);

  s.block_b.epsilon = cfg.solver.epsilon;
  s.block_b.max_outer = cfg.solver.max_outer;
  s.block_b.mu0 = cfg.solver.mu0;
  s.block_b.rho_mu = cfg.solver.rho_mu;
  s.block_b.violation_tol = cfg.solver.violation_tol;
  s.block_b.max_rgd = cfg.solver.max_rgd;
  return s;
}

RunResult run_experiment(const ExperimentConfig& cfg) {
  const Scenario sc = build_scenario(cfg);
  const Task task(sc.task);
  const int U = cfg.experiment.num_users;
  const int M = cfg.experiment.pretrain_rounds;
  const int N = cfg.experiment.finetune_rounds;
  const std::uint64_t seed = cfg.experiment.seed;
  const auto& cc = cfg.compute;

  RunResult res;
  res.summary.policy = cfg.policy.kind;
  res.summary.k = cfg.policy.k;
  res.summary.seed = seed;

  ModelState state;
  state.params = sc.task.init;
  state.phase = Phase::kPretrain;
  double latency_total = 0.0, energy_total = 0.0;

  auto over_budget = [&]() -> std::optional<std::string> {
    if (latency_total > sc.budget.latency_cap)
      return "latency budget exceeded: " + format_double(latency_total) + " s > " +
             format_double(sc.budget.latency_cap) + " s";
    if (energy_total > sc.budget.energy_cap)
      return "energy budget exceeded: " + format_double(energy_total) + " J > " +
             format_double(sc.budget.energy_cap) + " J";
    return std::nullopt;
  };

  for (int m = 0; m < M; ++m) {
    auto rng = make_rng(seed, Stream::kPretrain, static_cast<std::uint64_t>(m), 0);
    state = pretrain_step(state, task, static_cast<int>(cc.server_batch), rng);
    const double lat = cc.server_batch * sc.model.flops_per_sample /
                       (cc.server_freq_hz * sc.model.server_cycle_factor);
    const double en = server_compute_energy(sc.model, cc.server_batch, cc.server_freq_hz);
    latency_total += lat;
    energy_total += en;
    RoundRecord r;
    r.round = m;
    r.phase = "pretrain";
    r.latency_s = lat;
    r.energy_j = en;
    r.loss = task.finetune_loss(state.params);
    r.ppl = perplexity(r.loss);
    res.rounds.push_back(r);
    res.trajectory.push_back(state.params);
    if ((res.violation = over_budget())) break;
  }

  ParticipationLedger ledger(U);
  std::vector<RoundPlan> plans;
  std::vector<double> snrs;
  ArrayGeometry geometry = sc.geometry;
  state.phase = Phase::kFinetune;
  const double noise_ul = cfg.wireless.ul_bandwidth_hz * sc.links.front().ul_noise_density;
  const MismatchMode mode = cfg.ota.mismatch_mode == "ideal" ? MismatchMode::kIdeal : MismatchMode::kModeled;

  for (int n = 0; n < N && !res.violation; ++n) {
    RoundContext ctx;
    ctx.fading = sc.fading;
    ctx.links = sc.links;
    ctx.channel = draw_round_channel(sc.fading, sc.links, geometry, n);
    ctx.geometry = geometry;
    ctx.budget = sc.budget;
    ctx.model = sc.model;
    ctx.batch_sizes.assign(static_cast<std::size_t>(U), cc.client_batch);
    ctx.cpu_freqs.assign(static_cast<std::size_t>(U), cc.client_freq_hz);
    ctx.block_b = sc.block_b;

    RoundDecision d;
    if (sc.policy.kind == PolicyKind::kScaPdd) {
      d = select_sca_pdd(ctx, ledger, sc.policy.k, sc.policy.fairness_weight);
    } else {
      auto grng = make_rng(seed, Stream::kGibbs, static_cast<std::uint64_t>(n), 0);
      d = select_baseline(sc.policy.kind, ctx, sc.policy.k, sc.policy.gibbs_temperature, grng);
    }
    if (d.fallback) ++res.fallbacks;
    geometry = d.geometry;
    res.geometries.push_back(geometry.positions);

    // local gradients on the current model
    std::vector<Eigen::VectorXd> grads;
    std::vector<double> batches, gains, dl_gains;
    std::vector<Eigen::VectorXcd> hs;
    for (int u : d.selected) {
      const auto i = static_cast<std::size_t>(u);
      auto brng = make_rng(seed, Stream::kBatch, static_cast<std::uint64_t>(n), i);
      grads.push_back(task.gradient(state.params, task.draw_user(u, static_cast<int>(cc.client_batch), brng)));
      batches.push_back(cc.client_batch);
      gains.push_back(std::abs(d.q.dot(d.channel.users[i].ul)));
      dl_gains.push_back(std::abs(d.channel.users[i].dl.dot(d.w)));
      hs.push_back(d.channel.users[i].ul);
    }
    const std::vector<double> weights = batch_weights(batches);

    OTAOutcome out;
    if (d.digital) {
      out.received = digital_aggregate(grads, weights);
      out.mismatch = Eigen::VectorXd::Zero(out.received.size());
      out.noise = out.mismatch;
    } else {
      double eta = cfg.ota.receive_scale > 0.0 ? cfg.ota.receive_scale
                   : d.eta > 0.0             ? d.eta
                                             : default_receive_scale(gains, d.powers, weights);
      OTAConfig oc;
      oc.receive_scale = eta;
      oc.noise_variance = cfg.ota.noise_scale * noise_ul / (eta * eta);
      oc.mismatch_mode = mode;
      auto nrng = make_rng(seed, Stream::kOtaNoise, static_cast<std::uint64_t>(n), 0);
      out = ota_aggregate(grads, gains, d.powers, weights, oc, nrng);
    }
    state = finetune_round(state, task, out);

    // accounting
    RoundAccounting acc;
    acc.plan.selected = d.selected;
    acc.plan.powers = d.powers;
    acc.plan.batch_sizes = batches;
    acc.plan.cpu_freqs.assign(d.selected.size(), cc.client_freq_hz);
    const double k = static_cast<double>(d.selected.size());
    for (std::size_t i = 0; i < d.selected.size(); ++i) {
      const double bdl = cfg.wireless.dl_bandwidth_hz;
      acc.rates_dl.push_back(shannon_rate(
          bdl, dl_gains[i] * dl_gains[i] * cfg.wireless.server_power_w / (bdl * sc.links.front().dl_noise_density)));
      if (d.digital) {
        const double b = cfg.wireless.ul_bandwidth_hz / k;
        acc.rates_ul.push_back(shannon_rate(
            b, hs[i].squaredNorm() * d.powers[i] / (b * sc.links.front().ul_noise_density)));
      } else {
        acc.rates_ul.push_back(shannon_rate(cfg.wireless.ul_bandwidth_hz,
                                            gains[i] * gains[i] * d.powers[i] / noise_ul));
      }
    }
    const double snr = post_combining_snr(hs, d.q, d.powers, noise_ul);
    RoundRecord r;
    r.round = M + n;
    r.phase = "finetune";
    r.selected = d.selected;
    r.snr_db = 10.0 * std::log10(snr);
    try {
      r.latency_s = round_latency(acc.plan, acc.rates_dl, acc.rates_ul, sc.budget, sc.model);
      r.energy_j = finetune_round_energy(acc, cfg.wireless.server_power_w, sc.model, sc.budget);
    } catch (const InfeasibleError& e) {
      res.violation = std::string("round ") + std::to_string(M + n) + ": " + e.what();
      r.latency_s = std::numeric_limits<double>::infinity();
      r.energy_j = std::numeric_limits<double>::infinity();
    }
    r.loss = task.finetune_loss(state.params);
    r.ppl = perplexity(r.loss);
    r.mismatch_norm = out.mismatch.norm();
    ledger.record(d.selected);
    const std::vector<double> shares = participation_shares(ledger.counts);
    r.jain_so_far = jain_index(shares);
    r.gini_so_far = gini_coefficient(shares);
    latency_total += r.latency_s;
    energy_total += r.energy_j;
    snrs.push_back(snr);
    plans.push_back(acc.plan);
    res.rounds.push_back(r);
    res.trajectory.push_back(state.params);

    for (std::size_t i = 0; i < d.powers.size(); ++i)
      if (d.powers[i] > sc.budget.max_power * (1.0 + 1e-12))
        res.violation = "instantaneous power exceeded by user " + std::to_string(d.selected[i]);
    if (!res.violation) res.violation = over_budget();
  }
  if (!res.violation && !plans.empty()) {
    const PowerReport pr = check_power(plans, sc.budget, U);
    if (!pr.ok)
      res.violation = "average power exceeded by user " + std::to_string(pr.violations.front().user);
  }

  res.counts = ledger.counts;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (ledger.total_selected > 0) {
    const std::vector<double> shares = participation_shares(ledger.counts);
    res.summary.jain_r30 = jain_index(shares);
    res.summary.gini_r30 = gini_coefficient(shares);
  } else {
    res.summary.jain_r30 = nan;
    res.summary.gini_r30 = nan;
  }
  res.summary.ppl_r30 = res.rounds.empty() ? perplexity(task.finetune_loss(state.params)) : res.rounds.back().ppl;
  res.summary.avg_snr_db = snrs.empty() ? nan : avg_snr_db(snrs);
  res.summary.total_latency_s = latency_total;
  res.summary.total_energy_j = energy_total;
  return res;
}

}  // namespace otafl
