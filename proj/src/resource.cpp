#include "otafl/resource.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "otafl/errors.hpp"

namespace otafl {

void PhasePlan::validate() const {
  if (pretrain_rounds < 0) throw ConfigError("pretrain rounds must be >= 0");
  if (finetune_rounds < 1) throw ConfigError("finetune rounds must be >= 1");
}

void ComputeModel::validate() const {
  if (!(flops_per_sample > 0.0 && server_cycle_factor > 0.0 && cpu_power_coeff > 0.0 &&
        energy_scale > 0.0 && energy_exponent_coeff > 0.0))
    throw ConfigError("compute model coefficients must be positive");
  for (double c : client_cycle_factor)
    if (!(c > 0.0)) throw ConfigError("client cycle factors must be positive");
  for (double k : client_power_coeff)
    if (!(k > 0.0)) throw ConfigError("client power coefficients must be positive");
}

void Budget::validate() const {
  if (!(latency_cap > 0.0 && energy_cap > 0.0 && payload_bits > 0.0 && max_power > 0.0))
    throw ConfigError("budget caps must be positive");
  if (max_users < 1) throw ConfigError("max_users must be >= 1");
  for (double p : avg_power_caps)
    if (!(p > 0.0)) throw ConfigError("average power caps must be positive");
}

double pretrain_latency(const PhasePlan& plan, std::span<const double> batches,
                        std::span<const double> freqs, const ComputeModel& model) {
  const auto m = static_cast<std::size_t>(plan.pretrain_rounds);
  if (batches.size() < m || freqs.size() < m)
    throw DomainError("pretrain_latency: fewer entries than pretraining rounds");
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (!(freqs[i] > 0.0)) throw DomainError("pretrain_latency: zero frequency");
    total += batches[i] * model.flops_per_sample / (freqs[i] * model.server_cycle_factor);
  }
  return total;
}

double round_latency(const RoundPlan& plan, std::span<const double> rates_dl,
                     std::span<const double> rates_ul, const Budget& budget,
                     const ComputeModel& model) {
  double worst = 0.0;
  for (std::size_t i = 0; i < plan.selected.size(); ++i) {
    if (!(rates_dl[i] > 0.0) || !(rates_ul[i] > 0.0))
      throw InfeasibleError("round_latency: selected user with zero rate", {"rate"});
    if (!(plan.cpu_freqs[i] > 0.0)) throw DomainError("round_latency: zero frequency");
    const auto u = static_cast<std::size_t>(plan.selected[i]);
    const double compute = plan.batch_sizes[i] * model.flops_per_sample /
                           (plan.cpu_freqs[i] * model.client_cycle_factor.at(u));
    const double t = budget.payload_bits / rates_dl[i] + compute +
                     budget.payload_bits / rates_ul[i];
    worst = std::max(worst, t);
  }
  return worst;
}

double client_compute_energy(double kappa, double freq, double batch, double flops_per_sample,
                             double cycle_factor) {
  return kappa * freq * freq * batch * flops_per_sample / cycle_factor;
}

double server_compute_energy(const ComputeModel& model, double batch, double freq) {
  return model.energy_scale * (batch * model.flops_per_sample / model.server_cycle_factor) *
         model.energy_exponent_coeff * model.cpu_power_coeff * freq * freq;
}

double finetune_round_energy(const RoundAccounting& r, double server_power,
                             const ComputeModel& model, const Budget& budget) {
  if (r.plan.selected.empty()) return 0.0;
  double t1 = 0.0, t2 = 0.0;
  for (std::size_t i = 0; i < r.plan.selected.size(); ++i) {
    t1 = std::max(t1, budget.payload_bits / r.rates_dl[i]);
    t2 = std::max(t2, budget.payload_bits / r.rates_ul[i]);
  }
  double e = server_power * t1;
  for (std::size_t i = 0; i < r.plan.selected.size(); ++i) {
    const auto u = static_cast<std::size_t>(r.plan.selected[i]);
    e += client_compute_energy(model.client_power_coeff.at(u), r.plan.cpu_freqs[i],
                               r.plan.batch_sizes[i], model.flops_per_sample,
                               model.client_cycle_factor.at(u));
    e += r.plan.powers[i] * t2;
  }
  return e;
}

double total_energy(std::span<const RoundPlan> pretrain, std::span<const RoundAccounting> finetune,
                    double server_power, const ComputeModel& model, const Budget& budget) {
  double e = 0.0;
  for (const auto& p : pretrain) e += server_compute_energy(model, p.server_batch, p.server_freq);
  for (const auto& r : finetune) e += finetune_round_energy(r, server_power, model, budget);
  return e;
}

PowerReport check_power(std::span<const RoundPlan> rounds, const Budget& budget, int num_users) {
  PowerReport rep;
  std::vector<double> sum(static_cast<std::size_t>(num_users), 0.0);
  for (std::size_t n = 0; n < rounds.size(); ++n) {
    const auto& r = rounds[n];
    for (std::size_t i = 0; i < r.selected.size(); ++i) {
      const int u = r.selected[i];
      const double p = r.powers[i];
      sum[static_cast<std::size_t>(u)] += p;
      if (p > budget.max_power || p < 0.0)
        rep.violations.push_back({u, "instantaneous", static_cast<int>(n), p});
    }
  }
  if (!rounds.empty()) {
    for (int u = 0; u < num_users; ++u) {
      const double mean = sum[static_cast<std::size_t>(u)] / static_cast<double>(rounds.size());
      const double cap = budget.avg_power_caps.empty()
                             ? budget.max_power
                             : budget.avg_power_caps.at(static_cast<std::size_t>(u));
      // relative slack absorbs the rounding of the running sum
      if (mean > cap * (1.0 + 1e-12)) rep.violations.push_back({u, "average", -1, mean});
    }
  }
  rep.ok = rep.violations.empty();
  return rep;
}

double tangent_inverse(double x_old, double x) {
  return 1.0 / x_old - (x - x_old) / (x_old * x_old);
}

double tangent_cubic(double x_old, double x) {
  return x_old * x_old * x_old + 3.0 * x_old * x_old * (x - x_old);
}

namespace {

double min_client_cycle(const BlockAContext& ctx) {
  double c = std::numeric_limits<double>::infinity();
  for (int u : ctx.participants)
    c = std::min(c, ctx.model.client_cycle_factor.at(static_cast<std::size_t>(u)));
  return std::isfinite(c) ? c : 1.0;
}

double client_round_energy(const BlockAContext& ctx, const BlockAVars& z) {
  double e = ctx.server_power * ctx.t1;
  for (std::size_t i = 0; i < ctx.participants.size(); ++i) {
    const auto u = static_cast<std::size_t>(ctx.participants[i]);
    e += client_compute_energy(ctx.model.client_power_coeff.at(u), z.client_freq, z.client_batch,
                               ctx.model.flops_per_sample, ctx.model.client_cycle_factor.at(u));
    e += ctx.powers[i] * ctx.t2;
  }
  return e;
}

using Vec4 = std::array<double, 4>;

Vec4 lower(const BoxBounds& b) { return {b.b_min, b.f_min, b.b_min, b.f_min}; }
Vec4 upper(const BoxBounds& b) { return {b.b_max, b.f_max, b.b_max, b.f_max}; }

BlockAVars from_unit(const BoxBounds& b, const Vec4& u) {
  const Vec4 lo = lower(b), hi = upper(b);
  Vec4 z;
  for (int i = 0; i < 4; ++i) z[i] = lo[i] + u[i] * (hi[i] - lo[i]);
  return {z[0], z[1], z[2], z[3]};
}

Vec4 to_unit(const BoxBounds& b, const BlockAVars& v) {
  const Vec4 lo = lower(b), hi = upper(b);
  const Vec4 z{v.server_batch, v.server_freq, v.client_batch, v.client_freq};
  Vec4 u;
  for (int i = 0; i < 4; ++i) u[i] = hi[i] > lo[i] ? (z[i] - lo[i]) / (hi[i] - lo[i]) : 0.0;
  return u;
}

struct ConstraintValues {
  double latency;  // normalized, <= 0 when satisfied
  double energy;
};

ConstraintValues linearized_constraints(const BlockAContext& ctx, const BlockAVars& z,
                                        const BlockAVars& z_old) {
  return {blockA_latency(ctx, z) / ctx.budget.latency_cap - 1.0,
          blockA_energy_linearized(ctx, z, z_old) / ctx.budget.energy_cap - 1.0};
}

ConstraintValues exact_constraints(const BlockAContext& ctx, const BlockAVars& z) {
  return {blockA_latency(ctx, z) / ctx.budget.latency_cap - 1.0,
          blockA_energy(ctx, z) / ctx.budget.energy_cap - 1.0};
}

bool satisfied(const ConstraintValues& c) { return c.latency <= 0.0 && c.energy <= 0.0; }

}  // namespace

double blockA_latency(const BlockAContext& ctx, const BlockAVars& z) {
  const double c_min = min_client_cycle(ctx);
  const double pre = ctx.phase.pretrain_rounds * z.server_batch * ctx.model.flops_per_sample /
                     (z.server_freq * ctx.model.server_cycle_factor);
  const double fine = ctx.phase.finetune_rounds *
                      (ctx.t1 + ctx.t2 +
                       z.client_batch * ctx.model.flops_per_sample / (z.client_freq * c_min));
  return pre + fine;
}

double blockA_energy(const BlockAContext& ctx, const BlockAVars& z) {
  return ctx.phase.pretrain_rounds * server_compute_energy(ctx.model, z.server_batch, z.server_freq) +
         ctx.phase.finetune_rounds * client_round_energy(ctx, z);
}

double blockA_energy_linearized(const BlockAContext& ctx, const BlockAVars& z,
                                const BlockAVars& z_old) {
  // server energy = (kappa_0 f^3) * (W C / (f c)); the cubic power term is linearized
  const double time = z.server_batch * ctx.model.flops_per_sample /
                      (z.server_freq * ctx.model.server_cycle_factor);
  const double power =
      ctx.model.cpu_power_coeff * tangent_cubic(z_old.server_freq, z.server_freq);
  const double server =
      ctx.model.energy_scale * ctx.model.energy_exponent_coeff * power * time;
  return ctx.phase.pretrain_rounds * server + ctx.phase.finetune_rounds * client_round_energy(ctx, z);
}

double blockA_objective(const BlockAContext& ctx, const BlockAVars& z) {
  return ctx.psi_of_inverse(1.0 / z.server_batch, 1.0 / z.client_batch);
}

double blockA_surrogate(const BlockAContext& ctx, const BlockAVars& z, const BlockAVars& z_old) {
  return ctx.psi_of_inverse(tangent_inverse(z_old.server_batch, z.server_batch),
                            tangent_inverse(z_old.client_batch, z.client_batch));
}

BlockAResult sca_surrogate_blockA(const BlockAVars& previous, const BlockAContext& ctx,
                                  double trust_fraction) {
  const BoxBounds& box = ctx.box;
  const Vec4 u_old = to_unit(box, previous);
  for (double v : u_old)
    if (v < -1e-12 || v > 1.0 + 1e-12) throw DomainError("blockA: previous plan outside box");

  Vec4 lo, hi;
  for (int i = 0; i < 4; ++i) {
    lo[i] = std::max(0.0, u_old[i] - trust_fraction);
    hi[i] = std::min(1.0, u_old[i] + trust_fraction);
  }
  auto project = [&](Vec4 u) {
    for (int i = 0; i < 4; ++i) u[i] = std::clamp(u[i], lo[i], hi[i]);
    return u;
  };

  const double s_old = blockA_surrogate(ctx, previous, previous);
  const double weight = 1e6 * std::max(1.0, std::abs(s_old));
  auto penalized = [&](const Vec4& u) {
    const BlockAVars z = from_unit(box, u);
    const ConstraintValues c = linearized_constraints(ctx, z, previous);
    // small margin keeps the penalized minimizer strictly inside the constraints
    const double vl = std::max(0.0, c.latency + 1e-6), ve = std::max(0.0, c.energy + 1e-6);
    return blockA_surrogate(ctx, z, previous) + weight * (vl * vl + ve * ve);
  };

  BlockAResult res;
  res.surrogate_at_old = s_old;
  Vec4 u = project(u_old);
  double f = penalized(u);
  double step = 1.0;
  const int max_iter = 300;
  int it = 0;
  for (; it < max_iter; ++it) {
    Vec4 grad;
    for (int i = 0; i < 4; ++i) {
      const double h = 1e-7;
      Vec4 up = u, dn = u;
      up[i] += h;
      dn[i] -= h;
      grad[i] = (penalized(up) - penalized(dn)) / (2.0 * h);
    }
    bool moved = false;
    step = std::min(1.0, step * 4.0);
    while (step > 1e-16) {
      Vec4 cand;
      for (int i = 0; i < 4; ++i) cand[i] = u[i] - step * grad[i];
      cand = project(cand);
      double dec = 0.0;
      for (int i = 0; i < 4; ++i) dec += grad[i] * (u[i] - cand[i]);
      const double fc = penalized(cand);
      if (dec > 0.0 && fc <= f - 1e-4 * dec) {
        double move = 0.0;
        for (int i = 0; i < 4; ++i) move = std::max(move, std::abs(cand[i] - u[i]));
        u = cand;
        f = fc;
        moved = move > 1e-13;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;
  }
  res.iterations = it + 1;

  // Pull back toward the previous plan until both the linearized and exact constraints hold.
  BlockAVars cand = u == u_old ? previous : from_unit(box, u);
  auto feasible = [&](const BlockAVars& z) {
    return satisfied(linearized_constraints(ctx, z, previous)) &&
           satisfied(exact_constraints(ctx, z));
  };
  if (!feasible(cand)) {
    if (!feasible(previous)) {
      res.z = cand;
      res.surrogate_at_new = blockA_surrogate(ctx, cand, previous);
      res.feasible = false;
      return res;
    }
    double lo_t = 0.0, hi_t = 1.0;
    for (int k = 0; k < 60; ++k) {
      const double mid = 0.5 * (lo_t + hi_t);
      Vec4 um;
      for (int i = 0; i < 4; ++i) um[i] = u_old[i] + mid * (u[i] - u_old[i]);
      if (feasible(from_unit(box, um))) lo_t = mid; else hi_t = mid;
    }
    Vec4 um;
    for (int i = 0; i < 4; ++i) um[i] = u_old[i] + lo_t * (u[i] - u_old[i]);
    cand = from_unit(box, um);
  }
  const double s_new = blockA_surrogate(ctx, cand, previous);
  if (s_new > s_old && feasible(previous)) {
    res.z = previous;
    res.surrogate_at_new = s_old;
  } else {
    res.z = cand;
    res.surrogate_at_new = s_new;
  }
  return res;
}

}  // namespace otafl
