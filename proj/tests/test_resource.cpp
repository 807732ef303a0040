#include <cmath>
#include <random>

#include "doctest.h"
#include "otafl/errors.hpp"
#include "otafl/resource.hpp"

using namespace otafl;

namespace {

ComputeModel model(int users) {
  ComputeModel m;
  m.flops_per_sample = 1e6;
  m.server_cycle_factor = 1.0;
  m.client_cycle_factor.assign(static_cast<std::size_t>(users), 1.0);
  m.cpu_power_coeff = 1e-28;
  m.client_power_coeff.assign(static_cast<std::size_t>(users), 1e-28);
  return m;
}

BlockAContext context(double latency_cap, double energy_cap) {
  BlockAContext ctx;
  ctx.phase = {3, 5};
  ctx.model = model(2);
  ctx.budget.latency_cap = latency_cap;
  ctx.budget.energy_cap = energy_cap;
  ctx.t1 = 0.01;
  ctx.t2 = 0.02;
  ctx.server_power = 1.0;
  ctx.participants = {0, 1};
  ctx.powers = {0.2, 0.1};
  ctx.psi_of_inverse = [](double inv_w, double inv_b) { return 3.0 * inv_w + 2.0 * inv_b; };
  return ctx;
}

}  // namespace

TEST_CASE("pretraining latency examples") {
  const auto m = model(1);
  const std::vector<double> w{100.0}, f{1e9};
  CHECK(pretrain_latency({0, 1}, {}, {}, m) == 0.0);
  CHECK(pretrain_latency({1, 1}, w, f, m) == doctest::Approx(0.1));
  const std::vector<double> w3{100, 50, 20}, f3{1e9, 2e9, 5e8};
  const std::vector<double> f3x2{2e9, 4e9, 1e9};
  CHECK(pretrain_latency({3, 1}, w3, f3x2, m) == doctest::Approx(0.5 * pretrain_latency({3, 1}, w3, f3, m)));
  const std::vector<double> zero{0.0};
  CHECK_THROWS_AS(pretrain_latency({1, 1}, w, zero, m), DomainError);
}

TEST_CASE("round latency is the slowest selected user") {
  auto m = model(2);
  Budget b;
  b.payload_bits = 1e6;
  RoundPlan p;
  p.selected = {0};
  p.batch_sizes = {200};
  p.cpu_freqs = {1e9};
  // 0.1 s downlink + 0.2 s compute + 0.3 s uplink
  CHECK(round_latency(p, std::vector<double>{1e7}, std::vector<double>{1e6 / 0.3}, b, m) == doctest::Approx(0.6));
  p.selected = {0, 1};
  p.batch_sizes = {0, 0};
  p.cpu_freqs = {1e9, 1e9};
  CHECK(round_latency(p, std::vector<double>{1e7, 1e7}, std::vector<double>{1e7, 1e6 / 0.2}, b, m) ==
        doctest::Approx(0.3));
  CHECK_THROWS_AS(round_latency(p, std::vector<double>{1e7, 0.0}, std::vector<double>{1e7, 1e7}, b, m),
                  InfeasibleError);
}

TEST_CASE("energy examples") {
  CHECK(client_compute_energy(1e-27, 1e9, 1000.0, 1e6, 1.0) == doctest::Approx(1.0));
  auto m = model(1);
  m.client_power_coeff = {1e-40};
  Budget b;
  b.payload_bits = 2.0;
  RoundAccounting r;
  r.plan.selected = {0};
  r.plan.powers = {0.2};
  r.plan.batch_sizes = {1};
  r.plan.cpu_freqs = {1e9};
  r.rates_dl = {1e30};
  r.rates_ul = {1.0};  // t2 = 2 s
  CHECK(finetune_round_energy(r, 0.0, m, b) == doctest::Approx(0.4).epsilon(1e-9));
  CHECK(total_energy({}, {}, 1.0, m, b) == 0.0);
}

TEST_CASE("energy accounting is additive over rounds") {
  auto m = model(3);
  Budget b;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  std::vector<RoundPlan> pre;
  std::vector<RoundAccounting> fine;
  for (int i = 0; i < 4; ++i) {
    RoundPlan p;
    p.server_batch = 100 * u(rng);
    p.server_freq = 1e9 * u(rng);
    pre.push_back(p);
    RoundAccounting a;
    a.plan.selected = {0, 2};
    a.plan.powers = {0.2 * u(rng), 0.2 * u(rng)};
    a.plan.batch_sizes = {16, 32};
    a.plan.cpu_freqs = {1e9 * u(rng), 1e9 * u(rng)};
    a.rates_dl = {1e7 * u(rng), 1e7 * u(rng)};
    a.rates_ul = {1e7 * u(rng), 1e7 * u(rng)};
    fine.push_back(a);
  }
  const double whole = total_energy(pre, fine, 1.0, m, b);
  const std::span<const RoundPlan> ps(pre);
  const std::span<const RoundAccounting> fs(fine);
  const double split = total_energy(ps.first(2), fs.first(2), 1.0, m, b) +
                       total_energy(ps.last(2), fs.last(2), 1.0, m, b);
  CHECK(whole == doctest::Approx(split).epsilon(1e-14));
  CHECK(whole > 0.0);
}

TEST_CASE("power constraint report") {
  Budget b;
  b.max_power = 0.2;
  b.avg_power_caps = {0.15};
  RoundPlan zero;
  zero.selected = {0};
  zero.powers = {0.0};
  CHECK(check_power(std::vector<RoundPlan>{zero}, b, 1).ok);

  RoundPlan at_cap = zero;
  at_cap.powers = {0.2};
  Budget loose = b;
  loose.avg_power_caps = {0.2};
  CHECK(check_power(std::vector<RoundPlan>{at_cap}, loose, 1).ok);

  RoundPlan r1 = zero, r2 = zero;
  r1.powers = {0.3};
  r2.powers = {0.1};
  b.max_power = 0.5;
  const auto rep = check_power(std::vector<RoundPlan>{r1, r2}, b, 1);
  CHECK_FALSE(rep.ok);
  REQUIRE(rep.violations.size() == 1);
  CHECK(rep.violations[0].kind == "average");
  CHECK(rep.violations[0].value == doctest::Approx(0.2));

  b.max_power = 0.2;
  const auto inst = check_power(std::vector<RoundPlan>{r1, r2}, b, 1);
  CHECK(inst.violations.front().kind == "instantaneous");
  CHECK(inst.violations.front().round == 0);
}

TEST_CASE("tangent of 1/x: worked values, tangency and lower bound") {
  CHECK(tangent_inverse(10.0, 10.0) == 0.1);
  CHECK(tangent_inverse(10.0, 20.0) == doctest::Approx(0.0).scale(1.0));
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.01, 100.0);
  for (int t = 0; t < 1000; ++t) {
    const double a = u(rng), x = u(rng);
    CHECK(std::abs(tangent_inverse(a, a) - 1.0 / a) <= 1e-10 / a);
    CHECK(tangent_inverse(a, x) <= 1.0 / x + 1e-12);
    CHECK(std::abs(tangent_cubic(a, a) - a * a * a) <= 1e-10 * a * a * a);
    CHECK(tangent_cubic(a, x) <= x * x * x * (1 + 1e-12));
  }
}

TEST_CASE("block A surrogate equals the objective at the expansion point") {
  auto ctx = context(1e6, 1e6);
  const BlockAVars z{40, 1e9, 20, 8e8};
  CHECK(blockA_surrogate(ctx, z, z) == doctest::Approx(blockA_objective(ctx, z)).epsilon(1e-12));
  CHECK(blockA_energy_linearized(ctx, z, z) == doctest::Approx(blockA_energy(ctx, z)).epsilon(1e-12));
}

TEST_CASE("block A step at a flat objective leaves the plan unchanged") {
  auto ctx = context(1e6, 1e6);
  ctx.psi_of_inverse = [](double, double) { return 1.0; };
  const BlockAVars z{40, 1e9, 20, 8e8};
  const auto r = sca_surrogate_blockA(z, ctx);
  CHECK(r.feasible);
  CHECK(std::abs(r.z.server_batch - z.server_batch) < 1e-8);
  CHECK(std::abs(r.z.server_freq - z.server_freq) < 1e-8 * z.server_freq);
  CHECK(std::abs(r.z.client_batch - z.client_batch) < 1e-8);
  CHECK(std::abs(r.z.client_freq - z.client_freq) < 1e-8 * z.client_freq);
}

TEST_CASE("block A step at the optimal corner leaves the plan unchanged") {
  auto ctx = context(1e6, 1e6);
  const BlockAVars z{512, 2e9, 512, 1e9};
  const auto r = sca_surrogate_blockA(z, ctx);
  CHECK(r.feasible);
  CHECK(std::abs(r.z.server_batch - 512) < 1e-8);
  CHECK(std::abs(r.z.client_batch - 512) < 1e-8);
}

TEST_CASE("block A iterations descend and stay feasible inside the trust region") {
  // latency binds: 3 W C / f + 5 (0.03 + b C / f_u) <= cap
  auto ctx = context(2.0, 50.0);
  BlockAVars z{10, 1e9, 10, 1e9};
  const BoxBounds box;
  double prev = blockA_objective(ctx, z);
  for (int it = 0; it < 30; ++it) {
    const auto r = sca_surrogate_blockA(z, ctx, 0.2);
    REQUIRE(r.feasible);
    CHECK(r.surrogate_at_new <= r.surrogate_at_old + 1e-9);
    CHECK(std::abs(r.z.server_batch - z.server_batch) <= 0.2 * (box.b_max - box.b_min) * (1 + 1e-9));
    CHECK(std::abs(r.z.client_freq - z.client_freq) <= 0.2 * (box.f_max - box.f_min) * (1 + 1e-9));
    CHECK(blockA_latency(ctx, r.z) <= ctx.budget.latency_cap * (1 + 1e-12));
    CHECK(blockA_energy(ctx, r.z) <= ctx.budget.energy_cap * (1 + 1e-12));
    CHECK(blockA_energy_linearized(ctx, r.z, z) <= ctx.budget.energy_cap * (1 + 1e-12));
    CHECK(r.z.server_batch >= box.b_min);
    CHECK(r.z.client_freq <= box.f_max);
    const double obj = blockA_objective(ctx, r.z);
    CHECK(obj <= prev + 1e-9);
    prev = obj;
    z = r.z;
  }
  CHECK(blockA_latency(ctx, z) > 0.95 * ctx.budget.latency_cap);
}

TEST_CASE("block A reports infeasibility instead of throwing") {
  auto ctx = context(1e-6, 1e6);
  const auto r = sca_surrogate_blockA({10, 1e9, 10, 1e9}, ctx);
  CHECK_FALSE(r.feasible);
}

TEST_CASE("budget and model validation") {
  Budget b;
  b.latency_cap = 0.0;
  CHECK_THROWS_AS(b.validate(), ConfigError);
  auto m = model(1);
  m.client_cycle_factor = {0.0};
  CHECK_THROWS_AS(m.validate(), ConfigError);
  PhasePlan p{0, 0};
  CHECK_THROWS_AS(p.validate(), ConfigError);
}
