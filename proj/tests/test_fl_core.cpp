#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "otafl/commands.hpp"
#include "otafl/errors.hpp"
#include "otafl/experiment.hpp"
#include "otafl/fl_core.hpp"

using namespace otafl;

namespace {

TaskSpec iso_quadratic(int d, double rho, double gamma, double std) {
  TaskSpec s;
  s.dimension = d;
  s.hessian_diag = Eigen::VectorXd::Constant(d, rho);
  s.sample_std = std;
  s.pretrain_center = Eigen::VectorXd::Zero(d);
  s.finetune_centers = {Eigen::VectorXd::Ones(d), -Eigen::VectorXd::Ones(d)};
  s.init = Eigen::VectorXd::LinSpaced(d, -1.0, 2.0);
  s.step_pre = gamma;
  s.step_fine = gamma;
  return s;
}

// W1 as the integral of |F_a - F_b| over the merged support
double cdf_w1(std::vector<double> a, std::vector<double> b) {
  std::vector<double> pts = a;
  pts.insert(pts.end(), b.begin(), b.end());
  std::sort(pts.begin(), pts.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double t = pts[i];
    const double fa = static_cast<double>(std::upper_bound(a.begin(), a.end(), t) - a.begin()) / a.size();
    const double fb = static_cast<double>(std::upper_bound(b.begin(), b.end(), t) - b.begin()) / b.size();
    acc += std::abs(fa - fb) * (pts[i + 1] - t);
  }
  return acc;
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.experiment.num_users = 4;
  c.experiment.pretrain_rounds = 3;
  c.experiment.finetune_rounds = 4;
  c.wireless.num_elements = 4;
  c.wireless.aperture_wavelengths = 4.0;
  c.policy.kind = "topk_snr";
  return c;
}

}  // namespace

TEST_CASE("pretraining step on closed-form quadratics") {
  const Task t(iso_quadratic(5, 1.5, 0.2, 0.0));
  std::mt19937_64 rng(1);
  ModelState s;
  s.params = Eigen::VectorXd::LinSpaced(5, -2.0, 3.0);
  const ModelState n = pretrain_step(s, t, 16, rng);
  CHECK((n.params - (1.0 - 0.2 * 1.5) * s.params).norm() < 1e-15);
  CHECK(n.round == 1);
  ModelState opt;
  opt.params = Eigen::VectorXd::Zero(5);
  CHECK(pretrain_step(opt, t, 4, rng).params == opt.params);
  // step sizes are required to be positive, so gamma = 0 is rejected up front
  CHECK_THROWS_AS(Task(iso_quadratic(5, 1.0, 0.0, 0.0)), ConfigError);
  ModelState f;
  f.params = opt.params;
  f.phase = Phase::kFinetune;
  CHECK_THROWS_AS(pretrain_step(f, t, 4, rng), DomainError);
}

TEST_CASE("aggregation: alignment, dropped users and the ideal mode") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  const int d = 6;
  std::vector<Eigen::VectorXd> g(3, Eigen::VectorXd(d));
  for (auto& v : g)
    for (auto& x : v) x = n(rng);
  const std::vector<double> w = batch_weights(std::vector<double>{16, 32, 16});
  CHECK(w[1] == 0.5);
  const std::vector<double> p{0.2, 0.05, 0.1};
  std::vector<double> gains;
  const double eta = 3.0;
  for (std::size_t u = 0; u < 3; ++u) gains.push_back(w[u] * eta / std::sqrt(p[u]));
  OTAConfig cfg;
  cfg.receive_scale = eta;
  const auto out = ota_aggregate(g, gains, p, w, cfg, rng);
  const Eigen::VectorXd exact = w[0] * g[0] + w[1] * g[1] + w[2] * g[2];
  CHECK((out.received - exact).norm() < 1e-12);
  CHECK(out.mismatch.norm() < 1e-12);
  CHECK(out.noise.norm() == 0.0);

  // user 1 unheard
  const std::vector<Eigen::VectorXd> two{g[0], g[1]};
  const std::vector<double> w2{0.25, 0.75}, p2{0.2, 0.2}, g2{1.0, 0.0};
  OTAConfig c2;
  c2.receive_scale = std::sqrt(0.2) / 0.25;
  const auto o2 = ota_aggregate(two, g2, p2, w2, c2, rng);
  CHECK((o2.received - 0.25 * g[0]).norm() < 1e-12);
  CHECK((o2.mismatch + 0.75 * g[1]).norm() < 1e-12);

  // ideal mode ignores the gains entirely
  for (int t = 0; t < 100; ++t) {
    std::vector<double> rg(3), rp(3), rb(3);
    for (auto& v : rg) v = std::abs(n(rng));
    for (auto& v : rp) v = 0.2 * std::abs(n(rng)) + 1e-3;
    for (auto& v : rb) v = 1.0 + std::floor(32 * std::abs(n(rng)));
    const auto rw = batch_weights(rb);
    OTAConfig ic;
    ic.mismatch_mode = MismatchMode::kIdeal;
    const auto o = ota_aggregate(g, rg, rp, rw, ic, rng);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
    for (std::size_t u = 0; u < 3; ++u) sum += rb[u] / (rb[0] + rb[1] + rb[2]) * g[u];
    CHECK((o.received - sum).norm() < 1e-12);
    CHECK(o.mismatch.norm() == 0.0);
  }
  OTAConfig bad;
  CHECK_THROWS_AS(ota_aggregate(two, std::vector<double>{0, 0}, p2, w2, bad, rng), ConfigError);
}

TEST_CASE("OTA noise energy matches sigma^2 d") {
  const int d = 8, draws = 100000;
  const double s2 = 0.3;
  std::mt19937_64 rng(3);
  const std::vector<Eigen::VectorXd> g{Eigen::VectorXd::LinSpaced(d, -1.0, 1.0)};
  const std::vector<double> one{1.0};
  OTAConfig cfg;
  cfg.noise_variance = s2;
  cfg.receive_scale = 1.0;
  double acc = 0.0;
  for (int i = 0; i < draws; ++i) acc += (ota_aggregate(g, one, one, one, cfg, rng).received - g[0]).squaredNorm();
  const double m = acc / draws;
  CHECK(std::abs(m - s2 * d) <= 0.05 * s2 * d);
  CHECK(m <= s2 * d * (1.0 + 3.0 / std::sqrt(static_cast<double>(draws))));
}

TEST_CASE("ideal OTA fine-tuning reproduces centralized SGD on pooled batches") {
  TaskSpec spec = iso_quadratic(7, 1.0, 0.1, 1.0);
  spec.hessian_diag = Eigen::VectorXd::LinSpaced(7, 0.5, 2.0);
  spec.finetune_centers = {Eigen::VectorXd::Ones(7), Eigen::VectorXd::Zero(7), -Eigen::VectorXd::Ones(7)};
  const Task task(spec);
  const std::vector<int> sizes{8, 16, 24};
  const std::vector<double> bs(sizes.begin(), sizes.end());
  const auto w = batch_weights(bs);
  ModelState s;
  s.phase = Phase::kFinetune;
  s.params = spec.init;
  Eigen::VectorXd central = spec.init;
  std::mt19937_64 rng(4), noise_rng(5);
  for (int round = 0; round < 25; ++round) {
    std::vector<Eigen::VectorXd> grads;
    Eigen::MatrixXd pooled(0, 7);
    for (int u = 0; u < 3; ++u) {
      const Batch b = task.draw_user(u, sizes[static_cast<std::size_t>(u)], rng);
      grads.push_back(task.gradient(s.params, b));
      Eigen::MatrixXd next(pooled.rows() + b.x.rows(), 7);
      next << pooled, b.x;
      pooled = next;
    }
    OTAConfig cfg;
    cfg.mismatch_mode = MismatchMode::kIdeal;
    const std::vector<double> gains{1.0, 2.0, 3.0}, p{0.2, 0.2, 0.2};
    s = finetune_round(s, task, ota_aggregate(grads, gains, p, w, cfg, noise_rng));
    Batch all;
    all.x = pooled;
    central -= spec.step_fine * task.gradient(central, all);
    CHECK((s.params - central).cwiseAbs().maxCoeff() <= 1e-12);
  }
  OTAOutcome zero;
  zero.received = Eigen::VectorXd::Zero(7);
  CHECK(finetune_round(s, task, zero).params == s.params);
}

TEST_CASE("1-D Wasserstein distance") {
  const std::vector<double> a{0.3, -1.0, 2.5, 0.0};
  CHECK(wasserstein_1d(a, a) == 0.0);
  CHECK(wasserstein_1d(std::vector<double>{0.0}, std::vector<double>{1.0}) == 1.0);
  std::vector<double> shifted = a;
  for (auto& v : shifted) v += 0.7;
  CHECK(wasserstein_1d(a, shifted) == doctest::Approx(0.7).epsilon(1e-15));
  CHECK_THROWS_AS(wasserstein_1d(std::vector<double>{}, a), DomainError);

  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> x(1 + rng() % 10), y(1 + rng() % 10);
    for (auto& v : x) v = u(rng);
    for (auto& v : y) v = u(rng);
    CHECK(wasserstein_1d(x, y) == doctest::Approx(cdf_w1(x, y)).epsilon(1e-12));
  }
  // equal sizes: brute-force assignment over all permutations
  for (int t = 0; t < 5; ++t) {
    std::vector<double> x(7), y(7);
    for (auto& v : x) v = u(rng);
    for (auto& v : y) v = u(rng);
    std::vector<int> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    double best = 1e300;
    do {
      double c = 0.0;
      for (int i = 0; i < 7; ++i) c += std::abs(x[static_cast<std::size_t>(i)] - y[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
      best = std::min(best, c / 7);
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(wasserstein_1d(x, y) == doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("bound terms and monotonicity") {
  BoundInputs in;
  in.rho = 2.0;
  in.rho_hat = 1.5;
  in.mu = 0.5;
  in.mu_hat = 0.4;
  in.alpha2 = 0.3;
  in.alpha_hat2 = 0.2;
  in.L0 = 5.0;
  in.Lstar_pre = 1.0;
  in.Lstar_fine = 1.4;
  in.dimension = 10;
  in.rho_dist = 2.0;
  in.wasserstein = 0.0;
  CHECK(convergence_bound(in, 3, 5, 0.1, 0.1, 0.0).shift_term == 0.0);
  in.wasserstein = 0.5;
  const auto b = convergence_bound(in, 3, 5, 0.1, 0.1, 0.0);
  CHECK(b.shift_term == 1.0);
  CHECK(b.value == doctest::Approx(in.L0 + b.pretrain_term + b.shift_term + b.finetune_term));

  for (int M = 0; M < 20; ++M)
    CHECK(convergence_bound(in, M + 1, 5, 0.1, 0.1, 0.01).value <= convergence_bound(in, M, 5, 0.1, 0.1, 0.01).value + 1e-15);
  for (int N = 1; N < 40; ++N)
    CHECK(convergence_bound(in, 3, N + 1, 0.1, 0.1, 0.01).value <= convergence_bound(in, 3, N, 0.1, 0.1, 0.01).value + 1e-15);
  double prev = 0.0;
  for (double s2 : {0.0, 1e-3, 1e-2, 0.1, 1.0}) {
    const double v = convergence_bound(in, 3, 5, 0.1, 0.1, s2).value;
    CHECK(v >= prev);
    prev = v;
  }
  prev = 0.0;
  for (double w : {0.0, 0.1, 0.5, 2.0}) {
    in.wasserstein = w;
    const double v = convergence_bound(in, 3, 5, 0.1, 0.1, 0.0).value;
    CHECK(v >= prev);
    prev = v;
  }
  const auto div = convergence_bound(in, 3, 5, 1.0, 0.1, 0.0);
  CHECK(div.divergent);
  CHECK(std::isinf(div.value));
  CHECK_THROWS_AS(convergence_bound(in, 3, 0, 0.1, 0.1, 0.0), DomainError);
}

TEST_CASE("smoothness and variance estimators match closed forms") {
  TaskSpec spec = iso_quadratic(6, 1.0, 0.1, 0.8);
  spec.hessian_diag << 0.5, 0.9, 1.3, 1.7, 2.0, 0.7;
  const Task task(spec);
  CHECK(estimate_smoothness(task, spec.init) == doctest::Approx(2.0).epsilon(1e-6));
  std::mt19937_64 rng(7);
  const int batch = 8;
  const double closed = 0.64 * spec.hessian_diag.squaredNorm() / batch;
  CHECK(std::abs(estimate_gradient_variance(task, spec.init, batch, 10000, rng) - closed) < 0.05 * closed);
  const auto in = quadratic_bound_inputs(task, batch, 4, 2000, 1);
  CHECK(in.rho == 2.0);
  CHECK(in.mu == 0.5);
  CHECK(in.alpha2 == doctest::Approx(closed));
  CHECK(in.Lstar_pre == doctest::Approx(task.pretrain_loss(spec.pretrain_center)));
}

TEST_CASE("bound exceeds the Monte-Carlo final loss on a small grid") {
  ExperimentConfig cfg;
  const auto pts = run_bound_check(cfg, parse_bound_grid("M=0,4;N=5,20;sigma2=0,0.01"), 100, 1);
  REQUIRE(pts.size() == 8);
  for (const auto& p : pts) {
    CHECK_FALSE(p.violation);
    CHECK(p.bound.value >= p.empirical_mean);
  }
}

TEST_CASE("experiment runs: no fine-tuning, determinism and digital/ideal equivalence") {
  auto c = small_config();
  c.experiment.finetune_rounds = 0;
  const auto r0 = run_experiment(c);
  CHECK(r0.rounds.size() == 3);
  for (const auto& r : r0.rounds) CHECK(r.phase == "pretrain");

  c = small_config();
  const auto a = run_experiment(c), b = run_experiment(c);
  REQUIRE(a.trajectory.size() == b.trajectory.size());
  for (std::size_t i = 0; i < a.trajectory.size(); ++i) CHECK(a.trajectory[i] == b.trajectory[i]);
  for (std::size_t i = 0; i < a.rounds.size(); ++i) CHECK(to_json(a.rounds[i]).dump() == to_json(b.rounds[i]).dump());

  c.policy.k = 4;
  c.ota.mismatch_mode = "ideal";
  c.ota.noise_scale = 0.0;
  c.policy.kind = "digital_fedavg";
  const auto dig = run_experiment(c);
  c.policy.kind = "ota_nopc";
  const auto ota = run_experiment(c);
  REQUIRE(dig.trajectory.size() == ota.trajectory.size());
  for (std::size_t i = 0; i < dig.trajectory.size(); ++i)
    CHECK((dig.trajectory[i] - ota.trajectory[i]).cwiseAbs().maxCoeff() <= 1e-12);
  for (const auto& r : dig.rounds) CHECK(r.mismatch_norm == 0.0);
}
