#include "otafl/fl_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "otafl/errors.hpp"
#include "otafl/rng.hpp"

namespace otafl {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double log1pexp(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
double sigmoid(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

void check_finite(const Eigen::VectorXd& v, const char* what) {
  if (!v.allFinite()) throw NumericError(std::string(what) + ": non-finite values");
}

}  // namespace

void TaskSpec::validate(int expected_users) const {
  if (dimension < 1) throw ConfigError("task: dimension must be >= 1", {"task.dimension"});
  if (!(step_pre > 0.0) || !(step_fine > 0.0))
    throw ConfigError("task: step sizes must be positive", {"task.step_pre", "task.step_fine"});
  if (!(sample_std >= 0.0)) throw ConfigError("task: negative sample std", {"task.sample_std"});
  if (pretrain_center.size() != dimension || init.size() != dimension)
    throw ConfigError("task: center/init dimension mismatch");
  if (finetune_centers.empty()) throw ConfigError("task: no fine-tuning distributions");
  if (expected_users >= 0 && num_users() != expected_users)
    throw ConfigError("task: fine-tuning distributions must cover every user");
  for (const auto& c : finetune_centers)
    if (c.size() != dimension) throw ConfigError("task: center dimension mismatch");
  if (kind == TaskKind::kQuadratic) {
    if (hessian_diag.size() != dimension || (hessian_diag.array() <= 0.0).any())
      throw ConfigError("task: hessian diagonal must be positive", {"task.hessian_min", "task.hessian_max"});
  } else if (logistic_truth.size() != dimension) {
    throw ConfigError("task: logistic truth dimension mismatch");
  }
}

Task::Task(TaskSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  if (spec_.kind == TaskKind::kLogistic) {
    auto rng = make_rng(spec_.eval_seed, Stream::kEval, 0, 0);
    eval_pre_ = draw(spec_.pretrain_center, spec_.eval_samples, rng);
    for (int u = 0; u < spec_.num_users(); ++u) {
      auto r = make_rng(spec_.eval_seed, Stream::kEval, 1, static_cast<std::uint64_t>(u));
      eval_fine_.push_back(draw(spec_.finetune_centers[static_cast<std::size_t>(u)], spec_.eval_samples, r));
    }
  }
}

Batch Task::draw(const Eigen::VectorXd& center, int n, std::mt19937_64& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Batch b;
  b.x.resize(n, spec_.dimension);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < spec_.dimension; ++j) b.x(i, j) = center(j) + spec_.sample_std * normal(rng);
  if (spec_.kind == TaskKind::kLogistic) {
    b.y.resize(n);
    for (int i = 0; i < n; ++i) {
      const double p = sigmoid(b.x.row(i).dot(spec_.logistic_truth));
      b.y(i) = unif(rng) < p ? 1.0 : -1.0;
    }
  }
  return b;
}

Batch Task::draw_pretrain(int n, std::mt19937_64& rng) const {
  if (n < 1) throw DomainError("batch size must be >= 1");
  return draw(spec_.pretrain_center, n, rng);
}

Batch Task::draw_user(int user, int n, std::mt19937_64& rng) const {
  if (n < 1) throw DomainError("batch size must be >= 1");
  return draw(spec_.finetune_centers.at(static_cast<std::size_t>(user)), n, rng);
}

Eigen::VectorXd Task::gradient(const Eigen::VectorXd& w, const Batch& b) const {
  const double n = static_cast<double>(b.x.rows());
  if (spec_.kind == TaskKind::kQuadratic) {
    const Eigen::VectorXd mean = b.x.colwise().sum().transpose() / n;
    return spec_.hessian_diag.cwiseProduct(w - mean);
  }
  Eigen::VectorXd g = Eigen::VectorXd::Zero(spec_.dimension);
  for (Eigen::Index i = 0; i < b.x.rows(); ++i) {
    const double z = b.y(i) * b.x.row(i).dot(w);
    g -= b.y(i) * sigmoid(-z) * b.x.row(i).transpose();
  }
  return g / n;
}

double Task::mean_loss(const Eigen::VectorXd& w, const Batch& b) const {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < b.x.rows(); ++i) acc += log1pexp(-b.y(i) * b.x.row(i).dot(w));
  return acc / static_cast<double>(b.x.rows());
}

Eigen::VectorXd Task::pretrain_population_gradient(const Eigen::VectorXd& w) const {
  if (spec_.kind == TaskKind::kQuadratic)
    return spec_.hessian_diag.cwiseProduct(w - spec_.pretrain_center);
  return gradient(w, eval_pre_);
}

double Task::pretrain_loss(const Eigen::VectorXd& w) const {
  if (spec_.kind == TaskKind::kQuadratic) {
    const Eigen::VectorXd d = w - spec_.pretrain_center;
    return 0.5 * d.dot(spec_.hessian_diag.cwiseProduct(d)) + pretrain_optimum();
  }
  return mean_loss(w, eval_pre_);
}

double Task::finetune_loss(const Eigen::VectorXd& w) const {
  if (spec_.kind == TaskKind::kQuadratic) {
    double acc = 0.0;
    for (const auto& c : spec_.finetune_centers) {
      const Eigen::VectorXd d = w - c;
      acc += 0.5 * d.dot(spec_.hessian_diag.cwiseProduct(d));
    }
    return acc / spec_.num_users() + 0.5 * spec_.sample_std * spec_.sample_std * spec_.hessian_diag.sum();
  }
  double acc = 0.0;
  for (const auto& b : eval_fine_) acc += mean_loss(w, b);
  return acc / static_cast<double>(eval_fine_.size());
}

double Task::pretrain_optimum() const {
  if (spec_.kind == TaskKind::kQuadratic)
    return 0.5 * spec_.sample_std * spec_.sample_std * spec_.hessian_diag.sum();
  return 0.0;  // trivial lower bound
}

double Task::finetune_optimum() const {
  if (spec_.kind == TaskKind::kQuadratic) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(spec_.dimension);
    for (const auto& c : spec_.finetune_centers) mean += c;
    mean /= spec_.num_users();
    return finetune_loss(mean);
  }
  return 0.0;
}

ModelState pretrain_step(const ModelState& state, const Task& task, int batch_size,
                         std::mt19937_64& rng) {
  if (state.phase != Phase::kPretrain) throw DomainError("pretrain_step: model is not in pretraining");
  const Batch b = task.draw_pretrain(batch_size, rng);
  const Eigen::VectorXd g = task.gradient(state.params, b);
  check_finite(g, "pretrain_step gradient");
  ModelState next = state;
  next.params = state.params - task.spec().step_pre * g;
  check_finite(next.params, "pretrain_step update");
  next.round = state.round + 1;
  return next;
}

double default_receive_scale(std::span<const double> gains, std::span<const double> powers,
                             std::span<const double> weights) {
  double a = 0.0, w = 0.0;
  for (std::size_t u = 0; u < gains.size(); ++u) {
    a += gains[u] * std::sqrt(powers[u]);
    w += weights[u];
  }
  return w > 0.0 ? a / w : 0.0;  // ratio of means; the 1/U factors cancel
}

std::vector<double> batch_weights(std::span<const double> batch_sizes) {
  double total = 0.0;
  for (double b : batch_sizes) total += b;
  if (!(total > 0.0)) throw DomainError("batch_weights: total batch size must be positive");
  std::vector<double> w;
  for (double b : batch_sizes) w.push_back(b / total);
  return w;
}

Eigen::VectorXd digital_aggregate(std::span<const Eigen::VectorXd> grads,
                                  std::span<const double> weights) {
  if (grads.empty()) throw DomainError("aggregate: no participants");
  Eigen::VectorXd s = Eigen::VectorXd::Zero(grads.front().size());
  for (std::size_t u = 0; u < grads.size(); ++u) s += weights[u] * grads[u];
  return s;
}

OTAOutcome ota_aggregate(std::span<const Eigen::VectorXd> grads, std::span<const double> gains,
                         std::span<const double> powers, std::span<const double> weights,
                         const OTAConfig& cfg, std::mt19937_64& rng) {
  if (grads.empty()) throw DomainError("ota_aggregate: no participants");
  if (gains.size() != grads.size() || powers.size() != grads.size() || weights.size() != grads.size())
    throw DomainError("ota_aggregate: size mismatch");
  if (cfg.receive_scale < 0.0 || !(cfg.noise_variance >= 0.0))
    throw ConfigError("ota: receive scale and noise variance must be nonnegative");
  OTAOutcome out;
  out.eta = cfg.receive_scale > 0.0 ? cfg.receive_scale : default_receive_scale(gains, powers, weights);
  if (!(out.eta > 0.0) || !std::isfinite(out.eta)) throw ConfigError("ota: reception scale is zero");

  const Eigen::Index d = grads.front().size();
  const Eigen::VectorXd intended = digital_aggregate(grads, weights);
  Eigen::VectorXd signal;
  if (cfg.mismatch_mode == MismatchMode::kIdeal) {
    signal = intended;
    out.mismatch = Eigen::VectorXd::Zero(d);
  } else {
    signal = Eigen::VectorXd::Zero(d);
    for (std::size_t u = 0; u < grads.size(); ++u)
      signal += (gains[u] * std::sqrt(powers[u]) / out.eta) * grads[u];
    out.mismatch = signal - intended;
  }
  out.noise = Eigen::VectorXd::Zero(d);
  if (cfg.noise_variance > 0.0) {
    std::normal_distribution<double> normal(0.0, std::sqrt(cfg.noise_variance));
    for (Eigen::Index i = 0; i < d; ++i) out.noise(i) = normal(rng);
  }
  out.received = signal + out.noise;
  return out;
}

ModelState finetune_round(const ModelState& state, const Task& task, const OTAOutcome& outcome) {
  if (state.phase != Phase::kFinetune) throw DomainError("finetune_round: model is not fine-tuning");
  ModelState next = state;
  next.params = state.params - task.spec().step_fine * outcome.received;
  check_finite(next.params, "finetune_round update");
  next.round = state.round + 1;
  return next;
}

double wasserstein_1d(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw DomainError("wasserstein_1d: empty sample set");
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const std::size_t n = x.size(), m = y.size();
  if (n == m) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += std::abs(x[i] - y[i]);
    return acc / static_cast<double>(n);
  }
  // quantile coupling: walk the merged CDF breakpoints i/n and j/m in units of 1/(n m)
  std::size_t i = 0, j = 0;
  unsigned long long prev = 0;
  double acc = 0.0;
  while (i < n && j < m) {
    const unsigned long long na = (i + 1) * m, nb = (j + 1) * n;
    const unsigned long long next = std::min(na, nb);
    acc += static_cast<double>(next - prev) * std::abs(x[i] - y[j]);
    prev = next;
    if (na == next) ++i;
    if (nb == next) ++j;
  }
  return acc / (static_cast<double>(n) * static_cast<double>(m));
}

BoundBreakdown convergence_bound(const BoundInputs& in, int M, int N, double gamma,
                                 double gamma_hat, double sigma2) {
  if (M < 0 || N < 1) throw DomainError("convergence_bound: need M >= 0 and N >= 1");
  if (!(in.rho > 0.0 && in.rho_hat > 0.0)) throw DomainError("convergence_bound: smoothness must be positive");
  if (!(gamma > 0.0 && gamma_hat > 0.0)) throw DomainError("convergence_bound: step sizes must be positive");
  BoundBreakdown out;
  out.shift_term = in.wasserstein > 0.0 ? in.rho_dist * in.wasserstein : 0.0;
  const double noise = sigma2 * in.dimension;
  out.grad_noise_term = in.rho_hat * gamma_hat * (in.alpha_hat2 + noise);
  if (gamma * in.rho >= 2.0 || gamma_hat * in.rho_hat >= 2.0 || !(in.mu > 0.0) || !(in.mu_hat > 0.0)) {
    out.divergent = true;
    out.value = kInf;
    out.pretrain_term = kInf;
    out.finetune_term = kInf;
    out.grad_opt_term = kInf;
    return out;
  }
  // e <- r e + rho gamma^2 var / 2 with r = 1 - 2 mu gamma (1 - rho gamma / 2)
  auto run = [](double start_gap, double mu, double rho, double step, double var, int rounds) {
    const double r = 1.0 - 2.0 * mu * step * (1.0 - rho * step / 2.0);
    const double floor = rho * step * step * var / (2.0 * (1.0 - r));
    return floor + std::pow(r, rounds) * std::max(start_gap - floor, 0.0);
  };
  const double pre = in.Lstar_pre + run(in.L0 - in.Lstar_pre, in.mu, in.rho, gamma, in.alpha2, M);
  out.pretrain_term = pre - in.L0;
  const double start = pre + out.shift_term;
  const double fine =
      in.Lstar_fine + run(start - in.Lstar_fine, in.mu_hat, in.rho_hat, gamma_hat, in.alpha_hat2 + noise, N);
  out.finetune_term = fine - start;
  out.grad_opt_term = 2.0 * (start - in.Lstar_fine) / (gamma_hat * N);
  out.value = in.L0 + out.pretrain_term + out.shift_term + out.finetune_term;
  return out;
}

double estimate_smoothness(const Task& task, const Eigen::VectorXd& w) {
  const int d = task.spec().dimension;
  Eigen::MatrixXd h(d, d);
  const double step = 1e-4;
  for (int i = 0; i < d; ++i) {
    Eigen::VectorXd up = w, dn = w;
    up(i) += step;
    dn(i) -= step;
    h.col(i) = (task.pretrain_population_gradient(up) - task.pretrain_population_gradient(dn)) / (2.0 * step);
  }
  const Eigen::MatrixXd sym = 0.5 * (h + h.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  return es.eigenvalues().maxCoeff();
}

double estimate_gradient_variance(const Task& task, const Eigen::VectorXd& w, int batch,
                                  int trials, std::mt19937_64& rng) {
  const Eigen::VectorXd full = task.pretrain_population_gradient(w);
  double acc = 0.0;
  for (int t = 0; t < trials; ++t) acc += (task.gradient(w, task.draw_pretrain(batch, rng)) - full).squaredNorm();
  return acc / trials;
}

BoundInputs quadratic_bound_inputs(const Task& task, int batch_pre, int batch_fine_per_user,
                                   int shift_samples, std::uint64_t seed) {
  const TaskSpec& s = task.spec();
  if (s.kind != TaskKind::kQuadratic)
    throw ConfigError("bound constants are closed-form only for the quadratic task", {"task.kind"});
  const Eigen::VectorXd& h = s.hessian_diag;
  const double s2 = s.sample_std * s.sample_std;
  const int U = s.num_users();
  BoundInputs in;
  in.rho = in.rho_hat = h.maxCoeff();
  in.mu = in.mu_hat = h.minCoeff();
  in.alpha2 = s2 * h.squaredNorm() / batch_pre;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(s.dimension);
  for (const auto& c : s.finetune_centers) mean += c;
  mean /= U;
  double between = 0.0;
  for (const auto& c : s.finetune_centers) between += (h.cwiseProduct(c - mean)).squaredNorm();
  between /= U;
  // gradient variance of a size-(b U) batch drawn i.i.d. from the user mixture
  in.alpha_hat2 = (s2 * h.squaredNorm() + between) / (static_cast<double>(batch_fine_per_user) * U);
  in.L0 = task.pretrain_loss(s.init);
  in.Lstar_pre = task.pretrain_optimum();
  in.Lstar_fine = task.finetune_optimum();
  in.dimension = s.dimension;

  Eigen::VectorXd dir = mean - s.pretrain_center;
  if (dir.norm() > 0.0) dir /= dir.norm(); else dir = Eigen::VectorXd::Unit(s.dimension, 0);
  auto rng = make_rng(seed, Stream::kTaskSetup, 0, 0);
  std::vector<double> pa, pb;
  for (int i = 0; i < shift_samples; ++i) {
    pa.push_back(task.draw_pretrain(1, rng).x.row(0).dot(dir));
    pb.push_back(task.draw_user(i % U, 1, rng).x.row(0).dot(dir));
  }
  in.wasserstein = wasserstein_1d(pa, pb);
  // The fine-minus-pretrain gap is affine in w. Each coordinate of E w^m contracts toward
  // c_pre by (1 - gamma h_i)^m, so E w^M stays in the box between w^0 and c_pre (mirrored
  // around c_pre when gamma h_i > 1); the shift term covers the gap's maximum over that box.
  auto loss_gap = [&](const Eigen::VectorXd& w) { return task.finetune_loss(w) - task.pretrain_loss(w); };
  const double base = loss_gap(s.pretrain_center);
  const bool monotone = s.step_pre * h.maxCoeff() <= 1.0;
  double gap = base;
  for (int i = 0; i < s.dimension; ++i) {
    const double slope = loss_gap(s.pretrain_center + Eigen::VectorXd::Unit(s.dimension, i)) - base;
    const double offset = s.init(i) - s.pretrain_center(i);
    gap += monotone ? std::max(0.0, slope * offset) : std::abs(slope * offset);
  }
  gap = std::max(gap, 0.0);
  in.rho_dist = in.wasserstein > 0.0 ? gap / in.wasserstein : (gap > 0.0 ? kInf : 0.0);
  return in;
}

}  // namespace otafl
