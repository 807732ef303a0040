#pragma once

#include <Eigen/Dense>
#include <random>
#include <span>
#include <vector>

namespace otafl {

enum class TaskKind { kQuadratic, kLogistic };
enum class Phase { kPretrain, kFinetune };

/// Quadratic: per-sample loss 1/2 (w - d)^T H (w - d), d ~ N(center, s^2 I).
/// Logistic: x ~ N(center, s^2 I), y = +-1 with P(y = 1) = sigmoid(truth^T x).
struct TaskSpec {
  TaskKind kind = TaskKind::kQuadratic;
  int dimension = 10;
  Eigen::VectorXd hessian_diag;                  // H, quadratic only
  double sample_std = 1.0;                       // s
  Eigen::VectorXd pretrain_center;
  std::vector<Eigen::VectorXd> finetune_centers; // one per user
  Eigen::VectorXd init;                          // w^0
  Eigen::VectorXd logistic_truth;
  double step_pre = 0.1;    // gamma
  double step_fine = 0.1;   // gamma hat
  int eval_samples = 2000;  // logistic loss estimate per distribution
  std::uint64_t eval_seed = 0;

  int num_users() const { return static_cast<int>(finetune_centers.size()); }
  void validate(int expected_users = -1) const;
};

struct Batch {
  Eigen::MatrixXd x;  // one sample per row
  Eigen::VectorXd y;  // labels, logistic only
};

struct ModelState {
  Eigen::VectorXd params;
  Phase phase = Phase::kPretrain;
  int round = 0;
};

class Task {
 public:
  explicit Task(TaskSpec spec);
  const TaskSpec& spec() const { return spec_; }

  Batch draw_pretrain(int n, std::mt19937_64& rng) const;
  Batch draw_user(int user, int n, std::mt19937_64& rng) const;
  /// Mean gradient over the batch.
  Eigen::VectorXd gradient(const Eigen::VectorXd& w, const Batch& b) const;
  /// Population gradients (closed form for the quadratic task).
  Eigen::VectorXd pretrain_population_gradient(const Eigen::VectorXd& w) const;
  double pretrain_loss(const Eigen::VectorXd& w) const;
  double finetune_loss(const Eigen::VectorXd& w) const;
  double pretrain_optimum() const;
  double finetune_optimum() const;

 private:
  Batch draw(const Eigen::VectorXd& center, int n, std::mt19937_64& rng) const;
  double mean_loss(const Eigen::VectorXd& w, const Batch& b) const;

  TaskSpec spec_;
  std::vector<Batch> eval_fine_;
  Batch eval_pre_;
};

ModelState pretrain_step(const ModelState& state, const Task& task, int batch_size,
                         std::mt19937_64& rng);

enum class MismatchMode { kModeled, kIdeal };

struct OTAConfig {
  double noise_variance = 0.0;  // per entry, sigma^2
  double receive_scale = 0.0;   // eta; 0 selects the default rule
  MismatchMode mismatch_mode = MismatchMode::kModeled;
};

struct OTAOutcome {
  Eigen::VectorXd received;
  Eigen::VectorXd mismatch;
  Eigen::VectorXd noise;
  double eta = 1.0;
};

/// mean_u(gain_u sqrt(p_u)) / mean_u(weight_u): average alignment equals the average weight.
double default_receive_scale(std::span<const double> gains, std::span<const double> powers,
                             std::span<const double> weights);

/// received = eta^-1 sum_u gain_u sqrt(p_u) g_u + noise in modeled mode,
/// sum_u weight_u g_u + noise in ideal mode.
OTAOutcome ota_aggregate(std::span<const Eigen::VectorXd> grads, std::span<const double> gains,
                         std::span<const double> powers, std::span<const double> weights,
                         const OTAConfig& cfg, std::mt19937_64& rng);

/// Error-free weighted sum.
Eigen::VectorXd digital_aggregate(std::span<const Eigen::VectorXd> grads,
                                  std::span<const double> weights);

/// Batch-size weights b_u / sum_v b_v.
std::vector<double> batch_weights(std::span<const double> batch_sizes);

ModelState finetune_round(const ModelState& state, const Task& task, const OTAOutcome& outcome);

double wasserstein_1d(std::span<const double> a, std::span<const double> b);

struct BoundInputs {
  double rho = 1.0;
  double rho_hat = 1.0;
  double mu = 1.0;      // strong convexity of the pretraining loss
  double mu_hat = 1.0;  // strong convexity of the fine-tuning loss
  double alpha2 = 0.0;
  double alpha_hat2 = 0.0;
  double rho_dist = 0.0;
  double wasserstein = 0.0;
  double L0 = 0.0;
  double Lstar_pre = 0.0;
  double Lstar_fine = 0.0;
  int dimension = 1;  // noise enters as sigma^2 * dimension
};

struct BoundBreakdown {
  double value = 0.0;
  double pretrain_term = 0.0;  // Delta_pre
  double shift_term = 0.0;     // rho_dist * W
  double finetune_term = 0.0;  // Delta_fine
  double grad_opt_term = 0.0;  // 2 (L_start - L*) / (gamma_hat N)
  double grad_noise_term = 0.0;  // rho_hat gamma_hat (alpha_hat^2 + sigma^2 d)
  bool divergent = false;
};

/// Upper bound on E L_fine after M pretraining and N fine-tuning rounds.
BoundBreakdown convergence_bound(const BoundInputs& in, int M, int N, double gamma,
                                 double gamma_hat, double sigma2);

/// Largest Hessian eigenvalue from finite differences of the population gradient.
double estimate_smoothness(const Task& task, const Eigen::VectorXd& w);

/// Monte-Carlo E ||g_batch - grad L_pre||^2 at w.
double estimate_gradient_variance(const Task& task, const Eigen::VectorXd& w, int batch,
                                  int trials, std::mt19937_64& rng);

/// Closed-form constants for the quadratic task; the shift distance is measured with
/// wasserstein_1d on samples projected onto the mean-shift direction.
BoundInputs quadratic_bound_inputs(const Task& task, int batch_pre, int batch_fine_per_user,
                                   int shift_samples, std::uint64_t seed);

}  // namespace otafl
