#pragma once

#include <Eigen/Dense>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "otafl/antenna_opt.hpp"
#include "otafl/channel.hpp"
#include "otafl/resource.hpp"

namespace otafl {

enum class PolicyKind { kDigitalFedAvg, kTopkSnr, kGibbs, kOtaNoPc, kMaGreedy, kScaPdd };

std::string to_string(PolicyKind k);
/// Throws ConfigError for unknown names.
PolicyKind policy_from_string(const std::string& name);
const std::vector<PolicyKind>& all_policies();

struct ParticipationLedger {
  std::vector<int> counts;
  int rounds_elapsed = 0;
  long total_selected = 0;

  explicit ParticipationLedger(int users = 0) : counts(static_cast<std::size_t>(users), 0) {}
  void record(const std::vector<int>& selected);
};

struct PolicyConfig {
  PolicyKind kind = PolicyKind::kScaPdd;
  int k = 1;
  double gibbs_temperature = 1.0;
  double fairness_weight = 1.0;
  void validate(int num_users) const;
};

/// k largest SNRs; ties go to the lowest index. Result sorted ascending.
std::vector<int> select_topk_snr(std::span<const double> snrs, int k);

struct GibbsDraw {
  std::vector<int> users;  // sorted ascending
  bool uniform_fallback = false;
};

/// k distinct users drawn sequentially without replacement, weights (q_u / max q)^(1/T).
GibbsDraw select_gibbs(std::span<const double> qualities, int k, double temperature,
                       std::mt19937_64& rng);

/// latency_share + weight * counts / rounds_elapsed; k smallest, ties to the lowest index.
/// An infinite weight orders by debt first, then by latency share.
std::vector<int> select_by_participation_debt(std::span<const double> latency_share,
                                              const ParticipationLedger& ledger, int k,
                                              double fairness_weight);

/// Per-round inputs shared by every policy.
struct RoundContext {
  FadingConfig fading;
  std::vector<LinkState> links;
  ChannelRealization channel;
  ArrayGeometry geometry;
  Budget budget;
  ComputeModel model;
  std::vector<double> batch_sizes;  // per user
  std::vector<double> cpu_freqs;    // per user
  BlockBOptions block_b;
};

struct RoundDecision {
  std::vector<int> selected;
  std::vector<double> powers;  // aligned with selected
  Eigen::VectorXcd q;
  Eigen::VectorXcd w;
  ArrayGeometry geometry;
  ChannelRealization channel;  // realization on the decided geometry
  bool digital = false;
  double eta = 0.0;            // 0 lets the aggregator pick its default
  bool fallback = false;
  std::string note;
};

/// MRC SNR at full power for every user.
std::vector<double> max_power_snrs(const RoundContext& ctx);

/// One greedy pass: each element moved to the best of a grid inside its spacing window,
/// then the combiner is refreshed. Post-combining SNR at the given powers never decreases.
struct GreedyPass {
  ArrayGeometry geometry;
  Eigen::VectorXcd q;
  double snr_before = 0.0;
  double snr_after = 0.0;
};
GreedyPass greedy_geometry_pass(const RoundContext& ctx, const std::vector<int>& selected,
                                std::span<const double> powers, int grid_points = 33);

RoundDecision select_sca_pdd(const RoundContext& ctx, const ParticipationLedger& ledger, int k,
                             double fairness_weight);

RoundDecision select_baseline(PolicyKind kind, const RoundContext& ctx, int k,
                              double gibbs_temperature, std::mt19937_64& rng);

}  // namespace otafl
