#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "otafl/channel.hpp"
#include "otafl/config.hpp"
#include "otafl/fl_core.hpp"
#include "otafl/metrics_io.hpp"
#include "otafl/resource.hpp"
#include "otafl/scheduler.hpp"

namespace otafl {

/// Everything fixed for one seed before the first round.
struct Scenario {
  FadingConfig fading;
  std::vector<LinkState> links;
  std::vector<double> distances_m;
  ArrayGeometry geometry;
  Budget budget;
  ComputeModel model;
  TaskSpec task;
  PolicyConfig policy;
  BlockBOptions block_b;
};

/// Linear power gain of free space at 1 m followed by a d^-n decay.
double pathloss_gain(double carrier_hz, double distance_m, double exponent);

Scenario build_scenario(const ExperimentConfig& cfg);

struct RunResult {
  std::vector<RoundRecord> rounds;
  RunSummary summary;
  std::vector<int> counts;
  std::vector<Eigen::VectorXd> trajectory;       // params after every round
  std::vector<std::vector<double>> geometries;   // element positions used in each fine-tuning round
  int fallbacks = 0;
  std::optional<std::string> violation;          // set when the run halted on a budget
};

/// Pretrains M rounds, then runs N scheduled federated rounds.
RunResult run_experiment(const ExperimentConfig& cfg);

}  // namespace otafl
