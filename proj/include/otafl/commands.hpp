#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "otafl/config.hpp"
#include "otafl/experiment.hpp"
#include "otafl/fl_core.hpp"

namespace otafl {

/// OTAFL_OUTPUT_ROOT, or the working directory when unset.
std::filesystem::path output_root();

/// {"error": kind, "message": ..., "keys": [...]} on one line.
std::string error_record(const std::string& kind, const std::string& message,
                         const std::vector<std::string>& keys = {});

/// Writes run.jsonl and summary.csv into dir.
void write_run_artifacts(const RunResult& r, const std::filesystem::path& dir);

struct CellResult {
  std::string policy;
  int k = 0;
  std::uint64_t seed = 0;
  RunSummary summary;           // nan metrics when the cell failed
  std::optional<std::string> failure;
  std::filesystem::path dir;
};

struct AggregateRow {
  std::string policy;
  int k = 0;
  int cells = 0;  // successful cells in the mean
  std::vector<double> mean;  // jain, gini, ppl, snr, latency, energy
  std::vector<double> stdev;
};

/// Full policy x k x seed factorial; every cell writes into its own directory under dir.
std::vector<CellResult> run_compare(const ExperimentConfig& base, const std::vector<std::string>& policies,
                                    const std::vector<int>& ks, const std::vector<std::uint64_t>& seeds,
                                    int workers, const std::optional<std::filesystem::path>& dir);

/// Mean and sample standard deviation per (policy, k) over successful cells, in first-seen order.
std::vector<AggregateRow> aggregate_cells(const std::vector<CellResult>& cells);

std::string aggregate_csv_header();
std::string aggregate_csv_row(const AggregateRow& a);

struct BoundGrid {
  std::vector<int> M;
  std::vector<int> N;
  std::vector<double> sigma2;
};

/// "M=0,2;N=5,10;sigma2=0,0.01". Throws ConfigError on malformed text.
BoundGrid parse_bound_grid(const std::string& text);

struct BoundPoint {
  int M = 0;
  int N = 0;
  double sigma2 = 0.0;
  BoundBreakdown bound;
  double empirical_mean = 0.0;
  double slack = 0.0;
  bool violation = false;
};

/// Monte-Carlo final fine-tuning loss with every user aggregated ideally plus N(0, sigma2) noise.
std::vector<BoundPoint> run_bound_check(const ExperimentConfig& cfg, const BoundGrid& grid, int trials,
                                        int workers);

std::string bound_csv_header();
std::string bound_csv_row(const BoundPoint& p);

int cmd_run(const std::string& config_path, std::ostream& out, std::ostream& err);
int cmd_compare(const std::string& config_path, const std::vector<std::string>& policies,
                const std::vector<int>& ks, const std::vector<std::uint64_t>& seeds, int workers,
                std::ostream& out, std::ostream& err);
int cmd_bound_check(const std::string& config_path, const std::string& grid, int trials, int workers,
                    std::ostream& out, std::ostream& err);

}  // namespace otafl
