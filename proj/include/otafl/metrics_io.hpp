#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace otafl {

/// (sum x)^2 / (U * sum x^2). Shares must be nonnegative and not all zero.
double jain_index(std::span<const double> shares);

/// Mean absolute difference over all ordered pairs, divided by 2 * U * sum x.
double gini_coefficient(std::span<const double> shares);

double perplexity(double mean_nll);

/// Mean of per-round 10*log10(snr). Every snr must be > 0.
double avg_snr_db(std::span<const double> snrs_linear);

/// counts / sum(counts); all zeros when nobody was selected yet.
std::vector<double> participation_shares(std::span<const int> counts);

struct MetricRecord {
  double jain = 0.0;
  double gini = 0.0;
  double ppl = 0.0;
  double avg_snr_db = 0.0;
  int round_horizon = 0;
};

struct RoundRecord {
  int round = 0;
  std::string phase;  // "pretrain" | "finetune"
  std::vector<int> selected;
  std::optional<double> snr_db;
  double latency_s = 0.0;
  double energy_j = 0.0;
  double loss = 0.0;
  double ppl = 0.0;
  double mismatch_norm = 0.0;
  std::optional<double> jain_so_far;
  std::optional<double> gini_so_far;
};

nlohmann::ordered_json to_json(const RoundRecord& r);

struct RunSummary {
  std::string policy;
  int k = 0;
  std::uint64_t seed = 0;
  double jain_r30 = 0.0;
  double gini_r30 = 0.0;
  double ppl_r30 = 0.0;
  double avg_snr_db = 0.0;
  double total_latency_s = 0.0;
  double total_energy_j = 0.0;
};

/// Shortest round-trip decimal form; "nan", "inf", "-inf" for non-finite.
std::string format_double(double v);

std::string summary_csv_header();
std::string summary_csv_row(const RunSummary& s);

/// Appends one JSON object per line.
class JsonlWriter {
 public:
  explicit JsonlWriter(std::ostream& out) : out_(out) {}
  void write(const nlohmann::ordered_json& obj);

 private:
  std::ostream& out_;
};

}  // namespace otafl
