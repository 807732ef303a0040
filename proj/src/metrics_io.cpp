#include "otafl/metrics_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "otafl/errors.hpp"

namespace otafl {

namespace {

// Sorting first makes both indices exactly permutation invariant.
std::vector<double> sorted_shares(std::span<const double> x, const char* what) {
  if (x.empty()) throw DomainError(std::string(what) + ": empty share vector");
  std::vector<double> s(x.begin(), x.end());
  for (double v : s) {
    if (!(v >= 0.0) || !std::isfinite(v))
      throw DomainError(std::string(what) + ": shares must be finite and nonnegative");
  }
  std::sort(s.begin(), s.end());
  // relative to the largest share, so equal shares become exactly 1
  if (s.back() > 0.0)
    for (double& v : s) v /= s.back();
  return s;
}

}  // namespace

double jain_index(std::span<const double> shares) {
  auto s = sorted_shares(shares, "jain_index");
  double sum = 0.0, sq = 0.0;
  for (double v : s) {
    sum += v;
    sq += v * v;
  }
  if (sum <= 0.0) throw DomainError("jain_index: all-zero shares");
  return (sum * sum) / (static_cast<double>(s.size()) * sq);
}

double gini_coefficient(std::span<const double> shares) {
  auto s = sorted_shares(shares, "gini_coefficient");
  const double n = static_cast<double>(s.size());
  double sum = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    sum += s[i];
    // sum_{u,v} |x_u - x_v| = 2 * sum_i (2i - n + 1) x_(i) with 0-based sorted order
    pairs += (2.0 * static_cast<double>(i) - n + 1.0) * s[i];
  }
  if (sum <= 0.0) throw DomainError("gini_coefficient: shares sum to zero");
  return std::max(0.0, (2.0 * pairs) / (2.0 * n * sum));
}

double perplexity(double mean_nll) { return std::exp(mean_nll); }

double avg_snr_db(std::span<const double> snrs_linear) {
  if (snrs_linear.empty()) throw DomainError("avg_snr_db: no rounds");
  double acc = 0.0;
  for (double s : snrs_linear) {
    if (!(s > 0.0)) throw DomainError("avg_snr_db: nonpositive SNR");
    acc += 10.0 * std::log10(s);
  }
  return acc / static_cast<double>(snrs_linear.size());
}

std::vector<double> participation_shares(std::span<const int> counts) {
  std::vector<double> out(counts.size(), 0.0);
  const long total = std::accumulate(counts.begin(), counts.end(), 0L);
  if (total == 0) return out;
  for (std::size_t i = 0; i < counts.size(); ++i)
    out[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
  return out;
}

nlohmann::ordered_json to_json(const RoundRecord& r) {
  nlohmann::ordered_json j;
  j["round"] = r.round;
  j["phase"] = r.phase;
  j["selected"] = r.selected;
  j["snr_db"] = r.snr_db ? nlohmann::ordered_json(*r.snr_db) : nlohmann::ordered_json(nullptr);
  j["latency_s"] = r.latency_s;
  j["energy_j"] = r.energy_j;
  j["loss"] = r.loss;
  j["ppl"] = r.ppl;
  j["mismatch_norm"] = r.mismatch_norm;
  j["jain_so_far"] =
      r.jain_so_far ? nlohmann::ordered_json(*r.jain_so_far) : nlohmann::ordered_json(nullptr);
  j["gini_so_far"] =
      r.gini_so_far ? nlohmann::ordered_json(*r.gini_so_far) : nlohmann::ordered_json(nullptr);
  return j;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string summary_csv_header() {
  return "policy,k,seed,jain_r30,gini_r30,ppl_r30,avg_snr_db,total_latency_s,total_energy_j";
}

std::string summary_csv_row(const RunSummary& s) {
  std::string row = s.policy + "," + std::to_string(s.k) + "," + std::to_string(s.seed);
  for (double v : {s.jain_r30, s.gini_r30, s.ppl_r30, s.avg_snr_db, s.total_latency_s,
                   s.total_energy_j})
    row += "," + format_double(v);
  return row;
}

void JsonlWriter::write(const nlohmann::ordered_json& obj) { out_ << obj.dump() << '\n'; }

}  // namespace otafl
