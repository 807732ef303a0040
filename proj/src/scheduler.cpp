#include "otafl/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "otafl/errors.hpp"
#include "otafl/fl_core.hpp"

namespace otafl {

namespace {

const std::vector<std::pair<PolicyKind, std::string>>& policy_names() {
  static const std::vector<std::pair<PolicyKind, std::string>> names = {
      {PolicyKind::kDigitalFedAvg, "digital_fedavg"}, {PolicyKind::kTopkSnr, "topk_snr"},
      {PolicyKind::kGibbs, "gibbs"},                  {PolicyKind::kOtaNoPc, "ota_nopc"},
      {PolicyKind::kMaGreedy, "ma_greedy"},           {PolicyKind::kScaPdd, "sca_pdd"}};
  return names;
}

double noise_power(const RoundContext& ctx) {
  return ctx.links.front().ul_bandwidth * ctx.links.front().ul_noise_density;
}

std::vector<Eigen::VectorXcd> ul_channels(const ChannelRealization& ch, const std::vector<int>& sel) {
  std::vector<Eigen::VectorXcd> out;
  for (int u : sel) out.push_back(ch.users[static_cast<std::size_t>(u)].ul);
  return out;
}

std::vector<Eigen::VectorXcd> dl_channels(const ChannelRealization& ch, const std::vector<int>& sel) {
  std::vector<Eigen::VectorXcd> out;
  for (int u : sel) out.push_back(ch.users[static_cast<std::size_t>(u)].dl);
  return out;
}

// Transmit powers that make gain_u sqrt(p_u) / eta equal the batch weight, capped at P_a.
void align_powers(const RoundContext& ctx, RoundDecision& d) {
  std::vector<double> b;
  for (int u : d.selected) b.push_back(ctx.batch_sizes[static_cast<std::size_t>(u)]);
  const std::vector<double> w = batch_weights(b);
  std::vector<double> gains;
  double eta = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < d.selected.size(); ++i) {
    const double g = std::abs(d.q.dot(d.channel.users[static_cast<std::size_t>(d.selected[i])].ul));
    gains.push_back(g);
    eta = std::min(eta, g * std::sqrt(ctx.budget.max_power) / w[i]);
  }
  d.powers.clear();
  if (!(eta > 0.0) || !std::isfinite(eta)) {
    d.powers.assign(d.selected.size(), ctx.budget.max_power);
    d.eta = 0.0;
    return;
  }
  for (std::size_t i = 0; i < d.selected.size(); ++i) {
    const double amp = w[i] * eta / gains[i];
    d.powers.push_back(std::min(ctx.budget.max_power, amp * amp));
  }
  d.eta = eta;
}

// Keeps whichever candidate gives the weakest selected user the larger gain.
Eigen::VectorXcd stronger_worst_case(const std::vector<Eigen::VectorXcd>& hs, const Eigen::VectorXcd& a,
                                     const Eigen::VectorXcd& b) {
  auto worst = [&](const Eigen::VectorXcd& v) {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& h : hs) m = std::min(m, std::abs(v.dot(h)) / v.norm());
    return m;
  };
  return worst(b) > worst(a) ? b : a;
}

void standard_beams(RoundDecision& d, double max_power) {
  const std::vector<double> pw(d.selected.size(), max_power);
  d.q = principal_combiner(ul_channels(d.channel, d.selected), pw);
  d.w = principal_combiner(dl_channels(d.channel, d.selected), pw);
}

}  // namespace

std::string to_string(PolicyKind k) {
  for (const auto& [kind, name] : policy_names())
    if (kind == k) return name;
  return "unknown";
}

PolicyKind policy_from_string(const std::string& name) {
  for (const auto& [kind, n] : policy_names())
    if (n == name) return kind;
  throw ConfigError("unknown policy '" + name + "'", {"policy.kind"});
}

const std::vector<PolicyKind>& all_policies() {
  static const std::vector<PolicyKind> all = {PolicyKind::kDigitalFedAvg, PolicyKind::kTopkSnr,
                                              PolicyKind::kGibbs,         PolicyKind::kOtaNoPc,
                                              PolicyKind::kMaGreedy,      PolicyKind::kScaPdd};
  return all;
}

void ParticipationLedger::record(const std::vector<int>& selected) {
  for (int u : selected) counts.at(static_cast<std::size_t>(u)) += 1;
  total_selected += static_cast<long>(selected.size());
  rounds_elapsed += 1;
}

void PolicyConfig::validate(int num_users) const {
  if (k < 1 || k > num_users)
    throw ConfigError("policy: concurrency k must satisfy 1 <= k <= U (k=" + std::to_string(k) +
                          ", U=" + std::to_string(num_users) + ")",
                      {"policy.k"});
  if (!(gibbs_temperature > 0.0))
    throw ConfigError("policy: gibbs temperature must be positive", {"policy.gibbs_temperature"});
  if (!(fairness_weight >= 0.0))
    throw ConfigError("policy: fairness weight must be nonnegative", {"policy.fairness_weight"});
}

std::vector<int> select_topk_snr(std::span<const double> snrs, int k) {
  const int U = static_cast<int>(snrs.size());
  if (k > U) throw ConfigError("select_topk_snr: k exceeds the number of users", {"policy.k"});
  std::vector<int> idx(static_cast<std::size_t>(U));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return snrs[static_cast<std::size_t>(a)] > snrs[static_cast<std::size_t>(b)];
  });
  idx.resize(static_cast<std::size_t>(std::max(k, 0)));
  std::sort(idx.begin(), idx.end());
  return idx;
}

GibbsDraw select_gibbs(std::span<const double> qualities, int k, double temperature,
                       std::mt19937_64& rng) {
  const int U = static_cast<int>(qualities.size());
  if (k > U) throw ConfigError("select_gibbs: k exceeds the number of users", {"policy.k"});
  for (double q : qualities)
    if (!(q >= 0.0)) throw DomainError("select_gibbs: negative quality");
  GibbsDraw out;
  std::vector<int> remaining(static_cast<std::size_t>(U));
  std::iota(remaining.begin(), remaining.end(), 0);
  for (int draw = 0; draw < k; ++draw) {
    double top = 0.0;
    for (int u : remaining) top = std::max(top, qualities[static_cast<std::size_t>(u)]);
    std::vector<double> w;
    for (int u : remaining) {
      const double q = qualities[static_cast<std::size_t>(u)];
      // normalizing by the current maximum keeps small temperatures from underflowing
      w.push_back(top > 0.0 && q > 0.0 ? std::exp(std::log(q / top) / temperature) : 0.0);
    }
    if (top <= 0.0) {
      out.uniform_fallback = true;
      std::fill(w.begin(), w.end(), 1.0);
    }
    std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
    const std::size_t j = pick(rng);
    out.users.push_back(remaining[j]);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(j));
  }
  std::sort(out.users.begin(), out.users.end());
  return out;
}

std::vector<int> select_by_participation_debt(std::span<const double> latency_share,
                                              const ParticipationLedger& ledger, int k,
                                              double fairness_weight) {
  const int U = static_cast<int>(latency_share.size());
  if (k > U) throw ConfigError("select_sca_pdd: k exceeds the number of users", {"policy.k"});
  std::vector<double> debt(static_cast<std::size_t>(U), 0.0);
  if (ledger.rounds_elapsed > 0)
    for (int u = 0; u < U; ++u)
      debt[static_cast<std::size_t>(u)] =
          static_cast<double>(ledger.counts.at(static_cast<std::size_t>(u))) / ledger.rounds_elapsed;
  std::vector<int> idx(static_cast<std::size_t>(U));
  std::iota(idx.begin(), idx.end(), 0);
  const bool lexicographic = std::isinf(fairness_weight);
  auto score = [&](int u) {
    const auto i = static_cast<std::size_t>(u);
    return fairness_weight > 0.0 ? latency_share[i] + fairness_weight * debt[i] : latency_share[i];
  };
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (lexicographic) {
      const auto ia = static_cast<std::size_t>(a), ib = static_cast<std::size_t>(b);
      if (debt[ia] != debt[ib]) return debt[ia] < debt[ib];
      return latency_share[ia] < latency_share[ib];
    }
    return score(a) < score(b);
  });
  idx.resize(static_cast<std::size_t>(k));
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<double> max_power_snrs(const RoundContext& ctx) {
  std::vector<double> s;
  const double n0 = noise_power(ctx);
  for (const auto& u : ctx.channel.users) s.push_back(u.ul.squaredNorm() * ctx.budget.max_power / n0);
  return s;
}

GreedyPass greedy_geometry_pass(const RoundContext& ctx, const std::vector<int>& selected,
                                std::span<const double> powers, int grid_points) {
  GreedyPass out;
  out.geometry = ctx.geometry;
  const double n0 = noise_power(ctx);
  auto channels_at = [&](const ArrayGeometry& g) {
    std::vector<Eigen::VectorXcd> hs;
    for (int u : selected) {
      const auto i = static_cast<std::size_t>(u);
      hs.push_back(synthesize_channel(ctx.fading, ctx.links[i], ctx.channel.fading[i], g).ul);
    }
    return hs;
  };
  auto hs = channels_at(out.geometry);
  const Eigen::VectorXcd q0 = principal_combiner(hs, powers);
  out.snr_before = post_combining_snr(hs, q0, powers, n0);
  double best = out.snr_before;
  const double v = out.geometry.min_spacing;
  for (std::size_t e = 0; e < out.geometry.size(); ++e) {
    const double here = out.geometry.positions[e];
    double lo = 0.0, hi = out.geometry.aperture;
    for (std::size_t j = 0; j < out.geometry.size(); ++j) {
      if (j == e) continue;
      const double p = out.geometry.positions[j];
      if (p <= here) lo = std::max(lo, p + v); else hi = std::min(hi, p - v);
    }
    if (hi < lo) continue;
    double best_pos = here;
    for (int s = 0; s < grid_points; ++s) {
      const double cand = grid_points > 1 ? lo + (hi - lo) * s / (grid_points - 1) : lo;
      ArrayGeometry g = out.geometry;
      g.positions[e] = cand;
      const double snr = post_combining_snr(channels_at(g), q0, powers, n0);
      if (snr > best) {
        best = snr;
        best_pos = cand;
      }
    }
    out.geometry.positions[e] = best_pos;
  }
  hs = channels_at(out.geometry);
  out.q = principal_combiner(hs, powers);
  out.snr_after = post_combining_snr(hs, out.q, powers, n0);
  return out;
}

RoundDecision select_baseline(PolicyKind kind, const RoundContext& ctx, int k,
                              double gibbs_temperature, std::mt19937_64& rng) {
  const int U = static_cast<int>(ctx.links.size());
  if (k < 1 || k > U) throw ConfigError("policy: k must satisfy 1 <= k <= U", {"policy.k"});
  RoundDecision d;
  d.geometry = ctx.geometry;
  d.channel = ctx.channel;
  const std::vector<double> snrs = max_power_snrs(ctx);
  switch (kind) {
    case PolicyKind::kDigitalFedAvg: {
      // k orthogonal blocks of B_ul / k; rank by the resulting rate
      std::vector<double> rates;
      const double b = ctx.links.front().ul_bandwidth / k;
      for (std::size_t u = 0; u < snrs.size(); ++u)
        rates.push_back(shannon_rate(b, snrs[u] * ctx.links.front().ul_bandwidth / b));
      d.selected = select_topk_snr(rates, k);
      d.digital = true;
      standard_beams(d, ctx.budget.max_power);
      d.powers.assign(d.selected.size(), ctx.budget.max_power);
      return d;
    }
    case PolicyKind::kTopkSnr:
      d.selected = select_topk_snr(snrs, k);
      standard_beams(d, ctx.budget.max_power);
      align_powers(ctx, d);
      return d;
    case PolicyKind::kGibbs: {
      const double top = *std::max_element(snrs.begin(), snrs.end());
      std::vector<double> quality;
      for (double s : snrs) quality.push_back(top > 0.0 ? s / top : 0.0);
      const GibbsDraw g = select_gibbs(quality, k, gibbs_temperature, rng);
      d.selected = g.users;
      if (g.uniform_fallback) d.note = "gibbs: all-zero qualities, uniform fallback";
      standard_beams(d, ctx.budget.max_power);
      align_powers(ctx, d);
      return d;
    }
    case PolicyKind::kOtaNoPc:
      d.selected = select_topk_snr(snrs, k);
      standard_beams(d, ctx.budget.max_power);
      d.powers.assign(d.selected.size(), ctx.budget.max_power);
      d.eta = 0.0;
      return d;
    case PolicyKind::kMaGreedy: {
      d.selected = select_topk_snr(snrs, k);
      const std::vector<double> pw(d.selected.size(), ctx.budget.max_power);
      const GreedyPass pass = greedy_geometry_pass(ctx, d.selected, pw);
      d.geometry = pass.geometry;
      d.channel = resynthesize(ctx.channel, ctx.fading, ctx.links, d.geometry);
      d.q = pass.q;
      d.w = principal_combiner(dl_channels(d.channel, d.selected), pw);
      align_powers(ctx, d);
      return d;
    }
    case PolicyKind::kScaPdd:
      break;
  }
  throw ConfigError("select_baseline: sca_pdd is not a baseline", {"policy.kind"});
}

RoundDecision select_sca_pdd(const RoundContext& ctx, const ParticipationLedger& ledger, int k,
                             double fairness_weight) {
  const std::size_t U = ctx.links.size();
  const LinkState& ref = ctx.links.front();
  std::vector<double> t(U);
  double total = 0.0;
  for (std::size_t u = 0; u < U; ++u) {
    const auto& h = ctx.channel.users[u];
    const double r_ul = shannon_rate(ref.ul_bandwidth, h.ul.squaredNorm() * ctx.budget.max_power /
                                                           (ref.ul_bandwidth * ref.ul_noise_density));
    const double r_dl = shannon_rate(ref.dl_bandwidth, h.dl.squaredNorm() * ref.server_power /
                                                           (ref.dl_bandwidth * ref.dl_noise_density));
    const double compute = ctx.batch_sizes[u] * ctx.model.flops_per_sample /
                           (ctx.cpu_freqs[u] * ctx.model.client_cycle_factor.at(u));
    t[u] = (r_ul > 0.0 && r_dl > 0.0)
               ? ctx.budget.payload_bits / r_dl + compute + ctx.budget.payload_bits / r_ul
               : std::numeric_limits<double>::infinity();
    if (std::isfinite(t[u])) total += t[u];
  }
  std::vector<double> share(U);
  for (std::size_t u = 0; u < U; ++u) share[u] = std::isfinite(t[u]) && total > 0.0 ? t[u] / total : 1.0;

  RoundDecision d;
  d.selected = select_by_participation_debt(share, ledger, k, fairness_weight);
  d.geometry = ctx.geometry;
  d.channel = ctx.channel;

  BlockBProblem p;
  const double n = static_cast<double>(ctx.geometry.size());
  for (int u : d.selected) {
    const auto& h = ctx.channel.users[static_cast<std::size_t>(u)];
    const auto& l = ctx.links[static_cast<std::size_t>(u)];
    p.users.push_back({h.ul.norm() / std::sqrt(n), h.dl.norm() / std::sqrt(n), l.aoa, l.aod,
                       ctx.budget.max_power});
  }
  p.wavelength = ref.wavelength;
  p.ul_bandwidth = ref.ul_bandwidth;
  p.dl_bandwidth = ref.dl_bandwidth;
  p.ul_noise_density = ref.ul_noise_density;
  p.dl_noise_density = ref.dl_noise_density;
  p.server_power = ref.server_power;
  p.payload_bits = ctx.budget.payload_bits;
  try {
    const BlockBResult bb = solve_block_b(p, ctx.geometry, ctx.block_b);
    d.geometry = bb.state.geometry;
    d.channel = resynthesize(ctx.channel, ctx.fading, ctx.links, d.geometry);
    // the solver sees the line-of-sight model only; scattered or blocked rounds may favor
    // the eigen-combiner of the realized channel
    const std::vector<double> pw(d.selected.size(), ctx.budget.max_power);
    const auto hul = ul_channels(d.channel, d.selected);
    const auto hdl = dl_channels(d.channel, d.selected);
    d.q = stronger_worst_case(hul, bb.state.q, principal_combiner(hul, pw));
    d.w = stronger_worst_case(hdl, bb.state.w, principal_combiner(hdl, pw));
  } catch (const InfeasibleError& e) {
    std::mt19937_64 unused;
    RoundDecision fb = select_baseline(PolicyKind::kTopkSnr, ctx, k, 1.0, unused);
    fb.fallback = true;
    fb.note = std::string("sca_pdd: solver infeasible, topk_snr fallback: ") + e.what();
    return fb;
  }
  align_powers(ctx, d);
  return d;
}

}  // namespace otafl
