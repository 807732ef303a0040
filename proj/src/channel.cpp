#include "otafl/channel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "otafl/errors.hpp"
#include "otafl/metrics_io.hpp"
#include "otafl/rng.hpp"

namespace otafl {

void ArrayGeometry::validate() const {
  if (positions.empty()) throw DomainError("geometry: no elements");
  if (!(aperture >= 0.0)) throw DomainError("geometry: negative aperture");
  for (double x : positions) {
    if (!(x >= -1e-12 && x <= aperture + 1e-12))
      throw DomainError("geometry: element outside aperture");
  }
  if (min_gap() < min_spacing - 1e-6) throw DomainError("geometry: spacing below minimum");
}

double ArrayGeometry::min_gap() const {
  std::vector<double> s = positions;
  std::sort(s.begin(), s.end());
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < s.size(); ++i) gap = std::min(gap, s[i] - s[i - 1]);
  return gap;
}

ArrayGeometry uniform_geometry(int n, double pitch, double min_spacing, double aperture) {
  if (n < 1) throw DomainError("uniform_geometry: need at least one element");
  ArrayGeometry g;
  g.min_spacing = min_spacing;
  g.aperture = aperture;
  const double span = pitch * (n - 1);
  const double start = 0.5 * (aperture - span);
  for (int i = 0; i < n; ++i) g.positions.push_back(start + pitch * i);
  g.validate();
  return g;
}

void LinkState::validate() const {
  if (!(wavelength > 0.0)) throw DomainError("link: wavelength must be positive");
  if (!(ul_bandwidth > 0.0 && dl_bandwidth > 0.0))
    throw DomainError("link: bandwidths must be positive");
  if (!(ul_noise_density > 0.0 && dl_noise_density > 0.0))
    throw DomainError("link: noise densities must be positive");
  if (!(aoa >= 0.0 && aoa <= kPi) || !(aod >= 0.0 && aod <= kPi))
    throw DomainError("link: angles must lie in [0, pi]");
  if (!(server_power >= 0.0)) throw DomainError("link: negative server power");
}

Beamformer Beamformer::normalized(const Eigen::VectorXcd& v, BeamRole role) {
  Beamformer b;
  b.role = role;
  const double n = v.norm();
  if (n > 0.0) {
    b.weights = v / n;
  } else {
    b.weights = Eigen::VectorXcd::Zero(v.size());
    if (v.size() > 0) b.weights(0) = 1.0;
  }
  return b;
}

void Beamformer::validate() const {
  if (std::abs(weights.norm() - 1.0) > 1e-9) throw DomainError("beamformer: not unit norm");
}

void FadingConfig::validate() const {
  if (!(p_los >= 0.0 && p_los <= 1.0)) throw DomainError("fading: p_los outside [0,1]");
  if (!(blockage_prob >= 0.0 && blockage_prob <= 1.0))
    throw DomainError("fading: blockage_prob outside [0,1]");
  if (num_paths < 1) throw DomainError("fading: num_paths must be >= 1");
  if (!(shadowing_std_db >= 0.0)) throw DomainError("fading: negative shadowing std");
  if (!(carrier_hz > 0.0)) throw DomainError("fading: carrier must be positive");
  if (!(user_speed_mps >= 0.0)) throw DomainError("fading: negative speed");
}

Eigen::VectorXcd array_response(const ArrayGeometry& g, double angle, LinkDir mode,
                                double wavelength) {
  if (g.positions.empty()) throw DomainError("array_response: empty geometry");
  if (!(wavelength > 0.0)) throw DomainError("array_response: wavelength must be positive");
  const double proj = mode == LinkDir::kUplink ? std::cos(angle) : std::sin(angle);
  const double k = 2.0 * kPi / wavelength;
  Eigen::VectorXcd a(static_cast<Eigen::Index>(g.size()));
  for (std::size_t i = 0; i < g.size(); ++i) {
    a(static_cast<Eigen::Index>(i)) = std::polar(1.0, k * g.positions[i] * proj);
  }
  return a;
}

double shannon_rate(double bandwidth, double snr_linear) {
  return bandwidth * std::log2(1.0 + snr_linear);
}

Eigen::VectorXcd los_channel(const LinkState& link, const ArrayGeometry& g, LinkDir dir) {
  if (dir == LinkDir::kUplink)
    return link.ul_path_gain * array_response(g, link.aoa, dir, link.wavelength);
  return link.dl_path_gain * array_response(g, link.aod, dir, link.wavelength);
}

double uplink_rate(const LinkState& link, const ArrayGeometry& g, const Beamformer& q,
                   double power) {
  if (power < 0.0) throw DomainError("uplink_rate: negative power");
  const Eigen::VectorXcd h = los_channel(link, g, LinkDir::kUplink);
  const double gain2 = std::norm(q.weights.dot(h));  // dot() conjugates q
  return shannon_rate(link.ul_bandwidth,
                      gain2 * power / (link.ul_bandwidth * link.ul_noise_density));
}

double downlink_rate(const LinkState& link, const ArrayGeometry& g, const Beamformer& w) {
  const Eigen::VectorXcd h = los_channel(link, g, LinkDir::kDownlink);
  const double gain2 = std::norm(h.dot(w.weights));
  return shannon_rate(link.dl_bandwidth,
                      gain2 * link.server_power / (link.dl_bandwidth * link.dl_noise_density));
}

UserFading draw_user_fading(const FadingConfig& cfg, int round, int user) {
  auto rng = make_rng(cfg.rng_seed, Stream::kFading, static_cast<std::uint64_t>(round),
                      static_cast<std::uint64_t>(user));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  UserFading f;
  const bool los_state = unif(rng) < cfg.p_los;
  const bool blocked = unif(rng) < cfg.blockage_prob;
  f.los = los_state && !blocked;
  f.shadow_amp = std::pow(10.0, cfg.shadowing_std_db * normal(rng) / 20.0);
  auto draw_rays = [&](std::vector<Ray>& rays) {
    rays.resize(static_cast<std::size_t>(cfg.num_paths));
    for (auto& r : rays) {
      r.angle = kPi * unif(rng);
      const double re = normal(rng), im = normal(rng);
      r.gain = cd(re, im) / std::sqrt(2.0);
    }
  };
  draw_rays(f.ul_rays);
  draw_rays(f.dl_rays);
  return f;
}

UserChannel synthesize_channel(const FadingConfig& cfg, const LinkState& link,
                               const UserFading& f, const ArrayGeometry& g) {
  double los_amp = 1.0, scatter_amp = 0.0;
  if (!std::isinf(cfg.rician_k_db)) {
    const double k = std::pow(10.0, cfg.rician_k_db / 10.0);
    los_amp = std::sqrt(k / (k + 1.0));
    scatter_amp = std::sqrt(1.0 / ((k + 1.0) * cfg.num_paths));
  }
  auto build = [&](LinkDir dir, double angle, const std::vector<Ray>& rays, cd path_gain) {
    Eigen::VectorXcd h = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(g.size()));
    if (f.los) h += los_amp * array_response(g, angle, dir, link.wavelength);
    if (scatter_amp > 0.0) {
      for (const auto& r : rays)
        h += scatter_amp * r.gain * array_response(g, r.angle, dir, link.wavelength);
    }
    return Eigen::VectorXcd(path_gain * f.shadow_amp * h);
  };
  UserChannel c;
  c.ul = build(LinkDir::kUplink, link.aoa, f.ul_rays, link.ul_path_gain);
  c.dl = build(LinkDir::kDownlink, link.aod, f.dl_rays, link.dl_path_gain);
  return c;
}

ChannelRealization draw_round_channel(const FadingConfig& cfg, std::span<const LinkState> links,
                                      const ArrayGeometry& g, int round) {
  ChannelRealization r;
  r.round = round;
  r.fading.reserve(links.size());
  for (std::size_t u = 0; u < links.size(); ++u)
    r.fading.push_back(draw_user_fading(cfg, round, static_cast<int>(u)));
  return resynthesize(r, cfg, links, g);
}

ChannelRealization resynthesize(const ChannelRealization& r, const FadingConfig& cfg,
                                std::span<const LinkState> links, const ArrayGeometry& g) {
  ChannelRealization out;
  out.round = r.round;
  out.fading = r.fading;
  out.users.reserve(links.size());
  for (std::size_t u = 0; u < links.size(); ++u)
    out.users.push_back(synthesize_channel(cfg, links[u], r.fading[u], g));
  return out;
}

double post_combining_snr(std::span<const Eigen::VectorXcd> channels, const Eigen::VectorXcd& q,
                          std::span<const double> powers, double noise_power) {
  if (channels.empty()) throw DomainError("post_combining_snr: no active users");
  if (powers.size() != channels.size())
    throw DomainError("post_combining_snr: power/channel count mismatch");
  if (!(noise_power > 0.0)) throw DomainError("post_combining_snr: noise power must be positive");
  double signal = 0.0;
  for (std::size_t u = 0; u < channels.size(); ++u)
    signal += std::norm(q.dot(channels[u])) * powers[u];
  return signal / (noise_power * q.squaredNorm());
}

Eigen::VectorXcd principal_combiner(std::span<const Eigen::VectorXcd> channels,
                                    std::span<const double> weights) {
  if (channels.empty()) throw DomainError("principal_combiner: no channels");
  const Eigen::Index n = channels.front().size();
  Eigen::MatrixXcd r = Eigen::MatrixXcd::Zero(n, n);
  for (std::size_t u = 0; u < channels.size(); ++u)
    r += weights[u] * channels[u] * channels[u].adjoint();
  if (channels.size() == 1) return Beamformer::normalized(channels.front(), BeamRole::kReceive).weights;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(r);
  Eigen::VectorXcd v = es.eigenvectors().col(n - 1);
  // fix the arbitrary global phase so the first nonzero entry is real positive
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(v(i)) > 1e-12) {
      v *= std::conj(v(i)) / std::abs(v(i));
      break;
    }
  }
  return v / v.norm();
}

void write_channel_csv(std::ostream& out, const ChannelRealization& r, bool header) {
  if (r.users.empty()) return;
  const Eigen::Index n = r.users.front().ul.size();
  if (header) {
    out << "round,user";
    for (Eigen::Index i = 0; i < n; ++i) out << ",re_" << i << ",im_" << i;
    out << '\n';
  }
  for (std::size_t u = 0; u < r.users.size(); ++u) {
    out << r.round << ',' << u;
    for (Eigen::Index i = 0; i < n; ++i)
      out << ',' << format_double(r.users[u].ul(i).real()) << ','
          << format_double(r.users[u].ul(i).imag());
    out << '\n';
  }
}

}  // namespace otafl
