#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

namespace otafl {

using cd = std::complex<double>;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kSpeedOfLight = 299792458.0;

struct ArrayGeometry {
  std::vector<double> positions;  // meters along the aperture segment
  double min_spacing = 0.0;       // v
  double aperture = 0.0;          // X_max, positions live in [0, X_max]

  std::size_t size() const { return positions.size(); }
  /// Throws DomainError on an empty array, out-of-aperture element or spacing < v - 1e-6.
  void validate() const;
  /// Smallest pairwise gap (infinity for a single element).
  double min_gap() const;
};

/// n elements at the given pitch, centred in [0, aperture].
ArrayGeometry uniform_geometry(int n, double pitch, double min_spacing, double aperture);

/// Per-user link parameters.
struct LinkState {
  cd ul_path_gain{1.0, 0.0};  // alpha_u
  cd dl_path_gain{1.0, 0.0};  // beta_u
  double aoa = kPi / 2;       // phi_u in [0, pi]
  double aod = kPi / 2;       // theta_u in [0, pi]
  double wavelength = 1.0;
  double ul_bandwidth = 1.0;
  double dl_bandwidth = 1.0;
  double ul_noise_density = 1.0;
  double dl_noise_density = 1.0;
  double server_power = 1.0;

  void validate() const;
};

enum class BeamRole { kReceive, kTransmit };

struct Beamformer {
  Eigen::VectorXcd weights;
  BeamRole role = BeamRole::kReceive;

  /// Scales v to unit norm; a zero vector becomes the first basis vector.
  static Beamformer normalized(const Eigen::VectorXcd& v, BeamRole role);
  void validate() const;
};

enum class LinkDir { kUplink, kDownlink };

struct FadingConfig {
  double carrier_hz = 28e9;
  double rician_k_db = 8.0;  // +inf gives a pure LoS channel
  int num_paths = 3;
  double p_los = 0.8;
  double blockage_prob = 0.03;
  double shadowing_std_db = 4.0;
  double user_speed_mps = 0.2;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

/// exp(j 2pi/lambda x_i cos(angle)) for uplink, sin(angle) for downlink.
Eigen::VectorXcd array_response(const ArrayGeometry& g, double angle, LinkDir mode,
                                double wavelength);

/// B log2(1 + snr).
double shannon_rate(double bandwidth, double snr_linear);

/// B_ul log2(1 + |q^H h_ul|^2 p / (B_ul N_ul)) on the LoS channel alpha_u a(x).
double uplink_rate(const LinkState& link, const ArrayGeometry& g, const Beamformer& q,
                   double power);

/// B_dl log2(1 + |h_dl^H w|^2 P / (B_dl N_dl)) on the LoS channel beta_u a(x).
double downlink_rate(const LinkState& link, const ArrayGeometry& g, const Beamformer& w);

/// LoS channel vectors for one user.
Eigen::VectorXcd los_channel(const LinkState& link, const ArrayGeometry& g, LinkDir dir);

struct Ray {
  double angle = 0.0;
  cd gain;  // CN(0, 1)
};

/// Random state of one user in one round; geometry independent.
struct UserFading {
  bool los = true;
  double shadow_amp = 1.0;  // linear amplitude factor
  std::vector<Ray> ul_rays;
  std::vector<Ray> dl_rays;
};

struct UserChannel {
  Eigen::VectorXcd ul;
  Eigen::VectorXcd dl;
};

struct ChannelRealization {
  int round = 0;
  std::vector<UserFading> fading;
  std::vector<UserChannel> users;
};

UserFading draw_user_fading(const FadingConfig& cfg, int round, int user);

UserChannel synthesize_channel(const FadingConfig& cfg, const LinkState& link,
                               const UserFading& f, const ArrayGeometry& g);

/// Deterministic in (rng_seed, round, user index).
ChannelRealization draw_round_channel(const FadingConfig& cfg, std::span<const LinkState> links,
                                      const ArrayGeometry& g, int round);

/// Same random draws applied to a different geometry.
ChannelRealization resynthesize(const ChannelRealization& r, const FadingConfig& cfg,
                                std::span<const LinkState> links, const ArrayGeometry& g);

/// sum_u |q^H h_u|^2 p_u / (noise_power ||q||^2).
double post_combining_snr(std::span<const Eigen::VectorXcd> channels, const Eigen::VectorXcd& q,
                          std::span<const double> powers, double noise_power);

/// Unit vector maximizing sum_u p_u |q^H h_u|^2 (principal eigenvector).
Eigen::VectorXcd principal_combiner(std::span<const Eigen::VectorXcd> channels,
                                    std::span<const double> weights);

/// CSV rows: round,user,re_0,im_0,... for the uplink vectors.
void write_channel_csv(std::ostream& out, const ChannelRealization& r, bool header);

}  // namespace otafl
