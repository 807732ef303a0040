#include "otafl/antenna_opt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "otafl/errors.hpp"

namespace otafl {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::Index block_size(const BlockBState& s) { return 4 + 4 * s.q.size(); }

cd complex_at(const Eigen::VectorXd& v, Eigen::Index i) { return {v(i), v(i + 1)}; }

Eigen::VectorXcd complex_block(const Eigen::VectorXd& v, Eigen::Index start, Eigen::Index n) {
  Eigen::VectorXcd out(n);
  for (Eigen::Index i = 0; i < n; ++i) out(i) = cd(v(start + 2 * i), v(start + 2 * i + 1));
  return out;
}

double wrap_phase(double x) { return std::remainder(x, 2.0 * kPi); }

ArrayGeometry with_positions(const ArrayGeometry& g, const std::vector<double>& x) {
  ArrayGeometry out = g;
  out.positions = x;
  return out;
}

Eigen::VectorXcd response(const BlockBProblem& p, const ArrayGeometry& g, std::size_t u,
                          LinkDir dir) {
  const double angle = dir == LinkDir::kUplink ? p.users[u].aoa : p.users[u].aod;
  return array_response(g, angle, dir, p.wavelength);
}

// Multipliers scaled by 1/mu, in complex form, for user u.
struct UserShift {
  cd ul;
  cd dl;
  Eigen::VectorXcd arr_ul;
  Eigen::VectorXcd arr_dl;
};

UserShift user_shift(const BlockBState& s, const PenaltyState& pen, std::size_t u) {
  const Eigen::Index n = s.q.size();
  UserShift out{0.0, 0.0, Eigen::VectorXcd::Zero(n), Eigen::VectorXcd::Zero(n)};
  if (pen.multipliers.size() == 0) return out;
  const Eigen::Index o = static_cast<Eigen::Index>(u) * block_size(s);
  const double inv = 1.0 / pen.penalty_weight;
  out.ul = inv * complex_at(pen.multipliers, o);
  out.dl = inv * complex_at(pen.multipliers, o + 2);
  out.arr_ul = inv * complex_block(pen.multipliers, o + 4, n);
  out.arr_dl = inv * complex_block(pen.multipliers, o + 4 + 2 * n, n);
  return out;
}

// Minimize c_t t + mu/2 sum_u (r_u(t) - |c_u|)_+^2 over t for one link direction.
std::vector<cd> solve_slot(const BlockBProblem& p, const std::vector<cd>& targets, double mu,
                           bool uplink) {
  const std::size_t U = targets.size();
  auto req = [&](std::size_t u, double t) {
    return uplink ? required_gain_ul(p, u, t) : required_gain_dl(p, u, t);
  };
  auto slot = [&](std::size_t u, cd g) {
    return uplink ? slot_time_ul(p, u, g) : slot_time_dl(p, u, g);
  };
  double t_hi = 0.0;
  for (std::size_t u = 0; u < U; ++u) {
    const double mag = std::max(std::abs(targets[u]), 1e-12);
    t_hi = std::max(t_hi, slot(u, cd(mag, 0.0)));
  }
  auto cost = [&](double t) {
    double c = p.time_weight * t;
    for (std::size_t u = 0; u < U; ++u) {
      const double gap = req(u, t) - std::abs(targets[u]);
      if (gap > 0.0) c += 0.5 * mu * gap * gap;
    }
    return c;
  };
  // golden-section search in log t; the cost is convex in t
  double a = std::log(t_hi) - std::log(1e6), b = std::log(t_hi);
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double c1 = b - gr * (b - a), c2 = a + gr * (b - a);
  double f1 = cost(std::exp(c1)), f2 = cost(std::exp(c2));
  for (int it = 0; it < 200 && (b - a) > 1e-14; ++it) {
    // both probes overflow when t is tiny; the minimum is then to the right
    if (f1 < f2 || (f1 == f2 && std::isfinite(f1))) {
      b = c2;
      c2 = c1;
      f2 = f1;
      c1 = b - gr * (b - a);
      f1 = cost(std::exp(c1));
    } else {
      a = c1;
      c1 = c2;
      f1 = f2;
      c2 = a + gr * (b - a);
      f2 = cost(std::exp(c2));
    }
  }
  double t = std::exp(0.5 * (a + b));
  if (cost(t_hi) < cost(t)) t = t_hi;
  std::vector<cd> g(U);
  for (std::size_t u = 0; u < U; ++u) {
    const double r = req(u, t);
    const double mag = std::abs(targets[u]);
    if (mag >= r) {
      g[u] = targets[u];
    } else {
      g[u] = mag > 0.0 ? targets[u] * (r / mag) : cd(r, 0.0);
    }
  }
  return g;
}

void refresh_slots(const BlockBProblem& p, AuxState& a) {
  a.t1 = 0.0;
  a.t2 = 0.0;
  for (std::size_t u = 0; u < p.num_users(); ++u) {
    a.t1 = std::max(a.t1, slot_time_dl(p, u, a.g_dl[u]));
    a.t2 = std::max(a.t2, slot_time_ul(p, u, a.g_ul[u]));
  }
}

}  // namespace

double required_gain_ul(const BlockBProblem& p, std::size_t u, double t) {
  const auto& us = p.users[u];
  const double snr = std::exp2(p.payload_bits / (t * p.ul_bandwidth)) - 1.0;
  return std::sqrt(snr * p.ul_bandwidth * p.ul_noise_density / (us.amp_ul * us.amp_ul * us.power));
}

double required_gain_dl(const BlockBProblem& p, std::size_t u, double t) {
  const auto& us = p.users[u];
  const double snr = std::exp2(p.payload_bits / (t * p.dl_bandwidth)) - 1.0;
  return std::sqrt(snr * p.dl_bandwidth * p.dl_noise_density /
                   (us.amp_dl * us.amp_dl * p.server_power));
}

double slot_time_ul(const BlockBProblem& p, std::size_t u, cd g) {
  const auto& us = p.users[u];
  const double snr = us.amp_ul * us.amp_ul * std::norm(g) * us.power /
                     (p.ul_bandwidth * p.ul_noise_density);
  const double rate = shannon_rate(p.ul_bandwidth, snr);
  return rate > 0.0 ? p.payload_bits / rate : kInf;
}

double slot_time_dl(const BlockBProblem& p, std::size_t u, cd g) {
  const auto& us = p.users[u];
  const double snr = us.amp_dl * us.amp_dl * std::norm(g) * p.server_power /
                     (p.dl_bandwidth * p.dl_noise_density);
  const double rate = shannon_rate(p.dl_bandwidth, snr);
  return rate > 0.0 ? p.payload_bits / rate : kInf;
}

Eigen::VectorXd block_b_residuals(const BlockBProblem& p, const BlockBState& s) {
  const Eigen::Index n = s.q.size();
  const Eigen::Index bs = block_size(s);
  Eigen::VectorXd h(bs * static_cast<Eigen::Index>(p.num_users()));
  for (std::size_t u = 0; u < p.num_users(); ++u) {
    const Eigen::Index o = static_cast<Eigen::Index>(u) * bs;
    const cd r1 = s.aux.g_ul[u] - s.q.dot(s.aux.theta_ul[u]);
    const cd r2 = s.aux.g_dl[u] - s.aux.theta_dl[u].dot(s.w);
    h(o) = r1.real();
    h(o + 1) = r1.imag();
    h(o + 2) = r2.real();
    h(o + 3) = r2.imag();
    const Eigen::VectorXcd d_ul = s.aux.theta_ul[u] - response(p, s.geometry, u, LinkDir::kUplink);
    const Eigen::VectorXcd d_dl =
        s.aux.theta_dl[u] - response(p, s.geometry, u, LinkDir::kDownlink);
    for (Eigen::Index i = 0; i < n; ++i) {
      h(o + 4 + 2 * i) = d_ul(i).real();
      h(o + 5 + 2 * i) = d_ul(i).imag();
      h(o + 4 + 2 * n + 2 * i) = d_dl(i).real();
      h(o + 5 + 2 * n + 2 * i) = d_dl(i).imag();
    }
  }
  return h;
}

double block_b_objective(const BlockBProblem& p, const BlockBState& s, const PenaltyState& pen) {
  double t1 = 0.0, t2 = 0.0;
  for (std::size_t u = 0; u < p.num_users(); ++u) {
    t1 = std::max(t1, slot_time_dl(p, u, s.aux.g_dl[u]));
    t2 = std::max(t2, slot_time_ul(p, u, s.aux.g_ul[u]));
  }
  const Eigen::VectorXd h = block_b_residuals(p, s);
  double pen_term = 0.5 * pen.penalty_weight * h.squaredNorm();
  if (pen.multipliers.size() == h.size()) pen_term += pen.multipliers.dot(h);
  return p.time_weight * (t1 + t2) + pen_term;
}

AuxState solve_aux(const BlockBProblem& p, const BlockBState& s, const PenaltyState& pen) {
  const std::size_t U = p.num_users();
  if (U == 0) throw DomainError("solve_aux: no users");
  std::vector<cd> tgt_ul(U), tgt_dl(U);
  for (std::size_t u = 0; u < U; ++u) {
    const UserShift sh = user_shift(s, pen, u);
    tgt_ul[u] = s.q.dot(s.aux.theta_ul[u]) - sh.ul;
    tgt_dl[u] = s.aux.theta_dl[u].dot(s.w) - sh.dl;
  }
  bool all_zero = true;
  for (std::size_t u = 0; u < U; ++u)
    if (std::abs(tgt_ul[u]) > 0.0 || std::abs(tgt_dl[u]) > 0.0) all_zero = false;
  if (all_zero) throw InfeasibleError("solve_aux: zero effective gain for all users", {"rate"});

  AuxState out = s.aux;
  out.g_ul = solve_slot(p, tgt_ul, pen.penalty_weight, true);
  out.g_dl = solve_slot(p, tgt_dl, pen.penalty_weight, false);
  refresh_slots(p, out);

  BlockBState cand = s;
  cand.aux = out;
  if (block_b_objective(p, cand, pen) > block_b_objective(p, s, pen)) {
    AuxState keep = s.aux;
    refresh_slots(p, keep);
    return keep;
  }
  return out;
}

Eigen::VectorXcd unit_modulus_sweep(cd target, const Eigen::VectorXcd& comb,
                                    const Eigen::VectorXcd& anchor, const Eigen::VectorXcd& theta0) {
  Eigen::VectorXcd th = theta0;
  for (Eigen::Index i = 0; i < th.size(); ++i) {
    const double m = std::abs(th(i));
    th(i) = m > 0.0 ? th(i) / m : cd(1.0, 0.0);
  }
  cd inner = comb.dot(th);  // comb^H theta
  for (Eigen::Index i = 0; i < th.size(); ++i) {
    const cd rest = target - (inner - std::conj(comb(i)) * th(i));
    const cd z = comb(i) * rest + anchor(i);
    if (std::abs(z) > 0.0) {
      const cd next = z / std::abs(z);
      inner += std::conj(comb(i)) * (next - th(i));
      th(i) = next;
    }
  }
  return th;
}

std::pair<std::vector<Eigen::VectorXcd>, std::vector<Eigen::VectorXcd>> unit_modulus_update(
    const BlockBProblem& p, const BlockBState& s, const PenaltyState& pen) {
  std::vector<Eigen::VectorXcd> ul(p.num_users()), dl(p.num_users());
  for (std::size_t u = 0; u < p.num_users(); ++u) {
    const UserShift sh = user_shift(s, pen, u);
    const Eigen::VectorXcd a_ul = response(p, s.geometry, u, LinkDir::kUplink);
    const Eigen::VectorXcd a_dl = response(p, s.geometry, u, LinkDir::kDownlink);
    ul[u] = unit_modulus_sweep(s.aux.g_ul[u] + sh.ul, s.q, a_ul - sh.arr_ul, s.aux.theta_ul[u]);
    dl[u] = unit_modulus_sweep(std::conj(s.aux.g_dl[u] + sh.dl), s.w, a_dl - sh.arr_dl,
                               s.aux.theta_dl[u]);
  }
  return {ul, dl};
}

double sphere_ls_objective(const Eigen::MatrixXcd& theta, const Eigen::VectorXcd& b,
                           const Eigen::VectorXcd& x) {
  return (theta.adjoint() * x - b).squaredNorm();
}

Eigen::VectorXcd sphere_ls_gradient(const Eigen::MatrixXcd& theta, const Eigen::VectorXcd& b,
                                    const Eigen::VectorXcd& x) {
  return 2.0 * theta * (theta.adjoint() * x - b);
}

SphereResult sphere_least_squares(const Eigen::MatrixXcd& theta, const Eigen::VectorXcd& b,
                                  const Eigen::VectorXcd& x0, int max_iter, double grad_tol) {
  SphereResult r;
  r.x = Beamformer::normalized(x0, BeamRole::kReceive).weights;
  auto rgrad = [&](const Eigen::VectorXcd& x) {
    const Eigen::VectorXcd g = sphere_ls_gradient(theta, b, x);
    return Eigen::VectorXcd(g - x.dot(g).real() * x);
  };
  double f = sphere_ls_objective(theta, b, r.x);
  Eigen::VectorXcd rg = rgrad(r.x);
  double alpha = 1.0 / std::max(1e-12, 2.0 * theta.squaredNorm());
  int it = 0;
  for (; it < max_iter; ++it) {
    const double gn2 = rg.squaredNorm();
    if (std::sqrt(gn2) < grad_tol) {
      r.converged = true;
      break;
    }
    bool accepted = false;
    Eigen::VectorXcd x_new;
    double f_new = f;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = r.x - alpha * rg;
      x_new /= x_new.norm();
      f_new = sphere_ls_objective(theta, b, x_new);
      if (f_new <= f - 1e-4 * alpha * gn2) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;
    const Eigen::VectorXcd rg_new = rgrad(x_new);
    const Eigen::VectorXcd sv = x_new - r.x;
    const Eigen::VectorXcd yv = rg_new - rg;
    const double sy = sv.dot(yv).real();
    r.x = x_new;
    f = f_new;
    rg = rg_new;
    // Barzilai-Borwein guess for the next trial step
    alpha = sy > 0.0 ? std::clamp(sv.squaredNorm() / sy, 1e-12, 1e12) : alpha * 2.0;
  }
  r.iterations = it;
  r.objective = f;
  r.riemannian_grad_norm = rg.norm();
  if (r.riemannian_grad_norm < grad_tol) r.converged = true;
  return r;
}

BeamformerUpdate beamformer_update(const BlockBProblem& p, const BlockBState& s,
                                   const PenaltyState& pen, int max_iter) {
  const std::size_t U = p.num_users();
  if (U == 0) throw DomainError("beamformer_update: no users");
  const Eigen::Index n = s.q.size();
  Eigen::MatrixXcd th_ul(n, static_cast<Eigen::Index>(U)), th_dl(n, static_cast<Eigen::Index>(U));
  Eigen::VectorXcd b_ul(static_cast<Eigen::Index>(U)), b_dl(static_cast<Eigen::Index>(U));
  for (std::size_t u = 0; u < U; ++u) {
    const UserShift sh = user_shift(s, pen, u);
    const auto c = static_cast<Eigen::Index>(u);
    th_ul.col(c) = s.aux.theta_ul[u];
    th_dl.col(c) = s.aux.theta_dl[u];
    b_ul(c) = std::conj(s.aux.g_ul[u] + sh.ul);
    b_dl(c) = s.aux.g_dl[u] + sh.dl;
  }
  BeamformerUpdate out;
  out.q_info = sphere_least_squares(th_ul, b_ul, s.q, max_iter);
  out.w_info = sphere_least_squares(th_dl, b_dl, s.w, max_iter);
  out.q = out.q_info.x;
  out.w = out.w_info.x;
  return out;
}

PositionTargets position_targets(const BlockBProblem& p, const BlockBState& s,
                                 const PenaltyState& pen) {
  const double k = 2.0 * kPi / p.wavelength;
  const Eigen::Index n = static_cast<Eigen::Index>(s.geometry.size());
  PositionTargets t;
  for (std::size_t u = 0; u < p.num_users(); ++u) {
    const UserShift sh = user_shift(s, pen, u);
    for (int dir = 0; dir < 2; ++dir) {
      const bool up = dir == 0;
      const double c = up ? k * std::cos(p.users[u].aoa) : k * std::sin(p.users[u].aod);
      const Eigen::VectorXcd tau =
          up ? Eigen::VectorXcd(s.aux.theta_ul[u] + sh.arr_ul)
             : Eigen::VectorXcd(s.aux.theta_dl[u] + sh.arr_dl);
      Eigen::VectorXd psi(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double base = c * s.geometry.positions[static_cast<std::size_t>(i)];
        psi(i) = std::abs(tau(i)) > 0.0 ? base + wrap_phase(std::arg(tau(i)) - base) : base;
      }
      t.psi.push_back(psi);
      t.coeff.push_back(c);
    }
  }
  return t;
}

double position_objective(const PositionTargets& t, const Eigen::VectorXd& x) {
  double f = 0.0;
  for (std::size_t j = 0; j < t.psi.size(); ++j) f += (t.psi[j] - t.coeff[j] * x).squaredNorm();
  return f;
}

Eigen::VectorXd position_gradient(const PositionTargets& t, const Eigen::VectorXd& x) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(x.size());
  for (std::size_t j = 0; j < t.psi.size(); ++j) g -= 2.0 * t.coeff[j] * (t.psi[j] - t.coeff[j] * x);
  return g;
}

double array_penalty(const BlockBProblem& p, const BlockBState& s, const PenaltyState& pen,
                     const std::vector<double>& x) {
  const ArrayGeometry g = with_positions(s.geometry, x);
  double f = 0.0;
  for (std::size_t u = 0; u < p.num_users(); ++u) {
    const UserShift sh = user_shift(s, pen, u);
    // lambda^T h + mu/2 |h|^2 = mu/2 |h + lambda/mu|^2 - |lambda|^2/(2 mu)
    const Eigen::VectorXcd h_ul = s.aux.theta_ul[u] - response(p, g, u, LinkDir::kUplink);
    const Eigen::VectorXcd h_dl = s.aux.theta_dl[u] - response(p, g, u, LinkDir::kDownlink);
    f += 0.5 * pen.penalty_weight *
         ((h_ul + sh.arr_ul).squaredNorm() - sh.arr_ul.squaredNorm() +
          (h_dl + sh.arr_dl).squaredNorm() - sh.arr_dl.squaredNorm());
  }
  return f;
}

Eigen::VectorXd array_penalty_gradient(const BlockBProblem& p, const BlockBState& s,
                                       const PenaltyState& pen, const std::vector<double>& x) {
  const ArrayGeometry g = with_positions(s.geometry, x);
  const double k = 2.0 * kPi / p.wavelength;
  const Eigen::Index n = static_cast<Eigen::Index>(x.size());
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(n);
  for (std::size_t u = 0; u < p.num_users(); ++u) {
    const UserShift sh = user_shift(s, pen, u);
    for (int dir = 0; dir < 2; ++dir) {
      const bool up = dir == 0;
      const LinkDir d = up ? LinkDir::kUplink : LinkDir::kDownlink;
      const double c = up ? k * std::cos(p.users[u].aoa) : k * std::sin(p.users[u].aod);
      const Eigen::VectorXcd a = response(p, g, u, d);
      const Eigen::VectorXcd e =
          (up ? s.aux.theta_ul[u] : s.aux.theta_dl[u]) - a + (up ? sh.arr_ul : sh.arr_dl);
      for (Eigen::Index i = 0; i < n; ++i) {
        // d/dx_i of mu/2 |e_i|^2 with de_i/dx_i = -j c a_i
        const cd de = cd(0.0, -c) * a(i);
        grad(i) += pen.penalty_weight * (std::conj(e(i)) * de).real();
      }
    }
  }
  return grad;
}

namespace {

// Equal-weight pool-adjacent-violators for a nondecreasing fit.
std::vector<double> isotonic_fit(const std::vector<double>& y) {
  std::vector<double> mean;
  std::vector<int> count;
  for (double v : y) {
    mean.push_back(v);
    count.push_back(1);
    while (mean.size() > 1 && mean[mean.size() - 2] > mean.back()) {
      const double m2 = mean.back();
      const int c2 = count.back();
      mean.pop_back();
      count.pop_back();
      const double m1 = mean.back();
      const int c1 = count.back();
      mean.back() = (m1 * c1 + m2 * c2) / (c1 + c2);
      count.back() = c1 + c2;
    }
  }
  std::vector<double> out;
  for (std::size_t b = 0; b < mean.size(); ++b) out.insert(out.end(), static_cast<std::size_t>(count[b]), mean[b]);
  return out;
}

}  // namespace

std::vector<double> solve_position_qp(const PositionTargets& t, const ArrayGeometry& anchor) {
  const std::size_t n = anchor.size();
  const double v = anchor.min_spacing;
  const double room = anchor.aperture - v * static_cast<double>(n - 1);
  if (room < -1e-12) throw InfeasibleError("ma_position_update: spacing does not fit", {"spacing"});
  double a = 0.0;
  for (double c : t.coeff) a += c * c;
  if (a <= 0.0) return anchor.positions;
  std::vector<double> xstar(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double num = 0.0;
    for (std::size_t j = 0; j < t.psi.size(); ++j) num += t.coeff[j] * t.psi[j](static_cast<Eigen::Index>(i));
    xstar[i] = num / a;
  }
  // The spacing constraints linearized at a sorted anchor keep the element order:
  // x_(j+1) - x_(j) >= v. Shifting y_j = x_(j) - j v turns this into bounded isotonic fitting.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return anchor.positions[i] < anchor.positions[j];
  });
  std::vector<double> y(n);
  for (std::size_t j = 0; j < n; ++j) y[j] = xstar[order[j]] - v * static_cast<double>(j);
  std::vector<double> fit = isotonic_fit(y);
  std::vector<double> x(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double yj = std::clamp(fit[j], 0.0, std::max(0.0, room));
    x[order[j]] = yj + v * static_cast<double>(j);
  }
  return x;
}

ArrayGeometry ma_position_update(const BlockBProblem& p, const BlockBState& s,
                                 const PenaltyState& pen) {
  const PositionTargets t = position_targets(p, s, pen);
  const std::vector<double> x_new = solve_position_qp(t, s.geometry);
  const std::vector<double>& x_old = s.geometry.positions;
  const double f_old = array_penalty(p, s, pen, x_old);
  double step = 1.0;
  for (int k = 0; k < 40; ++k) {
    std::vector<double> x(x_old.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = x_old[i] + step * (x_new[i] - x_old[i]);
    if (array_penalty(p, s, pen, x) <= f_old) return with_positions(s.geometry, x);
    step *= 0.5;
  }
  return s.geometry;
}

PenaltyState pdd_outer(const PenaltyState& state, const Eigen::VectorXd& violations,
                       double rho_mu) {
  if (!(state.penalty_weight > 0.0)) throw DomainError("pdd_outer: penalty weight must be positive");
  PenaltyState next = state;
  const double v = violations.size() > 0 ? violations.cwiseAbs().maxCoeff() : 0.0;
  const bool progress =
      state.violation_history.empty() || v <= 0.9 * state.violation_history.back();
  if (progress) {
    if (next.multipliers.size() != violations.size())
      next.multipliers = Eigen::VectorXd::Zero(violations.size());
    next.multipliers += state.penalty_weight * violations;
  } else {
    next.penalty_weight = rho_mu * state.penalty_weight;
  }
  next.violation_history.push_back(v);
  return next;
}

BlockBState initial_block_b_state(const BlockBProblem& p, const ArrayGeometry& g) {
  if (p.num_users() == 0) throw DomainError("block B: no users");
  g.validate();
  BlockBState s;
  s.geometry = g;
  std::vector<Eigen::VectorXcd> ul, dl;
  std::vector<double> ones(p.num_users(), 1.0);
  for (std::size_t u = 0; u < p.num_users(); ++u) {
    ul.push_back(response(p, g, u, LinkDir::kUplink));
    dl.push_back(response(p, g, u, LinkDir::kDownlink));
  }
  s.q = principal_combiner(ul, ones);
  s.w = principal_combiner(dl, ones);
  s.aux.theta_ul = ul;
  s.aux.theta_dl = dl;
  for (std::size_t u = 0; u < p.num_users(); ++u) {
    s.aux.g_ul.push_back(s.q.dot(ul[u]));
    s.aux.g_dl.push_back(dl[u].dot(s.w));
  }
  refresh_slots(p, s.aux);
  return s;
}

std::vector<double> effective_ul_gains(const BlockBProblem& p, const BlockBState& s) {
  std::vector<double> out;
  for (std::size_t u = 0; u < p.num_users(); ++u)
    out.push_back(p.users[u].amp_ul * std::abs(s.q.dot(response(p, s.geometry, u, LinkDir::kUplink))));
  return out;
}

double aligned_noise_variance(const std::vector<double>& gains, const std::vector<double>& powers,
                              double noise_power) {
  if (gains.empty()) throw DomainError("aligned_noise_variance: no users");
  double m = kInf;
  for (std::size_t u = 0; u < gains.size(); ++u) m = std::min(m, gains[u] * std::sqrt(powers[u]));
  const double eta = m * static_cast<double>(gains.size());
  if (!(eta > 0.0)) return kInf;
  return noise_power / (eta * eta);
}

namespace {

double relative_change(const BlockBState& a, const BlockBState& b) {
  double c = std::max((a.q - b.q).norm(), (a.w - b.w).norm());
  double scale = 1e-12, dx = 0.0;
  for (std::size_t i = 0; i < a.geometry.size(); ++i) {
    scale = std::max(scale, std::abs(b.geometry.positions[i]));
    dx = std::max(dx, std::abs(a.geometry.positions[i] - b.geometry.positions[i]));
  }
  c = std::max(c, dx / scale);
  for (std::size_t u = 0; u < a.aux.g_ul.size(); ++u) {
    c = std::max(c, std::abs(a.aux.g_ul[u] - b.aux.g_ul[u]) / std::max(1.0, std::abs(b.aux.g_ul[u])));
    c = std::max(c, std::abs(a.aux.g_dl[u] - b.aux.g_dl[u]) / std::max(1.0, std::abs(b.aux.g_dl[u])));
  }
  return c;
}

}  // namespace

BlockBResult solve_block_b(const BlockBProblem& prob, const ArrayGeometry& init,
                           const BlockBOptions& opt) {
  BlockBProblem p = prob;
  BlockBState s = initial_block_b_state(p, init);
  if (!(p.time_weight > 0.0)) p.time_weight = 1.0 / (s.aux.t1 + s.aux.t2);

  BlockBResult res;
  PenaltyState pen;
  pen.penalty_weight = opt.mu0;
  pen.multipliers = Eigen::VectorXd::Zero(block_b_residuals(p, s).size());

  for (int it = 0; it < opt.max_outer; ++it) {
    const BlockBState before = s;
    std::array<double, 5> trace{};
    trace[0] = block_b_objective(p, s, pen);
    s.aux = solve_aux(p, s, pen);
    trace[1] = block_b_objective(p, s, pen);
    auto th = unit_modulus_update(p, s, pen);
    s.aux.theta_ul = std::move(th.first);
    s.aux.theta_dl = std::move(th.second);
    trace[2] = block_b_objective(p, s, pen);
    const BeamformerUpdate bf = beamformer_update(p, s, pen, opt.max_rgd);
    s.q = bf.q;
    s.w = bf.w;
    trace[3] = block_b_objective(p, s, pen);
    s.geometry = ma_position_update(p, s, pen);
    trace[4] = block_b_objective(p, s, pen);
    res.sweep_objectives.push_back(trace);

    const Eigen::VectorXd h = block_b_residuals(p, s);
    const double viol = h.cwiseAbs().maxCoeff();
    res.report.objective_trace.push_back(trace[4]);
    res.report.constraint_violation_trace.push_back(viol);
    res.report.penalty_trace.push_back(pen.penalty_weight);
    res.report.inner_iterations += 1;
    pen = pdd_outer(pen, h, opt.rho_mu);
    if (viol < opt.violation_tol && relative_change(s, before) < opt.epsilon) {
      res.report.converged = true;
      break;
    }
  }
  res.state = s;
  res.penalty = pen;
  for (std::size_t u = 0; u < p.num_users(); ++u) {
    const cd gu = s.q.dot(response(p, s.geometry, u, LinkDir::kUplink));
    const cd gd = response(p, s.geometry, u, LinkDir::kDownlink).dot(s.w);
    res.t1_true = std::max(res.t1_true, slot_time_dl(p, u, gd));
    res.t2_true = std::max(res.t2_true, slot_time_ul(p, u, gu));
  }
  return res;
}

HybridResult hybrid_sca_pdd(const HybridProblem& prob) {
  if (prob.M_set.empty() || prob.N_set.empty())
    throw DomainError("hybrid_sca_pdd: empty candidate set");
  if (!(prob.epsilon > 0.0) || prob.max_outer < 1)
    throw DomainError("hybrid_sca_pdd: tolerances must be positive");

  // Block B does not depend on the Block-A variables, so one solve serves every pair.
  const BlockBResult bb = solve_block_b(prob.link, prob.initial_geometry, prob.block_b);
  const std::vector<double> gains = effective_ul_gains(prob.link, bb.state);
  std::vector<double> powers;
  for (const auto& u : prob.link.users) powers.push_back(u.power);
  const double noise_power = prob.link.ul_bandwidth * prob.link.ul_noise_density;
  const double sigma2 = aligned_noise_variance(gains, powers, noise_power);
  const double eta = std::sqrt(noise_power / sigma2);
  std::vector<double> aligned;
  for (std::size_t u = 0; u < gains.size(); ++u) {
    const double amp = eta / (static_cast<double>(gains.size()) * gains[u]);
    aligned.push_back(std::min(powers[u], amp * amp));
  }

  HybridResult best;
  best.report.objective_trace = bb.report.objective_trace;
  best.report.constraint_violation_trace = bb.report.constraint_violation_trace;
  best.report.penalty_trace = bb.report.penalty_trace;
  bool have = false;
  std::vector<std::string> binding;
  const std::array<double, 4> width{prob.box.b_max - prob.box.b_min, prob.box.f_max - prob.box.f_min,
                                    prob.box.b_max - prob.box.b_min, prob.box.f_max - prob.box.f_min};
  for (int M : prob.M_set) {
    for (int N : prob.N_set) {
      PairRecord rec;
      rec.M = M;
      rec.N = N;
      BlockAContext ctx;
      ctx.phase = {M, N};
      ctx.model = prob.model;
      ctx.budget = prob.budget;
      ctx.box = prob.box;
      ctx.t1 = bb.t1_true;
      ctx.t2 = bb.t2_true;
      ctx.server_power = prob.link.server_power;
      ctx.participants = prob.participants;
      ctx.powers = aligned;
      ctx.psi_of_inverse = [&prob, M, N, sigma2](double iw, double ib) {
        return prob.psi(M, N, iw, ib, sigma2);
      };
      BlockAVars z = prob.initial;
      bool feasible = false;
      for (int t = 0; t < prob.max_outer; ++t) {
        const BlockAResult r = sca_surrogate_blockA(z, ctx, prob.trust_fraction);
        rec.iterations += 1;
        const std::array<double, 4> a{z.server_batch, z.server_freq, z.client_batch, z.client_freq};
        const std::array<double, 4> b{r.z.server_batch, r.z.server_freq, r.z.client_batch,
                                      r.z.client_freq};
        double change = 0.0;
        for (int i = 0; i < 4; ++i)
          change = std::max(change, std::abs(a[i] - b[i]) / std::max(width[i], 1e-300));
        z = r.z;
        feasible = r.feasible;
        if (feasible && change < prob.epsilon) break;
      }
      const double lat = blockA_latency(ctx, z);
      const double en = blockA_energy(ctx, z);
      if (!feasible || lat > prob.budget.latency_cap * (1.0 + 1e-6) ||
          en > prob.budget.energy_cap * (1.0 + 1e-6)) {
        rec.feasible = false;
        rec.reason = lat > prob.budget.latency_cap ? "latency" : "energy";
        binding.push_back("(M=" + std::to_string(M) + ",N=" + std::to_string(N) + "): " + rec.reason);
      } else {
        rec.feasible = true;
        rec.psi = blockA_objective(ctx, z);
        const double tol = 1e-12 * std::max(1.0, std::abs(best.psi));
        const bool better = !have || rec.psi < best.psi - tol ||
                            (std::abs(rec.psi - best.psi) <= tol && M + N < best.M + best.N);
        if (better) {
          have = true;
          best.M = M;
          best.N = N;
          best.psi = rec.psi;
          best.z = z;
          best.latency = lat;
          best.energy = en;
        }
      }
      best.report.inner_iterations += rec.iterations;
      best.pairs.push_back(rec);
    }
  }
  if (!have) throw InfeasibleError("hybrid_sca_pdd: every (M,N) pair is infeasible", binding);
  best.block_b = bb.state;
  best.sigma2 = sigma2;
  best.report.best_MN = {best.M, best.N};
  best.report.converged = bb.report.converged;
  return best;
}

}  // namespace otafl
