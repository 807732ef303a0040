#include "otafl/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <thread>

#include "otafl/errors.hpp"
#include "otafl/rng.hpp"

namespace otafl {

namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitBudget = 3;
constexpr int kExitCellFailures = 4;
constexpr int kExitBoundViolation = 5;
constexpr int kExitOther = 1;

// Maps an exception to its exit code and writes the error record.
int report(std::ostream& err, const std::exception_ptr& ep) {
  try {
    std::rethrow_exception(ep);
  } catch (const ConfigError& e) {
    err << error_record("config_error", e.what(), e.keys()) << "\n";
    return kExitConfig;
  } catch (const InfeasibleError& e) {
    err << error_record("infeasible", e.what(), e.binding()) << "\n";
  } catch (const DomainError& e) {
    err << error_record("domain_error", e.what()) << "\n";
  } catch (const NumericError& e) {
    err << error_record("numeric_error", e.what()) << "\n";
  } catch (const std::exception& e) {
    err << error_record("error", e.what()) << "\n";
  }
  return kExitOther;
}

template <class F> void parallel_for(std::size_t count, int workers, F&& body) {
  const std::size_t threads = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), 1, std::max<std::size_t>(count, 1));
  std::atomic<std::size_t> next{0};
  auto loop = [&] {
    for (std::size_t i = next++; i < count; i = next++) body(i);
  };
  if (threads == 1) {
    loop();
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(loop);
  for (auto& th : pool) th.join();
}

std::vector<double> summary_metrics(const RunSummary& s) {
  return {s.jain_r30, s.gini_r30, s.ppl_r30, s.avg_snr_db, s.total_latency_s, s.total_energy_j};
}

const char* const kMetricNames[] = {"jain_r30", "gini_r30", "ppl_r30", "avg_snr_db", "total_latency_s",
                                    "total_energy_j"};

}  // namespace

fs::path output_root() {
  const char* env = std::getenv("OTAFL_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fs::current_path();
}

std::string error_record(const std::string& kind, const std::string& message,
                         const std::vector<std::string>& keys) {
  nlohmann::ordered_json j;
  j["error"] = kind;
  j["message"] = message;
  j["keys"] = keys;
  return j.dump();
}

void write_run_artifacts(const RunResult& r, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream log(dir / "run.jsonl", std::ios::binary | std::ios::trunc);
  JsonlWriter w(log);
  for (const auto& rec : r.rounds) w.write(to_json(rec));
  if (r.violation) {
    nlohmann::ordered_json v;
    v["violation"] = *r.violation;
    w.write(v);
  }
  std::ofstream csv(dir / "summary.csv", std::ios::binary | std::ios::trunc);
  csv << summary_csv_header() << "\n" << summary_csv_row(r.summary) << "\n";
  if (!log || !csv) throw std::runtime_error("cannot write artifacts under " + dir.string());
}

std::vector<CellResult> run_compare(const ExperimentConfig& base, const std::vector<std::string>& policies,
                                    const std::vector<int>& ks, const std::vector<std::uint64_t>& seeds,
                                    int workers, const std::optional<fs::path>& dir) {
  if (policies.empty()) throw ConfigError("compare: at least one policy is required", {"policies"});
  if (ks.empty()) throw ConfigError("compare: at least one k is required", {"k"});
  if (seeds.empty()) throw ConfigError("compare: at least one seed is required", {"seeds"});
  for (const auto& p : policies) policy_from_string(p);
  std::vector<CellResult> cells;
  for (const auto& p : policies)
    for (int k : ks)
      for (std::uint64_t s : seeds) {
        CellResult c;
        c.policy = p;
        c.k = k;
        c.seed = s;
        if (dir) c.dir = *dir / "cells" / (p + "_k" + std::to_string(k) + "_s" + std::to_string(s));
        cells.push_back(c);
      }
  parallel_for(cells.size(), workers, [&](std::size_t i) {
    CellResult& c = cells[i];
    c.summary.policy = c.policy;
    c.summary.k = c.k;
    c.summary.seed = c.seed;
    try {
      ExperimentConfig cfg = base;
      cfg.policy.kind = c.policy;
      cfg.policy.k = c.k;
      cfg.experiment.seed = c.seed;
      const RunResult r = run_experiment(cfg);
      c.summary = r.summary;
      if (r.violation) c.failure = "budget: " + *r.violation;
      if (dir) write_run_artifacts(r, c.dir);
    } catch (const std::exception& e) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      c.summary.jain_r30 = c.summary.gini_r30 = c.summary.ppl_r30 = nan;
      c.summary.avg_snr_db = c.summary.total_latency_s = c.summary.total_energy_j = nan;
      c.failure = e.what();
    }
  });
  return cells;
}

std::vector<AggregateRow> aggregate_cells(const std::vector<CellResult>& cells) {
  std::vector<AggregateRow> rows;
  std::map<std::pair<std::string, int>, std::vector<std::vector<double>>> groups;
  for (const auto& c : cells) {
    const auto key = std::make_pair(c.policy, c.k);
    if (!groups.count(key)) {
      AggregateRow a;
      a.policy = c.policy;
      a.k = c.k;
      rows.push_back(a);
    }
    auto& g = groups[key];
    const auto m = summary_metrics(c.summary);
    const bool usable = std::none_of(m.begin(), m.end(), [](double v) { return std::isnan(v); });
    if (!c.failure || usable) g.push_back(m);
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (auto& a : rows) {
    const auto& g = groups[{a.policy, a.k}];
    a.cells = static_cast<int>(g.size());
    const std::size_t nm = std::size(kMetricNames);
    a.mean.assign(nm, nan);
    a.stdev.assign(nm, nan);
    if (g.empty()) continue;
    for (std::size_t j = 0; j < nm; ++j) {
      double s = 0.0;
      for (const auto& m : g) s += m[j];
      const double mean = s / static_cast<double>(g.size());
      double ss = 0.0;
      for (const auto& m : g) ss += (m[j] - mean) * (m[j] - mean);
      a.mean[j] = mean;
      a.stdev[j] = g.size() > 1 ? std::sqrt(ss / static_cast<double>(g.size() - 1)) : 0.0;
    }
  }
  return rows;
}

std::string aggregate_csv_header() {
  std::string h = "policy,k,cells";
  for (const char* n : kMetricNames) h += std::string(",") + n + "_mean," + n + "_std";
  return h;
}

std::string aggregate_csv_row(const AggregateRow& a) {
  std::string r = a.policy + "," + std::to_string(a.k) + "," + std::to_string(a.cells);
  for (std::size_t j = 0; j < a.mean.size(); ++j)
    r += "," + format_double(a.mean[j]) + "," + format_double(a.stdev[j]);
  return r;
}

BoundGrid parse_bound_grid(const std::string& text) {
  BoundGrid g;
  std::stringstream parts(text);
  std::string part;
  auto bad = [&](const std::string& why) { throw ConfigError("bound-check grid: " + why, {"grid"}); };
  while (std::getline(parts, part, ';')) {
    if (part.empty()) continue;
    const auto eq = part.find('=');
    if (eq == std::string::npos) bad("expected name=values in '" + part + "'");
    const std::string name = part.substr(0, eq);
    std::stringstream vals(part.substr(eq + 1));
    std::string v;
    while (std::getline(vals, v, ',')) {
      try {
        std::size_t used = 0;
        if (name == "M" || name == "N") {
          const int x = std::stoi(v, &used);
          if (used != v.size() || x < 0) bad("bad round count '" + v + "'");
          (name == "M" ? g.M : g.N).push_back(x);
        } else if (name == "sigma2") {
          const double x = std::stod(v, &used);
          if (used != v.size() || !(x >= 0.0)) bad("bad noise variance '" + v + "'");
          g.sigma2.push_back(x);
        } else {
          bad("unknown axis '" + name + "'");
        }
      } catch (const std::logic_error&) {
        bad("cannot parse '" + v + "'");
      }
    }
  }
  if (g.M.empty() || g.N.empty() || g.sigma2.empty()) bad("M, N and sigma2 all need values");
  if (std::find(g.N.begin(), g.N.end(), 0) != g.N.end()) bad("N must be positive");
  return g;
}

std::vector<BoundPoint> run_bound_check(const ExperimentConfig& cfg, const BoundGrid& grid, int trials,
                                        int workers) {
  cfg.validate();
  if (cfg.task.kind != "quadratic")
    throw ConfigError("bound-check: unsupported task '" + cfg.task.kind + "', only quadratic has closed-form constants",
                      {"task.kind"});
  if (trials < 1) throw ConfigError("bound-check: trials must be >= 1", {"trials"});
  const Scenario sc = build_scenario(cfg);
  const Task task(sc.task);
  const int W = static_cast<int>(cfg.compute.server_batch);
  const int b = static_cast<int>(cfg.compute.client_batch);
  const int U = cfg.experiment.num_users;
  const std::uint64_t seed = cfg.experiment.seed;
  const BoundInputs in = quadratic_bound_inputs(task, W, b, 20000, seed);

  std::vector<int> Ns = grid.N;
  std::sort(Ns.begin(), Ns.end());
  Ns.erase(std::unique(Ns.begin(), Ns.end()), Ns.end());
  const int n_max = Ns.back();

  // one job per (M, sigma2); each trial runs to the largest N and records every checkpoint
  struct Job {
    int M;
    double sigma2;
    std::vector<double> sums;
  };
  std::vector<Job> jobs;
  for (int M : grid.M)
    for (double s2 : grid.sigma2) jobs.push_back({M, s2, std::vector<double>(Ns.size(), 0.0)});

  const std::vector<double> weights(static_cast<std::size_t>(U), 1.0 / U);
  parallel_for(jobs.size(), workers, [&](std::size_t j) {
    Job& job = jobs[j];
    for (int t = 0; t < trials; ++t) {
      const auto trial = static_cast<std::uint64_t>(t);
      ModelState st;
      st.params = sc.task.init;
      for (int m = 0; m < job.M; ++m) {
        auto rng = make_rng({seed, trial, static_cast<std::uint64_t>(Stream::kPretrain), static_cast<std::uint64_t>(m)});
        st = pretrain_step(st, task, W, rng);
      }
      st.phase = Phase::kFinetune;
      std::size_t next = 0;
      for (int n = 0; n < n_max; ++n) {
        std::vector<Eigen::VectorXd> grads;
        for (int u = 0; u < U; ++u) {
          auto rng = make_rng({seed, trial, static_cast<std::uint64_t>(Stream::kBatch),
                               static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(u)});
          grads.push_back(task.gradient(st.params, task.draw_user(u, b, rng)));
        }
        OTAOutcome out;
        out.received = digital_aggregate(grads, weights);
        if (job.sigma2 > 0.0) {
          auto rng = make_rng({seed, trial, static_cast<std::uint64_t>(Stream::kOtaNoise), static_cast<std::uint64_t>(n)});
          std::normal_distribution<double> noise(0.0, std::sqrt(job.sigma2));
          for (Eigen::Index i = 0; i < out.received.size(); ++i) out.received(i) += noise(rng);
        }
        st = finetune_round(st, task, out);
        if (n + 1 == Ns[next]) job.sums[next++] += task.finetune_loss(st.params);
      }
    }
  });

  std::vector<BoundPoint> points;
  for (int M : grid.M)
    for (int N : grid.N)
      for (double s2 : grid.sigma2) {
        const auto job = std::find_if(jobs.begin(), jobs.end(),
                                      [&](const Job& x) { return x.M == M && x.sigma2 == s2; });
        const auto idx = static_cast<std::size_t>(std::lower_bound(Ns.begin(), Ns.end(), N) - Ns.begin());
        BoundPoint p;
        p.M = M;
        p.N = N;
        p.sigma2 = s2;
        p.bound = convergence_bound(in, M, N, sc.task.step_pre, sc.task.step_fine, s2);
        p.empirical_mean = job->sums[idx] / trials;
        p.slack = p.bound.value - p.empirical_mean;
        p.violation = !(p.slack >= 0.0);
        points.push_back(p);
      }
  return points;
}

std::string bound_csv_header() {
  return "M,N,sigma2,bound,empirical_mean,slack,pretrain_term,shift_term,finetune_term,grad_opt_term,"
         "grad_noise_term,violation";
}

std::string bound_csv_row(const BoundPoint& p) {
  const auto& b = p.bound;
  return std::to_string(p.M) + "," + std::to_string(p.N) + "," + format_double(p.sigma2) + "," +
         format_double(b.value) + "," + format_double(p.empirical_mean) + "," + format_double(p.slack) + "," +
         format_double(b.pretrain_term) + "," + format_double(b.shift_term) + "," +
         format_double(b.finetune_term) + "," + format_double(b.grad_opt_term) + "," +
         format_double(b.grad_noise_term) + "," + (p.violation ? "1" : "0");
}

int cmd_run(const std::string& config_path, std::ostream& out, std::ostream& err) {
  try {
    const ExperimentConfig cfg = load_config(config_path);
    const fs::path dir = output_root() / cfg.experiment.output_dir;
    const RunResult r = run_experiment(cfg);
    write_run_artifacts(r, dir);
    out << "run: " << r.rounds.size() << " rounds written to " << dir.string() << "\n";
    if (r.violation) {
      err << error_record("budget_violation", *r.violation) << "\n";
      return kExitBudget;
    }
    return 0;
  } catch (...) {
    return report(err, std::current_exception());
  }
}

int cmd_compare(const std::string& config_path, const std::vector<std::string>& policies,
                const std::vector<int>& ks, const std::vector<std::uint64_t>& seeds, int workers,
                std::ostream& out, std::ostream& err) {
  try {
    const ExperimentConfig cfg = load_config(config_path);
    for (int k : ks)
      if (k < 1 || k > cfg.experiment.num_users)
        throw ConfigError("compare: k must satisfy 1 <= k <= num_users (k=" + std::to_string(k) + ")",
                          {"policy.k"});
    const fs::path dir = output_root() / cfg.experiment.output_dir;
    fs::create_directories(dir);
    const auto cells = run_compare(cfg, policies, ks, seeds, workers, dir);

    std::ofstream rows(dir / "compare.csv", std::ios::binary | std::ios::trunc);
    rows << summary_csv_header() << "\n";
    for (const auto& c : cells) rows << summary_csv_row(c.summary) << "\n";
    std::ofstream agg(dir / "aggregate.csv", std::ios::binary | std::ios::trunc);
    agg << aggregate_csv_header() << "\n";
    for (const auto& a : aggregate_cells(cells)) agg << aggregate_csv_row(a) << "\n";

    int failures = 0;
    std::ofstream fail(dir / "failures.jsonl", std::ios::binary | std::ios::trunc);
    for (const auto& c : cells) {
      if (!c.failure) continue;
      ++failures;
      nlohmann::ordered_json j;
      j["policy"] = c.policy;
      j["k"] = c.k;
      j["seed"] = c.seed;
      j["error"] = *c.failure;
      fail << j.dump() << "\n";
    }
    out << "compare: " << cells.size() << " cells, " << failures << " failed, results in " << dir.string()
        << "\n";
    return failures ? kExitCellFailures : 0;
  } catch (...) {
    return report(err, std::current_exception());
  }
}

int cmd_bound_check(const std::string& config_path, const std::string& grid_text, int trials, int workers,
                    std::ostream& out, std::ostream& err) {
  try {
    const ExperimentConfig cfg = load_config(config_path);
    const BoundGrid grid = parse_bound_grid(grid_text);
    const auto points = run_bound_check(cfg, grid, trials, workers);
    const fs::path dir = output_root() / cfg.experiment.output_dir;
    fs::create_directories(dir);
    std::ofstream csv(dir / "bound_check.csv", std::ios::binary | std::ios::trunc);
    csv << bound_csv_header() << "\n";
    out << bound_csv_header() << "\n";
    int violations = 0;
    for (const auto& p : points) {
      csv << bound_csv_row(p) << "\n";
      out << bound_csv_row(p) << "\n";
      violations += p.violation ? 1 : 0;
    }
    out << "bound-check: " << points.size() << " points, " << violations << " violations\n";
    return violations ? kExitBoundViolation : 0;
  } catch (...) {
    return report(err, std::current_exception());
  }
}

}  // namespace otafl
