#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "otafl/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Over-the-air federated fine-tuning simulator"};
  app.require_subcommand(1);

  std::string config;
  auto* run = app.add_subcommand("run", "Run one experiment from a config file");
  run->add_option("config", config, "JSON config")->required();

  std::vector<std::string> policies;
  std::vector<int> ks;
  std::vector<std::uint64_t> seeds;
  int workers = 1;
  auto* compare = app.add_subcommand("compare", "Policy x k x seed factorial");
  compare->add_option("config", config, "JSON config")->required();
  compare->add_option("--policies", policies, "Policy names")->required()->delimiter(',');
  compare->add_option("--k", ks, "Concurrency values")->required()->delimiter(',');
  compare->add_option("--seeds", seeds, "Master seeds")->required()->delimiter(',');
  compare->add_option("--workers", workers, "Concurrent cells")->check(CLI::PositiveNumber);

  std::string grid = "M=0,2,4,8;N=5,10,20,40;sigma2=0,0.01";
  int trials = 100;
  auto* bound = app.add_subcommand("bound-check", "Compare the convergence bound with Monte-Carlo losses");
  bound->add_option("config", config, "JSON config")->required();
  bound->add_option("--grid", grid, "Grid such as \"M=0,2;N=5,10;sigma2=0,0.01\"");
  bound->add_option("--trials", trials, "Monte-Carlo runs per point")->check(CLI::PositiveNumber);
  bound->add_option("--workers", workers, "Concurrent jobs")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << otafl::error_record("usage_error", e.what()) << "\n";
    return 2;
  }

  if (*run) return otafl::cmd_run(config, std::cout, std::cerr);
  if (*compare) return otafl::cmd_compare(config, policies, ks, seeds, workers, std::cout, std::cerr);
  return otafl::cmd_bound_check(config, grid, trials, workers, std::cout, std::cerr);
}
