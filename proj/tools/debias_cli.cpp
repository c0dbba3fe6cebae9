// debias: run experiment grids, compare run records, export plot data.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "debias/error.hpp"
#include "debias/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Spurious-correlation debiasing experiments"};
  app.require_subcommand(1);

  std::string config_path;
  auto* run = app.add_subcommand("run", "train and evaluate every (method, seed) cell of a config");
  run->add_option("config", config_path, "run config (JSON)")->required();

  std::vector<std::string> records;
  auto* compare = app.add_subcommand("compare", "merge run records into one CSV on stdout");
  compare->add_option("records", records, "run_record.json files or run directories")->required();

  std::string record;
  std::string kind;
  std::string method;
  std::uint64_t seed = 0;
  auto* plot = app.add_subcommand("plot-data", "print plot-ready JSON for one run record");
  plot->add_option("record", record, "run_record.json or run directory")->required();
  plot->add_option("--kind", kind, "weights|losses|domain_acc|som")
      ->required()
      ->check(CLI::IsMember({"weights", "losses", "domain_acc", "som"}));
  auto* method_opt = plot->add_option("--method", method, "only this method");
  auto* seed_opt = plot->add_option("--seed", seed, "only this seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? debias::kExitOk : debias::kExitValidation;
  }

  try {
    if (*run) return debias::run_command(config_path, std::cout, std::cerr);
    if (*compare) {
      std::cout << debias::compare_records(records);
      return debias::kExitOk;
    }
    if (*plot) {
      std::optional<std::string> m;
      std::optional<std::uint64_t> s;
      if (*method_opt) m = method;
      if (*seed_opt) s = seed;
      std::cout << debias::plot_data(record, kind, m, s);
      return debias::kExitOk;
    }
  } catch (const debias::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return debias::kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return debias::kExitPartial;
  }
  return debias::kExitOk;
}
