#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "debias/config.hpp"
#include "debias/error.hpp"
#include "debias/metrics.hpp"
#include "debias/runner.hpp"

using namespace debias;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "debias_cli_unit" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json small_config(const fs::path& out) {
  json doc = json::parse(R"({
    "dataset": {"kind": "synthetic", "counts": [[120, 30], [30, 120]], "spurious_strength": 4},
    "defaults": {"epochs": 2, "finetune_epochs": 3, "per_group_finetune": 5},
    "methods": ["erm"],
    "eval": {"som_params": {"height": 3, "width": 3, "epochs": 2}},
    "seeds": [0]
  })");
  doc["output_dir"] = out.string();
  return doc;
}

std::string config_error(const std::string& text) {
  try {
    parse_run_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::vector<std::vector<std::string>> read_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

std::size_t column(const std::vector<std::string>& header, const std::string& name) {
  const auto it = std::find(header.begin(), header.end(), name);
  REQUIRE(it != header.end());
  return static_cast<std::size_t>(it - header.begin());
}

}  // namespace

TEST_CASE("config: errors name the offending field") {
  const std::string base = R"("dataset": {"counts": [[10, 10], [10, 10]]}, "seeds": [0])";
  CHECK(config_error("{" + base + R"(, "methods": ["erm", "foo"]})").find("methods[1].id") == 0);
  CHECK(config_error("{" + base + R"(, "methods": ["erm", "foo"]})").find("'foo'") != std::string::npos);
  CHECK(config_error("{" + base + R"(, "methods": []})").find("methods") == 0);
  CHECK(config_error("{" + base + R"(, "methods": ["erm"], "bogus": 1})").find("bogus: unknown key") == 0);
  CHECK(config_error(R"({"dataset": {"counts": [[10, 10], [10, 10]]}, "methods": ["erm"]})").find("seeds") == 0);
  CHECK(config_error("{" + base + R"(, "methods": [{"id": "gdro", "eta_q": -1}]})").find("methods[0]") == 0);
  CHECK(config_error("{" + base + R"(, "methods": [{"id": "dfr", "lr": "fast"}]})").find("methods[0].lr") == 0);
  CHECK(config_error("{" + base + R"(, "methods": ["erm", "erm"]})").find("duplicate") != std::string::npos);
  CHECK(config_error("{" + base + R"(, "methods": ["erm"], "eval": {"bias_conflicting": ["nope"]}})")
            .find("eval.bias_conflicting") == 0);
  CHECK(config_error("{" + base + R"(, "methods": ["erm"], "split": {"fractions": [0.5, 0.2]}})")
            .find("split.fractions") == 0);
  CHECK(config_error("{" + base + R"(, "methods": ["erm"], "split": {"fractions": [1, 0, 0]}})")
            .find("split.fractions") == 0);
  CHECK(config_error(R"({"dataset": {"counts": [[10, 10], [10]]}, "methods": ["erm"], "seeds": [0]})")
            .find("dataset.counts[1]") == 0);
  CHECK(config_error("{not json").find("not valid JSON") != std::string::npos);
}

TEST_CASE("config: defaults, overrides and names") {
  const RunConfig cfg = parse_run_config(R"({
    "dataset": {"counts": [[10, 10], [10, 10]]},
    "defaults": {"epochs": 4, "lr": 0.02},
    "methods": ["erm", {"id": "gdro_adj", "name": "gdro_c2", "adj_c": 2.0, "selection": "last"}],
    "eval": {"bias_conflicting": ["y1_a0"], "purity": "unweighted"},
    "seeds": [3, 1]
  })");
  REQUIRE(cfg.methods.size() == 2);
  CHECK(cfg.methods[0].config.epochs == 4);
  CHECK(cfg.methods[1].name == "gdro_c2");
  CHECK(cfg.methods[1].config.method == MethodId::kGdroAdj);
  CHECK(cfg.methods[1].config.adj_c == 2.0);
  CHECK(cfg.methods[1].config.lr == 0.02);
  CHECK(cfg.methods[1].config.selection == Selection::kLast);
  CHECK(cfg.eval.subgroup_names == std::vector<std::string>{"y0_a0", "y0_a1", "y1_a0", "y1_a1"});
  CHECK(cfg.eval.bias_conflicting_ids == std::vector<int>{2});
  CHECK(cfg.eval.purity_unweighted);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{3, 1});
}

TEST_CASE("config: percentages and an evaluation block") {
  const RunConfig cfg = parse_run_config(R"({
    "dataset": {"percentages": [[30, 60], [70, 40]], "column_total": 50,
                "eval_counts": [[20, 20], [20, 20]]},
    "methods": ["erm"], "seeds": [0]
  })");
  CHECK(cfg.dataset.spec.counts == std::vector<std::vector<std::size_t>>{{15, 30}, {35, 20}});
  const PreparedData d = prepare_data(cfg, 0);
  CHECK(d.splits.train.size() == 100);
  CHECK(d.splits.val.size() + d.splits.test.size() == 80);
  CHECK(d.ds.group_counts(d.splits.val) == std::vector<std::size_t>{4, 4, 4, 4});
}

TEST_CASE("run: one method, one seed") {
  const fs::path out = scratch("single");
  const RunConfig cfg = parse_run_config(small_config(out).dump());
  std::ostringstream log;
  const RunReport r = run_experiment(cfg, log);
  CHECK(r.cells == 1);
  CHECK(r.failed == 0);
  CHECK(fs::exists(out / "cells" / "erm_seed0" / "checkpoint.json"));
  CHECK(fs::exists(out / "cells" / "erm_seed0" / "trajectory.jsonl"));
  CHECK(fs::exists(out / "config.json"));
  const auto rows = read_csv(slurp(out / "summary.csv"));
  CHECK(rows.size() == 2);
  const json rec = json::parse(slurp(out / "run_record.json"));
  CHECK(rec.at("cells").size() == 1);
  CHECK(rec.at("config") == json::parse(cfg.snapshot));
}

TEST_CASE("run: aggregates, idempotence, reconstructible summary") {
  const fs::path out = scratch("three_seeds");
  json doc = small_config(out);
  doc["seeds"] = {0, 1, 2};
  doc["methods"] = {"erm", "gdro"};
  const RunConfig cfg = parse_run_config(doc.dump());
  std::ostringstream log;
  run_experiment(cfg, log);
  const std::string summary = slurp(out / "summary.csv");
  const std::string record = slurp(out / "run_record.json");
  const auto rows = read_csv(summary);
  REQUIRE(rows.size() == 7);

  // aggregate std recomputed from the three rows
  const std::size_t worst = column(rows[0], "worst");
  std::vector<double> w;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r][0] == "gdro") w.push_back(std::stod(rows[r][worst]));
  }
  REQUIRE(w.size() == 3);
  const MeanStd direct = mean_std(w);
  const json rec = json::parse(record);
  const json& agg = rec.at("aggregates").at("gdro").at("metrics").at("worst");
  CHECK(agg.at("mean").get<double>() == doctest::Approx(direct.mean).epsilon(1e-14));
  CHECK(agg.at("std").get<double>() == doctest::Approx(direct.std).epsilon(1e-12));
  CHECK(agg.at("n") == 3);

  // summary rebuilt from cell files alone
  std::string rebuilt;
  {
    std::vector<std::vector<std::pair<std::string, std::string>>> cells;
    for (const auto seed : {0, 1, 2}) {
      for (const char* m : {"erm", "gdro"}) {
        cells.push_back(summary_row(slurp(out / "cells" / (std::string(m) + "_seed" + std::to_string(seed)) / "cell.json")));
      }
    }
    std::vector<std::string> cols;
    for (const auto& c : cells) {
      for (const auto& kv : c) {
        if (std::find(cols.begin(), cols.end(), kv.first) == cols.end()) cols.push_back(kv.first);
      }
    }
    for (std::size_t i = 0; i < cols.size(); ++i) rebuilt += (i ? "," : "") + cols[i];
    rebuilt += '\n';
    for (const auto& c : cells) {
      for (std::size_t i = 0; i < cols.size(); ++i) {
        if (i) rebuilt += ',';
        for (const auto& kv : c) {
          if (kv.first == cols[i]) rebuilt += kv.second;
        }
      }
      rebuilt += '\n';
    }
  }
  CHECK(rebuilt == summary);

  // second run reuses every cell and rewrites identical outputs
  const auto ckpt = slurp(out / "cells" / "gdro_seed1" / "checkpoint.json");
  std::ostringstream log2;
  const RunReport again = run_experiment(cfg, log2);
  CHECK(again.skipped == 6);
  CHECK(slurp(out / "summary.csv") == summary);
  CHECK(slurp(out / "cells" / "gdro_seed1" / "checkpoint.json") == ckpt);
  json rec2 = json::parse(slurp(out / "run_record.json"));
  CHECK(rec2.at("aggregates") == rec.at("aggregates"));

  // changing a method's config invalidates only that method's cells
  doc["methods"] = {"erm", json{{"id", "gdro"}, {"eta_q", 0.5}}};
  std::ostringstream log3;
  const RunReport changed = run_experiment(parse_run_config(doc.dump()), log3);
  CHECK(changed.skipped == 3);
}

TEST_CASE("run: failed cells are recorded and the sweep continues") {
  const fs::path out = scratch("partial");
  json doc = small_config(out);
  doc["methods"] = {"erm", json{{"id", "gdro"}, {"name", "gdro_diverge"}, {"lr", 1e12}}};
  const fs::path cfg_path = out / "config_in.json";
  std::ofstream(cfg_path) << doc.dump();
  std::ostringstream o;
  std::ostringstream e;
  CHECK(run_command(cfg_path.string(), o, e) == kExitPartial);
  const json cell = json::parse(slurp(out / "cells" / "gdro_diverge_seed0" / "cell.json"));
  CHECK(cell.at("status") == "failed");
  CHECK(cell.at("error").get<std::string>().find("diverged") != std::string::npos);
  const auto rows = read_csv(slurp(out / "summary.csv"));
  REQUIRE(rows.size() == 3);
  CHECK(rows[1][2] == "ok");
  CHECK(rows[2][2] == "failed");

  std::ofstream(out / "bad.json") << R"({"dataset": {"counts": [[5, 5], [5, 5]]}, "methods": ["nope"], "seeds": [0]})";
  std::ostringstream e2;
  CHECK(run_command((out / "bad.json").string(), o, e2) == kExitValidation);
  CHECK(e2.str().find("methods[0].id") != std::string::npos);
  CHECK(run_command((out / "missing.json").string(), o, e2) == kExitValidation);
}

TEST_CASE("run: output root from the environment") {
  const fs::path root = scratch("env_root");
  RunConfig cfg;
  cfg.output_dir = "some/nested/exp1";
  CHECK(resolve_output_dir(cfg) == "some/nested/exp1");
  setenv(kOutputRootEnv, root.c_str(), 1);
  CHECK(fs::path(resolve_output_dir(cfg)) == root / "exp1");
  unsetenv(kOutputRootEnv);
}

TEST_CASE("run_cell is byte-deterministic") {
  const fs::path out = scratch("determinism");
  json doc = small_config(out);
  doc["methods"] = {"proposed"};
  doc["eval"]["auc"] = true;
  const RunConfig cfg = parse_run_config(doc.dump());
  const CellArtifacts a = run_cell(cfg, cfg.methods[0], 4);
  const CellArtifacts b = run_cell(cfg, cfg.methods[0], 4);
  REQUIRE(a.ok);
  CHECK(a.checkpoint == b.checkpoint);
  CHECK(a.trajectory == b.trajectory);
  CHECK(a.cell_json == b.cell_json);
}

TEST_CASE("compare") {
  const fs::path a = scratch("cmp_a");
  const fs::path b = scratch("cmp_b");
  json doc = small_config(a);
  doc["methods"] = {"erm", "dfr"};
  std::ostringstream log;
  run_experiment(parse_run_config(doc.dump()), log);
  doc["output_dir"] = b.string();
  doc["methods"] = {"gdro"};
  run_experiment(parse_run_config(doc.dump()), log);

  SUBCASE("single record passes aggregates through") {
    const auto rows = read_csv(compare_records({a.string()}));
    REQUIRE(rows.size() == 3);
    const json rec = json::parse(slurp(a / "run_record.json"));
    const std::size_t worst = column(rows[0], "worst");
    CHECK(std::stod(rows[1][worst]) == rec.at("aggregates").at("erm").at("metrics").at("worst").at("mean").get<double>());
    CHECK(rows[0].front() == "method");
  }
  SUBCASE("best flag follows the larger worst-group value") {
    const auto rows = read_csv(compare_records({a.string(), (b / "run_record.json").string()}));
    REQUIRE(rows.size() == 4);
    const std::size_t worst = column(rows[0], "worst");
    const std::size_t mark = column(rows[0], "best_marker");
    std::size_t best_row = 1;
    for (std::size_t r = 2; r < rows.size(); ++r) {
      if (std::stod(rows[r][worst]) > std::stod(rows[best_row][worst])) best_row = r;
    }
    CHECK(rows[best_row][mark].find("worst") != std::string::npos);
    // lower is better for disparity columns
    const std::size_t dbw = column(rows[0], "delta_best_worst");
    std::size_t low = 1;
    for (std::size_t r = 2; r < rows.size(); ++r) {
      if (std::stod(rows[r][dbw]) < std::stod(rows[low][dbw])) low = r;
    }
    CHECK(rows[low][mark].find("delta_best_worst") != std::string::npos);
  }
  SUBCASE("columns are the union of metric keys") {
    const auto rows = read_csv(compare_records({a.string(), b.string()}));
    const json ra = json::parse(slurp(a / "run_record.json"));
    for (const auto& [m, agg] : ra.at("aggregates").items()) {
      for (const auto& [k, v] : agg.at("metrics").items()) {
        CHECK(std::find(rows[0].begin(), rows[0].end(), k) != rows[0].end());
      }
    }
  }
  SUBCASE("missing record") { CHECK_THROWS_AS(compare_records({(a / "nope").string()}), ConfigError); }
}

TEST_CASE("plot-data") {
  const fs::path out = scratch("plot");
  json doc = small_config(out);
  doc["methods"] = {"gdro", "dann"};
  std::ostringstream log;
  run_experiment(parse_run_config(doc.dump()), log);

  const json w = json::parse(plot_data(out.string(), "weights"));
  REQUIRE(w.at("series").size() == 1);
  const auto& s = w.at("series")[0];
  CHECK(s.at("method") == "gdro");
  CHECK(s.at("values").size() == 2);
  for (const auto& row : s.at("end_values")) {
    double sum = 0.0;
    for (const auto& v : row) sum += v.get<double>();
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
  CHECK(s.at("values")[0].size() == 4);

  const json d = json::parse(plot_data(out.string(), "domain_acc"));
  REQUIRE(d.at("series").size() == 1);
  CHECK(d.at("series")[0].at("method") == "dann");

  const json l = json::parse(plot_data(out.string(), "losses", std::string("gdro"), 0));
  CHECK(l.at("series").size() == 1);

  const json som = json::parse(plot_data(out.string(), "som", std::string("dann")));
  const auto& grid = som.at("series")[0];
  CHECK(grid.at("grid").size() == 3);
  CHECK(grid.at("grid")[0].size() == 3);
  const json cell = json::parse(slurp(out / "cells" / "dann_seed0" / "cell.json"));
  const auto& pr = cell.at("purity");
  for (std::size_t n = 0; n < 9; ++n) {
    const auto& node = grid.at("grid")[n / 3][n % 3];
    CHECK(node.at("purity") == pr.at("per_node")[n]);
    const int maj = pr.at("majority")[n];
    if (maj >= 0) CHECK(node.at("majority") == cell.at("subgroup_names")[static_cast<std::size_t>(maj)]);
  }
  CHECK(grid.at("purity") == pr.at("overall"));

  CHECK_THROWS_AS(plot_data(out.string(), "heatmap"), ConfigError);
}
