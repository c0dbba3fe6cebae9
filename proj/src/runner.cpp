#include "debias/runner.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "debias/error.hpp"
#include "debias/graph.hpp"
#include "debias/rng.hpp"

namespace debias {

namespace fs = std::filesystem;
using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read '" + p.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Write to a sibling temp file, then rename over the target.
void write_atomic(const fs::path& p, const std::string& text) {
  fs::path tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << text;
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, p);
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

ordered_json optional_array(const std::vector<std::optional<double>>& v) {
  ordered_json a = ordered_json::array();
  for (const auto& x : v) a.push_back(x ? ordered_json(*x) : ordered_json(nullptr));
  return a;
}

ordered_json metrics_json(const SubgroupMetrics& m, const std::vector<std::string>& names) {
  return {{"values", optional_array(m.values)},
          {"counts", m.counts},
          {"average", m.average},
          {"worst", m.worst},
          {"best", m.best},
          {"worst_group", names.at(static_cast<std::size_t>(m.worst_group))},
          {"best_group", names.at(static_cast<std::size_t>(m.best_group))}};
}

std::string cell_dir_name(const std::string& method, std::uint64_t seed) {
  return method + "_seed" + std::to_string(seed);
}

std::vector<std::vector<int>> class_partition(const Dataset& ds) {
  std::vector<std::vector<int>> part(static_cast<std::size_t>(ds.num_classes()));
  for (int g = 0; g < ds.num_groups(); ++g) part[static_cast<std::size_t>(ds.class_of_group(g))].push_back(g);
  return part;
}

ordered_json evaluate(const RunConfig& cfg, const MethodEntry& method, std::uint64_t seed, const Dataset& ds,
                      const SplitSet& splits, const TrainResult& r) {
  const auto& names = cfg.eval.subgroup_names;
  const auto& test = splits.test;
  std::vector<int> y(test.size());
  std::vector<int> a(test.size());
  std::vector<int> g(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    y[i] = ds.labels()[test[i]];
    a[i] = ds.attributes()[test[i]];
    g[i] = ds.groups()[test[i]];
  }
  const Tensor2 x = ds.features().gather_rows(test);
  const Tensor2 logits = r.model.task_logits(x);
  const SubgroupMetrics acc = subgroup_accuracy(argmax_rows(logits), y, g, ds.num_groups());
  const DisparityReport disp = disparity(acc, class_partition(ds));

  ordered_json cell;
  cell["method"] = method.name;
  cell["method_id"] = std::string(to_string(method.config.method));
  cell["seed"] = seed;
  cell["status"] = "ok";
  cell["fingerprint"] = cell_fingerprint(cfg, method, seed);
  cell["subgroup_names"] = names;
  cell["split_sizes"] = {{"train", splits.train.size()}, {"val", splits.val.size()}, {"test", test.size()}};
  cell["accuracy"] = metrics_json(acc, names);
  cell["disparity"] = {{"delta_best_worst", disp.delta_best_worst},
                       {"delta_avg_worst", disp.delta_avg_worst},
                       {"per_class", optional_array(disp.per_class)},
                       {"class_mean", disp.class_mean}};

  if (!cfg.eval.bias_conflicting_ids.empty()) {
    double s = 0.0;
    std::size_t n = 0;
    for (int id : cfg.eval.bias_conflicting_ids) {
      const auto& v = acc.values[static_cast<std::size_t>(id)];
      if (v) {
        s += *v;
        ++n;
      }
    }
    if (n > 0) cell["bias_conflicting_accuracy"] = s / static_cast<double>(n);
  }

  if (cfg.eval.auc) {
    const Tensor2 prob = softmax(logits);
    std::vector<std::optional<double>> per_group(static_cast<std::size_t>(ds.num_groups()));
    for (int gid = 0; gid < ds.num_groups(); ++gid) {
      const int c = ds.class_of_group(gid);
      std::vector<double> scores(test.size());
      for (std::size_t i = 0; i < test.size(); ++i) scores[i] = prob(i, static_cast<std::size_t>(c));
      per_group[static_cast<std::size_t>(gid)] =
          subgroup_auc(scores, y, a, c, ds.attribute_of_group(gid), cfg.eval.auc_negatives);
    }
    bool any = std::any_of(per_group.begin(), per_group.end(), [](const auto& v) { return v.has_value(); });
    if (any) {
      const SubgroupMetrics m = summarize(per_group);
      const DisparityReport d = disparity(m, class_partition(ds));
      cell["auc"] = metrics_json(m, names);
      cell["auc"]["negatives"] =
          cfg.eval.auc_negatives == AucNegatives::kWithinAttribute ? "within_attribute" : "all";
      cell["auc_disparity"] = {{"delta_best_worst", d.delta_best_worst},
                               {"delta_avg_worst", d.delta_avg_worst},
                               {"per_class", optional_array(d.per_class)},
                               {"class_mean", d.class_mean}};
    }
  }

  if (cfg.eval.som) {
    const Tensor2 z = r.model.representations(x);
    const SomGrid grid = som_fit(z, cfg.eval.som_params, seed);
    const Occupancy occ = som_assign(grid, z, g, ds.num_groups());
    const PurityReport pr = purity(occ);
    std::vector<std::vector<std::size_t>> counts(occ.nodes);
    for (std::size_t n = 0; n < occ.nodes; ++n) {
      for (std::size_t k = 0; k < occ.num_groups; ++k) counts[n].push_back(occ.at(n, k));
    }
    cell["purity"] = {{"overall", pr.overall},
                      {"unweighted", pr.unweighted},
                      {"reported", cfg.eval.purity_unweighted ? pr.unweighted : pr.overall},
                      {"weighting", cfg.eval.purity_unweighted ? "unweighted" : "weighted"},
                      {"height", grid.height},
                      {"width", grid.width},
                      {"per_node", optional_array(pr.per_node)},
                      {"majority", pr.majority},
                      {"occupancy", counts},
                      {"fit_on", "test"}};
  }

  if (r.model.domain_head) {
    const SubgroupMetrics d = domain_probe_accuracy(r.model, ds, test);
    cell["domain_probe"] = metrics_json(d, names);
  }

  if (method.config.method == MethodId::kJtt) {
    ordered_json e = {{"size", r.error_set.size()}, {"counts", r.trajectory.error_set_counts}};
    if (!r.error_set.empty()) {
      const auto comp =
          error_set_composition(r.error_set, ds.groups(), ds.num_groups(), cfg.eval.bias_conflicting_ids);
      e["share"] = comp.share;
      e["bias_conflicting_share"] = comp.bias_conflicting_share;
    }
    cell["error_set"] = e;
  }

  const Trajectory& t = r.trajectory;
  ordered_json tr = {{"file", "trajectory.jsonl"}, {"epochs", t.epochs.size()}};
  if (t.selected_epoch) {
    tr["selected_epoch"] = *t.selected_epoch;
  } else {
    tr["selected_epoch"] = nullptr;
  }
  if (t.adversary_steps > 0) {
    tr["adversary_steps"] = t.adversary_steps;
    tr["max_simplex_deviation"] = t.max_simplex_deviation;
    tr["min_weight"] = t.min_weight;
  }
  cell["trajectory"] = tr;
  cell["checkpoint"] = "checkpoint.json";
  if (r.encoder_checksum_before_finetune) {
    cell["finetune"] = {{"with_replacement", r.finetune_with_replacement},
                        {"encoder_unchanged",
                         r.encoder_checksum_before_finetune == r.encoder_checksum_after_finetune}};
  }
  cell["warnings"] = r.warnings;
  cell["method_config"] = json::parse(method_config_json(method.config));
  return cell;
}

ordered_json failed_cell(const RunConfig& cfg, const MethodEntry& method, std::uint64_t seed,
                         const std::string& error) {
  ordered_json cell;
  cell["method"] = method.name;
  cell["method_id"] = std::string(to_string(method.config.method));
  cell["seed"] = seed;
  cell["status"] = "failed";
  cell["fingerprint"] = cell_fingerprint(cfg, method, seed);
  cell["error"] = error;
  return cell;
}

}  // namespace

std::string resolve_output_dir(const RunConfig& cfg) {
  const char* root = std::getenv(kOutputRootEnv);
  if (root == nullptr || *root == '\0') return cfg.output_dir;
  fs::path leaf = fs::path(cfg.output_dir).filename();
  if (leaf.empty()) leaf = fs::path(cfg.output_dir).parent_path().filename();
  return (fs::path(root) / leaf).string();
}

std::string cell_fingerprint(const RunConfig& cfg, const MethodEntry& method, std::uint64_t seed) {
  const json doc = json::parse(cfg.snapshot);
  std::string key = doc.at("dataset").dump();
  key += doc.contains("split") ? doc.at("split").dump() : "{}";
  key += doc.contains("eval") ? doc.at("eval").dump() : "{}";
  key += method.name;
  key += method_config_json(method.config);
  key += std::to_string(seed);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(key)));
  return buf;
}

CellArtifacts run_cell(const RunConfig& cfg, const MethodEntry& method, std::uint64_t seed) {
  CellArtifacts out;
  try {
    const PreparedData data = prepare_data(cfg, seed);
    const TrainResult r = train(data.ds, data.splits, method.config, seed);
    out.cell_json = evaluate(cfg, method, seed, data.ds, data.splits, r).dump(2);
    out.checkpoint = checkpoint_json(r.model, seed, std::string(to_string(method.config.method)));
    out.trajectory = trajectory_jsonl(r.trajectory);
    out.ok = true;
  } catch (const std::exception& e) {
    out = CellArtifacts{};
    out.error = e.what();
    out.cell_json = failed_cell(cfg, method, seed, e.what()).dump(2);
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> summary_row(const std::string& cell_text) {
  const ordered_json c = ordered_json::parse(cell_text);
  std::vector<std::pair<std::string, std::string>> row;
  auto num = [](const ordered_json& v) { return v.is_number() ? fmt(v.get<double>()) : std::string(); };
  row.emplace_back("method", c.at("method").get<std::string>());
  row.emplace_back("seed", std::to_string(c.at("seed").get<std::uint64_t>()));
  row.emplace_back("status", c.at("status").get<std::string>());
  if (c.at("status") != "ok") return row;

  const auto& names = c.at("subgroup_names");
  const auto& acc = c.at("accuracy");
  row.emplace_back("average", num(acc.at("average")));
  row.emplace_back("worst", num(acc.at("worst")));
  row.emplace_back("best", num(acc.at("best")));
  row.emplace_back("worst_group", acc.at("worst_group").get<std::string>());
  row.emplace_back("delta_best_worst", num(c.at("disparity").at("delta_best_worst")));
  row.emplace_back("delta_avg_worst", num(c.at("disparity").at("delta_avg_worst")));
  row.emplace_back("class_delta_mean", num(c.at("disparity").at("class_mean")));
  for (std::size_t k = 0; k < names.size(); ++k) {
    row.emplace_back("acc_" + names[k].get<std::string>(), num(acc.at("values")[k]));
  }
  if (c.contains("bias_conflicting_accuracy")) {
    row.emplace_back("bias_conflicting_accuracy", num(c.at("bias_conflicting_accuracy")));
  }
  if (c.contains("auc")) {
    const auto& au = c.at("auc");
    row.emplace_back("auc_average", num(au.at("average")));
    row.emplace_back("auc_worst", num(au.at("worst")));
    row.emplace_back("auc_delta_best_worst", num(c.at("auc_disparity").at("delta_best_worst")));
    row.emplace_back("auc_class_delta_mean", num(c.at("auc_disparity").at("class_mean")));
    for (std::size_t k = 0; k < names.size(); ++k) {
      row.emplace_back("auc_" + names[k].get<std::string>(), num(au.at("values")[k]));
    }
  }
  if (c.contains("purity")) row.emplace_back("purity", num(c.at("purity").at("reported")));
  if (c.contains("domain_probe")) {
    for (std::size_t k = 0; k < names.size(); ++k) {
      row.emplace_back("domain_acc_" + names[k].get<std::string>(), num(c.at("domain_probe").at("values")[k]));
    }
  }
  if (c.contains("error_set") && c.at("error_set").contains("bias_conflicting_share")) {
    row.emplace_back("error_set_bias_conflicting_share", num(c.at("error_set").at("bias_conflicting_share")));
  }
  const auto& sel = c.at("trajectory").at("selected_epoch");
  row.emplace_back("selected_epoch", sel.is_null() ? std::string() : std::to_string(sel.get<std::size_t>()));
  return row;
}

namespace {

struct Table {
  std::vector<std::string> columns;
  std::vector<std::map<std::string, std::string>> rows;

  void add(const std::vector<std::pair<std::string, std::string>>& row) {
    std::map<std::string, std::string> m;
    for (const auto& [k, v] : row) {
      if (std::find(columns.begin(), columns.end(), k) == columns.end()) columns.push_back(k);
      m[k] = v;
    }
    rows.push_back(std::move(m));
  }

  std::string csv() const {
    std::string out;
    for (std::size_t i = 0; i < columns.size(); ++i) out += (i ? "," : "") + columns[i];
    out += '\n';
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < columns.size(); ++i) {
        if (i) out += ',';
        const auto it = r.find(columns[i]);
        if (it != r.end()) out += it->second;
      }
      out += '\n';
    }
    return out;
  }
};

bool is_metric_column(const std::string& col) {
  static const std::set<std::string> kNot = {"method", "seed", "status", "worst_group", "selected_epoch", "record", "n",
                                             "best_marker"};
  return !kNot.count(col);
}

/// Aggregates over the ok cells of each method, in first-appearance order.
ordered_json aggregate(const std::vector<ordered_json>& cells) {
  std::vector<std::string> order;
  std::map<std::string, std::map<std::string, std::vector<double>>> values;
  std::map<std::string, std::vector<std::string>> columns;
  std::map<std::string, std::size_t> failed;
  for (const auto& c : cells) {
    const std::string m = c.at("method").get<std::string>();
    if (std::find(order.begin(), order.end(), m) == order.end()) order.push_back(m);
    if (c.at("status") != "ok") {
      ++failed[m];
      continue;
    }
    for (const auto& [k, v] : summary_row(c.dump())) {
      if (!is_metric_column(k) || v.empty()) continue;
      double d = 0.0;
      const auto res = std::from_chars(v.data(), v.data() + v.size(), d);
      if (res.ec != std::errc()) continue;
      auto& cols = columns[m];
      if (std::find(cols.begin(), cols.end(), k) == cols.end()) cols.push_back(k);
      values[m][k].push_back(d);
    }
  }
  ordered_json out = ordered_json::object();
  for (const auto& m : order) {
    ordered_json entry = ordered_json::object();
    for (const auto& k : columns[m]) {
      const MeanStd ms = mean_std(values[m][k]);
      entry[k] = {{"mean", ms.mean}, {"std", ms.std}, {"n", ms.n}};
    }
    ordered_json wrapped = {{"metrics", entry}, {"failed_cells", failed[m]}};
    out[m] = wrapped;
  }
  return out;
}

}  // namespace

RunReport run_experiment(const RunConfig& cfg, std::ostream& log) {
  RunReport report;
  const fs::path dir = resolve_output_dir(cfg);
  report.output_dir = dir.string();
  fs::create_directories(dir / "cells");
  write_atomic(dir / "config.json", cfg.snapshot + "\n");

  struct Job {
    const MethodEntry* method;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::uint64_t seed : cfg.seeds) {
    for (const auto& m : cfg.methods) jobs.push_back({&m, seed});
  }
  report.cells = jobs.size();

  std::vector<ordered_json> cells(jobs.size());
  std::vector<double> elapsed(jobs.size(), 0.0);
  std::vector<bool> done(jobs.size(), false);
  std::mutex mu;

  auto write_record = [&]() {
    ordered_json rec;
    rec["config"] = ordered_json::parse(cfg.snapshot);
    rec["metadata"] = {{"average", "group-averaged (unweighted mean over subgroups)"},
                       {"std", "sample standard deviation (n-1) over seeds"},
                       {"output_dir", dir.string()}};
    std::vector<ordered_json> finished;
    ordered_json list = ordered_json::array();
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      if (!done[i]) continue;
      ordered_json entry = cells[i];
      entry["dir"] = "cells/" + cell_dir_name(jobs[i].method->name, jobs[i].seed);
      entry["elapsed_seconds"] = elapsed[i];
      list.push_back(entry);
      finished.push_back(cells[i]);
    }
    rec["cells"] = list;
    rec["aggregates"] = aggregate(finished);
    write_atomic(dir / "run_record.json", rec.dump(2) + "\n");
  };

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> skipped{0};
  std::atomic<std::size_t> failed{0};

  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      const Job& job = jobs[i];
      const fs::path cdir = dir / "cells" / cell_dir_name(job.method->name, job.seed);
      const fs::path cell_path = cdir / "cell.json";
      const std::string fp = cell_fingerprint(cfg, *job.method, job.seed);

      std::optional<ordered_json> reused;
      if (fs::exists(cell_path)) {
        try {
          ordered_json prev = ordered_json::parse(read_file(cell_path));
          if (prev.value("status", "") == "ok" && prev.value("fingerprint", "") == fp &&
              fs::exists(cdir / "checkpoint.json") && fs::exists(cdir / "trajectory.jsonl")) {
            reused = std::move(prev);
          }
        } catch (const std::exception&) {
          // unreadable cell: recompute
        }
      }

      ordered_json cell;
      double secs = 0.0;
      if (reused) {
        cell = std::move(*reused);
        ++skipped;
      } else {
        const auto t0 = std::chrono::steady_clock::now();
        CellArtifacts art = run_cell(cfg, *job.method, job.seed);
        secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        fs::create_directories(cdir);
        if (art.ok) {
          write_atomic(cdir / "checkpoint.json", art.checkpoint);
          write_atomic(cdir / "trajectory.jsonl", art.trajectory);
        }
        write_atomic(cell_path, art.cell_json + "\n");
        cell = ordered_json::parse(art.cell_json);
      }
      if (cell.at("status") != "ok") ++failed;

      std::lock_guard<std::mutex> lock(mu);
      cells[i] = std::move(cell);
      elapsed[i] = secs;
      done[i] = true;
      log << (reused ? "skip " : (cells[i].at("status") == "ok" ? "done " : "FAIL ")) << job.method->name
          << " seed=" << job.seed;
      if (cells[i].at("status") != "ok") log << " error: " << cells[i].at("error").get<std::string>();
      log << '\n';
      log.flush();
      write_record();
    }
  };

  const std::size_t n_workers = std::min<std::size_t>(cfg.workers, std::max<std::size_t>(jobs.size(), 1));
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  // summary.csv from the cell files on disk
  Table table;
  for (const auto& job : jobs) {
    const fs::path cell_path = dir / "cells" / cell_dir_name(job.method->name, job.seed) / "cell.json";
    table.add(summary_row(read_file(cell_path)));
  }
  write_atomic(dir / "summary.csv", table.csv());

  report.skipped = skipped;
  report.failed = failed;
  return report;
}

int run_command(const std::string& config_path, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  try {
    cfg = load_run_config(config_path);
  } catch (const Error& e) {
    err << "config error: " << e.what() << '\n';
    return kExitValidation;
  }
  try {
    const RunReport r = run_experiment(cfg, out);
    out << r.cells << " cells (" << r.skipped << " reused, " << r.failed << " failed) -> " << r.output_dir << '\n';
    return r.failed > 0 ? kExitPartial : kExitOk;
  } catch (const std::exception& e) {
    err << "run error: " << e.what() << '\n';
    return kExitPartial;
  }
}

namespace {

fs::path record_file(const std::string& path) {
  fs::path p(path);
  if (fs::is_directory(p)) p /= "run_record.json";
  if (!fs::exists(p)) throw ConfigError("no run record at '" + p.string() + "'");
  return p;
}

ordered_json load_record(const fs::path& p) {
  try {
    return ordered_json::parse(read_file(p));
  } catch (const json::exception& e) {
    throw SchemaError("'" + p.string() + "' is not a run record: " + e.what());
  }
}

}  // namespace

std::string compare_records(const std::vector<std::string>& record_paths) {
  if (record_paths.empty()) throw ConfigError("compare: no records given");
  Table table;
  const bool label_records = record_paths.size() > 1;
  for (const auto& path : record_paths) {
    const fs::path p = record_file(path);
    const ordered_json rec = load_record(p);
    if (!rec.contains("aggregates")) throw SchemaError("'" + p.string() + "' has no aggregates");
    const std::string label = p.parent_path().filename().string();
    for (const auto& [method, agg] : rec.at("aggregates").items()) {
      std::vector<std::pair<std::string, std::string>> row;
      if (label_records) row.emplace_back("record", label);
      row.emplace_back("method", method);
      std::size_t n = 0;
      for (const auto& [col, stats] : agg.at("metrics").items()) {
        row.emplace_back(col, fmt(stats.at("mean").get<double>()));
        n = std::max(n, stats.at("n").get<std::size_t>());
      }
      row.emplace_back("n", std::to_string(n));
      table.add(row);
    }
  }

  // best-cell markers
  std::vector<std::vector<std::string>> marks(table.rows.size());
  for (const auto& col : table.columns) {
    if (!is_metric_column(col) || col == "best_marker") continue;
    const bool lower_better = col.rfind("delta", 0) == 0 || col.find("_delta_") != std::string::npos ||
                              col.rfind("class_delta", 0) == 0 || col == "purity";
    if (col.rfind("domain_acc_", 0) == 0 || col.rfind("error_set_", 0) == 0) continue;
    std::optional<double> best;
    std::vector<double> vals(table.rows.size(), std::nan(""));
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
      const auto it = table.rows[r].find(col);
      if (it == table.rows[r].end() || it->second.empty()) continue;
      double d = 0.0;
      std::from_chars(it->second.data(), it->second.data() + it->second.size(), d);
      vals[r] = d;
      if (!best || (lower_better ? d < *best : d > *best)) best = d;
    }
    if (!best) continue;
    for (std::size_t r = 0; r < vals.size(); ++r) {
      if (!std::isnan(vals[r]) && vals[r] == *best) marks[r].push_back(col);
    }
  }
  table.columns.push_back("best_marker");
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    std::string m;
    for (std::size_t k = 0; k < marks[r].size(); ++k) m += (k ? ";" : "") + marks[r][k];
    table.rows[r]["best_marker"] = m;
  }
  return table.csv();
}

std::string plot_data(const std::string& record_path, const std::string& kind, const std::optional<std::string>& method,
                      const std::optional<std::uint64_t>& seed) {
  static const std::set<std::string> kKinds = {"weights", "losses", "domain_acc", "som"};
  if (!kKinds.count(kind)) throw ConfigError("unknown plot kind '" + kind + "' (expected weights|losses|domain_acc|som)");
  const fs::path p = record_file(record_path);
  const ordered_json rec = load_record(p);
  const fs::path root = p.parent_path();

  ordered_json out;
  out["kind"] = kind;
  ordered_json series = ordered_json::array();
  for (const auto& cell : rec.at("cells")) {
    if (cell.at("status") != "ok") continue;
    if (method && cell.at("method") != *method) continue;
    if (seed && cell.at("seed").get<std::uint64_t>() != *seed) continue;
    ordered_json s = {{"method", cell.at("method")}, {"seed", cell.at("seed")}, {"groups", cell.at("subgroup_names")}};
    if (kind == "som") {
      if (!cell.contains("purity")) continue;
      const auto& pr = cell.at("purity");
      const std::size_t h = pr.at("height");
      const std::size_t w = pr.at("width");
      ordered_json grid = ordered_json::array();
      for (std::size_t r = 0; r < h; ++r) {
        ordered_json line = ordered_json::array();
        for (std::size_t c = 0; c < w; ++c) {
          const std::size_t node = r * w + c;
          const int maj = pr.at("majority")[node];
          line.push_back({{"majority", maj < 0 ? ordered_json(nullptr) : cell.at("subgroup_names")[maj]},
                          {"purity", pr.at("per_node")[node]},
                          {"counts", pr.at("occupancy")[node]}});
        }
        grid.push_back(line);
      }
      s["height"] = h;
      s["width"] = w;
      s["grid"] = grid;
      s["purity"] = pr.at("overall");
      s["purity_unweighted"] = pr.at("unweighted");
      series.push_back(s);
      continue;
    }
    const fs::path traj = root / cell.at("dir").get<std::string>() / "trajectory.jsonl";
    std::istringstream lines(read_file(traj));
    std::string line;
    ordered_json epochs = ordered_json::array();
    ordered_json stages = ordered_json::array();
    ordered_json values = ordered_json::array();
    ordered_json end_values = ordered_json::array();
    while (std::getline(lines, line)) {
      if (line.empty()) continue;
      const ordered_json e = ordered_json::parse(line);
      const char* key = kind == "weights" ? "group_weight_mean" : kind == "losses" ? "group_loss" : "domain_accuracy";
      if (!e.contains(key)) continue;
      epochs.push_back(epochs.size());
      stages.push_back(e.at("stage"));
      values.push_back(e.at(key));
      if (kind == "weights") end_values.push_back(e.at("group_weight_end"));
    }
    if (values.empty()) continue;
    s["epoch"] = epochs;
    s["stage"] = stages;
    s["values"] = values;
    if (kind == "weights") s["end_values"] = end_values;
    series.push_back(s);
  }
  out["series"] = series;
  return out.dump(2) + "\n";
}

}  // namespace debias
