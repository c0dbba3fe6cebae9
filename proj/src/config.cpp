#include "debias/config.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "debias/error.hpp"
#include "debias/rng.hpp"

namespace debias {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
  throw ConfigError(path + ": " + msg);
}

/// Read access to one JSON object that remembers its key path and rejects
/// keys nobody asked for.
class Node {
 public:
  Node(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_.empty() ? "<root>" : path_, "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  Node child(const std::string& key) {
    if (!has(key)) return Node(empty_object(), key_path(key));
    return Node(raw(key), key_path(key));
  }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) fail(key_path(key), "expected true or false");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) fail(key_path(key), "expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.get<long long>() < 0) fail(key_path(key), "must be >= 0");
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) fail(key_path(key), "expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) fail(key_path(key), "expected a string");
      }
      out = v.get<T>();
    } catch (const json::exception& e) {
      fail(key_path(key), std::string("invalid value (") + e.what() + ")");
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) fail(key_path(it.key()), "unknown key");
    }
  }

  const std::string& path() const { return path_; }

 private:
  static const json& empty_object() {
    static const json e = json::object();
    return e;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::vector<std::vector<std::size_t>> read_counts(const json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) fail(path, "expected a non-empty matrix [class][attribute]");
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t y = 0; y < v.size(); ++y) {
    const std::string rp = path + "[" + std::to_string(y) + "]";
    if (!v[y].is_array() || v[y].empty()) fail(rp, "expected a non-empty row");
    std::vector<std::size_t> row;
    for (std::size_t a = 0; a < v[y].size(); ++a) {
      const json& c = v[y][a];
      if (!c.is_number_integer() || c.get<long long>() < 0) {
        fail(rp + "[" + std::to_string(a) + "]", "expected a nonnegative integer");
      }
      row.push_back(c.get<std::size_t>());
    }
    if (!out.empty() && row.size() != out.front().size()) fail(rp, "rows differ in length");
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<std::vector<double>> read_real_matrix(const json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) fail(path, "expected a non-empty matrix");
  std::vector<std::vector<double>> out;
  for (std::size_t y = 0; y < v.size(); ++y) {
    const std::string rp = path + "[" + std::to_string(y) + "]";
    if (!v[y].is_array()) fail(rp, "expected a row");
    std::vector<double> row;
    for (std::size_t a = 0; a < v[y].size(); ++a) {
      if (!v[y][a].is_number()) fail(rp + "[" + std::to_string(a) + "]", "expected a number");
      row.push_back(v[y][a].get<double>());
    }
    if (!out.empty() && row.size() != out.front().size()) fail(rp, "rows differ in length");
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<double> read_fractions(Node& n, const std::string& key, std::size_t expected,
                                   std::vector<double> fallback) {
  if (!n.has(key)) return fallback;
  const json& v = n.raw(key);
  const std::string path = n.key_path(key);
  if (!v.is_array() || v.size() != expected) {
    fail(path, "expected " + std::to_string(expected) + " fractions");
  }
  std::vector<double> out;
  double sum = 0.0;
  for (const json& f : v) {
    if (!f.is_number() || f.get<double>() < 0.0) fail(path, "fractions must be nonnegative numbers");
    out.push_back(f.get<double>());
    sum += out.back();
  }
  if (std::abs(sum - 1.0) > 1e-9) fail(path, "fractions must sum to 1");
  return out;
}

void read_arch(Node n, ArchConfig& arch) {
  n.get("encoder_hidden", arch.encoder_hidden);
  n.get("representation_width", arch.representation_width);
  n.get("domain_hidden", arch.domain_hidden);
  n.finish();
}

/// Applies every MethodConfig key present in `n` onto `cfg`.
void read_method_fields(Node& n, MethodConfig& cfg) {
  n.get("epochs", cfg.epochs);
  n.get("batch_size", cfg.batch_size);
  n.get("lr", cfg.lr);
  n.get("momentum", cfg.momentum);
  n.get("weight_decay", cfg.weight_decay);
  n.get("eta_q", cfg.eta_q);
  n.get("adj_c", cfg.adj_c);
  n.get("proposed_adjust", cfg.proposed_adjust);
  n.get("jtt_epochs", cfg.jtt_epochs);
  n.get("jtt_lambda", cfg.jtt_lambda);
  n.get("jtt_top_fraction", cfg.jtt_top_fraction);
  if (n.has("jtt_error_mode")) {
    std::string mode;
    n.get("jtt_error_mode", mode);
    if (mode == "misclassified") {
      cfg.jtt_error_mode = JttErrorMode::kMisclassified;
    } else if (mode == "top_loss") {
      cfg.jtt_error_mode = JttErrorMode::kTopLoss;
    } else {
      fail(n.key_path("jtt_error_mode"), "expected misclassified|top_loss, got '" + mode + "'");
    }
  }
  n.get("dann_lambda", cfg.dann_lambda);
  n.get("per_group_finetune", cfg.per_group_finetune);
  n.get("finetune_epochs", cfg.finetune_epochs);
  n.get("finetune_batch_size", cfg.finetune_batch_size);
  n.get("finetune_lr", cfg.finetune_lr);
  n.get("finetune_reinit", cfg.finetune_reinit);
  if (n.has("selection")) {
    std::string s;
    n.get("selection", s);
    try {
      cfg.selection = parse_selection(s);
    } catch (const ConfigError& e) {
      fail(n.key_path("selection"), e.what());
    }
  }
  if (n.has("arch")) read_arch(n.child("arch"), cfg.arch);
}

void read_dataset(Node n, DatasetConfig& d, const std::string& base_dir) {
  std::string kind = "synthetic";
  n.get("kind", kind);
  if (kind == "synthetic") {
    d.kind = DatasetConfig::Kind::kSynthetic;
    SubgroupSpec& s = d.spec;
    if (n.has("counts") == n.has("percentages")) {
      fail(n.path(), "give exactly one of counts or percentages");
    }
    if (n.has("counts")) {
      s.counts = read_counts(n.raw("counts"), n.key_path("counts"));
    } else {
      const auto pct = read_real_matrix(n.raw("percentages"), n.key_path("percentages"));
      std::size_t total = 0;
      if (!n.has("column_total")) fail(n.key_path("column_total"), "required with percentages");
      n.get("column_total", total);
      try {
        s.counts = counts_from_column_percentages(pct, total);
      } catch (const Error& e) {
        fail(n.key_path("percentages"), e.what());
      }
    }
    s.num_classes = static_cast<int>(s.counts.size());
    s.num_attributes = static_cast<int>(s.counts.front().size());
    n.get("core_separation", s.core_separation);
    n.get("spurious_strength", s.spurious_strength);
    n.get("noise_sigma", s.noise_sigma);
    n.get("hard_fraction", s.hard_fraction);
    n.get("dim_core", d.dim_core);
    n.get("dim_spurious", d.dim_spurious);
    if (n.has("eval_counts")) {
      d.eval_counts = read_counts(n.raw("eval_counts"), n.key_path("eval_counts"));
      if (d.eval_counts->size() != s.counts.size() || d.eval_counts->front().size() != s.counts.front().size()) {
        fail(n.key_path("eval_counts"), "shape must match counts");
      }
    }
    if (d.dim_core < 1) fail(n.key_path("dim_core"), "must be >= 1");
    if (d.dim_spurious < 1) fail(n.key_path("dim_spurious"), "must be >= 1");
    try {
      validate(s);
    } catch (const Error& e) {
      fail(n.path(), e.what());
    }
  } else if (kind == "csv") {
    d.kind = DatasetConfig::Kind::kCsv;
    if (!n.has("path")) fail(n.key_path("path"), "required for csv datasets");
    n.get("path", d.csv_path);
    std::filesystem::path p(d.csv_path);
    if (p.is_relative()) d.csv_path = (std::filesystem::path(base_dir) / p).lexically_normal().string();
    n.get("label_column", d.schema.label_column);
    n.get("attribute_column", d.schema.attribute_column);
    n.get("num_classes", d.schema.num_classes);
    n.get("num_attributes", d.schema.num_attributes);
  } else {
    fail(n.key_path("kind"), "expected synthetic|csv, got '" + kind + "'");
  }
  n.finish();
}

void read_eval(Node n, EvalConfig& e) {
  n.get("som", e.som);
  if (n.has("som_params")) {
    Node s = n.child("som_params");
    s.get("height", e.som_params.height);
    s.get("width", e.som_params.width);
    s.get("epochs", e.som_params.epochs);
    s.get("alpha0", e.som_params.alpha0);
    s.get("sigma0", e.som_params.sigma0);
    s.finish();
    if (e.som_params.height < 1 || e.som_params.width < 1) fail(s.path(), "grid must be at least 1x1");
    if (!(e.som_params.alpha0 > 0.0)) fail(s.key_path("alpha0"), "must be > 0");
    if (!(e.som_params.sigma0 > 0.0)) fail(s.key_path("sigma0"), "must be > 0");
  }
  if (n.has("purity")) {
    std::string p;
    n.get("purity", p);
    if (p == "weighted") {
      e.purity_unweighted = false;
    } else if (p == "unweighted") {
      e.purity_unweighted = true;
    } else {
      fail(n.key_path("purity"), "expected weighted|unweighted, got '" + p + "'");
    }
  }
  n.get("auc", e.auc);
  if (n.has("auc_negatives")) {
    std::string s;
    n.get("auc_negatives", s);
    if (s == "within_attribute") {
      e.auc_negatives = AucNegatives::kWithinAttribute;
    } else if (s == "all") {
      e.auc_negatives = AucNegatives::kAllAttributes;
    } else {
      fail(n.key_path("auc_negatives"), "expected within_attribute|all, got '" + s + "'");
    }
  }
  n.get("subgroup_names", e.subgroup_names);
  n.get("bias_conflicting", e.bias_conflicting);
  n.finish();
}

std::pair<int, int> group_structure(const DatasetConfig& d) {
  if (d.kind == DatasetConfig::Kind::kSynthetic) return {d.spec.num_classes, d.spec.num_attributes};
  if (d.schema.num_classes > 0 && d.schema.num_attributes > 0) {
    return {d.schema.num_classes, d.schema.num_attributes};
  }
  const Dataset ds = load_csv(d.csv_path, d.schema);
  return {ds.num_classes(), ds.num_attributes()};
}

}  // namespace

std::vector<std::string> default_subgroup_names(int num_classes, int num_attributes) {
  std::vector<std::string> out;
  for (int y = 0; y < num_classes; ++y) {
    for (int a = 0; a < num_attributes; ++a) out.push_back("y" + std::to_string(y) + "_a" + std::to_string(a));
  }
  return out;
}

RunConfig parse_run_config(const std::string& json_text, const std::string& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  Node root(doc, "");

  if (!root.has("dataset")) fail("dataset", "required");
  read_dataset(root.child("dataset"), cfg.dataset, base_dir);

  {
    Node s = root.child("split");
    cfg.split.fractions = read_fractions(s, "fractions", 3, cfg.split.fractions);
    cfg.split.eval_fractions = read_fractions(s, "eval_fractions", 2, cfg.split.eval_fractions);
    s.get("stratify", cfg.split.stratify);
    s.finish();
    if (!cfg.dataset.eval_counts && cfg.split.fractions[1] <= 0.0) {
      fail("split.fractions", "validation fraction must be > 0");
    }
    if (cfg.dataset.eval_counts && cfg.split.eval_fractions[0] <= 0.0) {
      fail("split.eval_fractions", "validation fraction must be > 0");
    }
  }

  MethodConfig defaults;
  if (root.has("defaults")) {
    Node d = root.child("defaults");
    read_method_fields(d, defaults);
    d.finish();
  }

  if (!root.has("methods")) fail("methods", "required");
  const json& methods = root.raw("methods");
  if (!methods.is_array() || methods.empty()) fail("methods", "expected a non-empty list");
  std::set<std::string> names;
  for (std::size_t i = 0; i < methods.size(); ++i) {
    const std::string path = "methods[" + std::to_string(i) + "]";
    MethodEntry entry;
    entry.config = defaults;
    std::string id;
    if (methods[i].is_string()) {
      id = methods[i].get<std::string>();
      entry.name = id;
    } else {
      Node m(methods[i], path);
      if (!m.has("id")) fail(path + ".id", "required");
      m.get("id", id);
      entry.name = id;
      m.get("name", entry.name);
      read_method_fields(m, entry.config);
      m.finish();
    }
    try {
      entry.config.method = parse_method(id);
    } catch (const ConfigError& e) {
      fail(path + ".id", e.what());
    }
    try {
      validate(entry.config);
    } catch (const ConfigError& e) {
      fail(path, e.what());
    }
    if (entry.name.empty() || entry.name.find_first_of("/\\ ") != std::string::npos) {
      fail(path + ".name", "must be non-empty without spaces or slashes");
    }
    if (!names.insert(entry.name).second) fail(path + ".name", "duplicate method name '" + entry.name + "'");
    cfg.methods.push_back(std::move(entry));
  }

  read_eval(root.child("eval"), cfg.eval);

  if (!root.has("seeds")) fail("seeds", "required");
  {
    const json& s = root.raw("seeds");
    if (!s.is_array() || s.empty()) fail("seeds", "expected a non-empty list of integers");
    std::set<std::uint64_t> uniq;
    for (const json& v : s) {
      if (!v.is_number_integer() || v.get<long long>() < 0) fail("seeds", "seeds must be nonnegative integers");
      if (!uniq.insert(v.get<std::uint64_t>()).second) fail("seeds", "duplicate seed");
      cfg.seeds.push_back(v.get<std::uint64_t>());
    }
  }
  root.get("output_dir", cfg.output_dir);
  if (cfg.output_dir.empty()) fail("output_dir", "must be non-empty");
  root.get("workers", cfg.workers);
  if (cfg.workers < 1) fail("workers", "must be >= 1");
  root.finish();

  const auto [k, a] = group_structure(cfg.dataset);
  const int groups = k * a;
  if (cfg.eval.subgroup_names.empty()) {
    cfg.eval.subgroup_names = default_subgroup_names(k, a);
  } else if (static_cast<int>(cfg.eval.subgroup_names.size()) != groups) {
    fail("eval.subgroup_names", "expected " + std::to_string(groups) + " names (one per subgroup)");
  }
  for (const auto& name : cfg.eval.bias_conflicting) {
    const auto it = std::find(cfg.eval.subgroup_names.begin(), cfg.eval.subgroup_names.end(), name);
    if (it == cfg.eval.subgroup_names.end()) fail("eval.bias_conflicting", "unknown subgroup name '" + name + "'");
    cfg.eval.bias_conflicting_ids.push_back(static_cast<int>(it - cfg.eval.subgroup_names.begin()));
  }

  cfg.snapshot = doc.dump(2);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  const auto parent = std::filesystem::path(path).parent_path();
  return parse_run_config(buf.str(), parent.empty() ? "." : parent.string());
}

std::string method_config_json(const MethodConfig& c) {
  const json j = {
      {"id", std::string(to_string(c.method))},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"lr", c.lr},
      {"momentum", c.momentum},
      {"weight_decay", c.weight_decay},
      {"eta_q", c.eta_q},
      {"adj_c", c.adj_c},
      {"proposed_adjust", c.proposed_adjust},
      {"jtt_epochs", c.jtt_epochs},
      {"jtt_lambda", c.jtt_lambda},
      {"jtt_error_mode", c.jtt_error_mode == JttErrorMode::kMisclassified ? "misclassified" : "top_loss"},
      {"jtt_top_fraction", c.jtt_top_fraction},
      {"dann_lambda", c.dann_lambda},
      {"per_group_finetune", c.per_group_finetune},
      {"finetune_epochs", c.finetune_epochs},
      {"finetune_batch_size", c.finetune_batch_size},
      {"finetune_lr", c.finetune_lr},
      {"finetune_reinit", c.finetune_reinit},
      {"selection", std::string(to_string(c.selection))},
      {"arch",
       {{"encoder_hidden", c.arch.encoder_hidden},
        {"representation_width", c.arch.representation_width},
        {"domain_hidden", c.arch.domain_hidden}}},
  };
  return j.dump();
}

PreparedData prepare_data(const RunConfig& cfg, std::uint64_t seed) {
  const DatasetConfig& d = cfg.dataset;
  PreparedData out;
  if (d.kind == DatasetConfig::Kind::kCsv) {
    out.ds = load_csv(d.csv_path, d.schema);
    out.splits = split(out.ds, cfg.split.fractions, seed, cfg.split.stratify);
    return out;
  }
  if (!d.eval_counts) {
    out.ds = generate(d.spec, d.dim_core, d.dim_spurious, seed);
    out.splits = split(out.ds, cfg.split.fractions, seed, cfg.split.stratify);
    return out;
  }
  SubgroupSpec eval_spec = d.spec;
  eval_spec.counts = *d.eval_counts;
  const Dataset train = generate(d.spec, d.dim_core, d.dim_spurious, seed);
  const Dataset held_out = generate(eval_spec, d.dim_core, d.dim_spurious, derive_seed(seed, "eval_block"));
  out.ds = concat(train, held_out);
  out.splits.train = iota_indices(train.size());
  std::vector<std::size_t> rest(held_out.size());
  for (std::size_t i = 0; i < rest.size(); ++i) rest[i] = train.size() + i;
  const SplitSet vt = split_indices(out.ds, rest, {0.0, cfg.split.eval_fractions[0], cfg.split.eval_fractions[1]},
                                    seed, cfg.split.stratify);
  out.splits.val = vt.val;
  out.splits.test = vt.test;
  return out;
}

}  // namespace debias
