#include "fedgeo/experiment.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <chrono>
#include <ctime>
#include <exception>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "fedgeo/error.hpp"
#include "fedgeo/io.hpp"

namespace fedgeo {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

constexpr AblationRow kAblationRows[] = {
    {'A', "FedAvg", false, false, false},          {'B', "+GAA", true, false, false},
    {'C', "+LWA", false, true, false},             {'D', "+EBS", false, false, true},
    {'E', "+GAA+LWA", true, true, false},          {'F', "+GAA+EBS", true, false, true},
    {'G', "+LWA+EBS", false, true, true},          {'H', "+GAA+LWA+EBS", true, true, true},
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    out.push_back(trim(s.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double to_double(const std::string& field, const std::string& text) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || p != text.data() + text.size()) {
    throw ConfigError(field + ": expected a number, got '" + text + "'");
  }
  return v;
}

template <typename T>
T to_integer(const std::string& field, const std::string& text) {
  T v{};
  const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || p != text.data() + text.size()) {
    throw ConfigError(field + ": expected a nonnegative integer, got '" + text + "'");
  }
  return v;
}

bool to_bool(const std::string& field, const std::string& text) {
  if (text == "true" || text == "1" || text == "on" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "off" || text == "no") return false;
  throw ConfigError(field + ": expected true or false, got '" + text + "'");
}

// Typed access to one INI section that records which keys were consumed.
class Section {
 public:
  Section(const pt::ptree* tree, std::string name) : tree_(tree), name_(std::move(name)) {}

  bool present() const { return tree_ != nullptr; }

  std::optional<std::string> raw(const std::string& key) {
    used_.insert(key);
    if (tree_ == nullptr) return std::nullopt;
    const auto v = tree_->get_optional<std::string>(pt::ptree::path_type(key, '\0'));
    if (!v) return std::nullopt;
    return trim(*v);
  }

  template <typename T>
  void read(const std::string& key, T& target) {
    const auto v = raw(key);
    if (!v) return;
    const std::string field = name_ + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
      target = to_bool(field, *v);
    } else if constexpr (std::is_floating_point_v<T>) {
      target = to_double(field, *v);
    } else if constexpr (std::is_integral_v<T>) {
      target = to_integer<T>(field, *v);
    } else {
      target = T(*v);
    }
  }

  template <typename T>
  void read_list(const std::string& key, std::vector<T>& target) {
    const auto v = raw(key);
    if (!v) return;
    const std::string field = name_ + "." + key;
    target.clear();
    for (const auto& item : split_list(*v)) {
      if constexpr (std::is_floating_point_v<T>) {
        target.push_back(to_double(field, item));
      } else if constexpr (std::is_integral_v<T>) {
        target.push_back(to_integer<T>(field, item));
      } else {
        target.push_back(item);
      }
    }
  }

  void reject_unknown() const {
    if (tree_ == nullptr) return;
    for (const auto& [key, child] : *tree_) {
      if (!used_.contains(key)) throw ConfigError(name_ + "." + key + ": unknown key");
    }
  }

 private:
  const pt::ptree* tree_;
  std::string name_;
  std::set<std::string> used_;
};

template <typename T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ',';
    if constexpr (std::is_floating_point_v<T>) {
      out += format_double(values[i]);
    } else if constexpr (std::is_integral_v<T>) {
      out += std::to_string(values[i]);
    } else {
      out += values[i];
    }
  }
  return out;
}

// Runs fn(i) for i in [0, n) on up to `threads` workers; rethrows the first
// failure after all workers stop.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        while (true) {
          const std::size_t i = next.fetch_add(1);
          if (i >= n) return;
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(failure_mu);
            if (!failure) failure = std::current_exception();
            next.store(n);
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

std::string timestamp_line() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream s;
  s << "# created " << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << "\n";
  return s.str();
}

std::string seed_file(std::uint64_t seed, std::string_view ext) {
  return "seed_" + std::to_string(seed) + std::string(ext);
}

// Claims an output directory: refuses an existing one unless forced.
void claim_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!force) throw ConfigError("output directory " + dir.string() + " already exists; pass --force to replace it");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

void write_manifest(const fs::path& dir, Command cmd, const ExperimentConfig& cfg) {
  write_file_atomic(dir / "manifest.txt", timestamp_line() + "# command " + std::string(to_string(cmd)) + "\n" +
                                              format_experiment_config(cfg));
}

std::string summary_row(const std::string& label, const SeedRun& r) {
  return label + "," + format_fixed(r.summary.acc1.best) + "," + format_fixed(r.summary.acc5.best) + "," +
         format_fixed(r.summary.acc1.last_std) + "," + format_fixed(r.summary.acc5.last_std);
}

std::string cell_summary_csv(const CellRun& cell) {
  std::string out = "seed,best_acc1,best_acc5,last10_std_acc1,last10_std_acc5\n";
  for (const auto& s : cell.seeds) out += summary_row(std::to_string(s.seed), s) + "\n";
  std::vector<double> l1, l5;
  for (const auto& s : cell.seeds) {
    l1.push_back(s.summary.acc1.last_std);
    l5.push_back(s.summary.acc5.last_std);
  }
  const MeanStd m1 = mean_std(l1), m5 = mean_std(l5);
  out += "mean," + format_fixed(cell.best_acc1.mean) + "," + format_fixed(cell.best_acc5.mean) + "," +
         format_fixed(m1.mean) + "," + format_fixed(m5.mean) + "\n";
  out += "std," + format_fixed(cell.best_acc1.std) + "," + format_fixed(cell.best_acc5.std) + "," +
         format_fixed(m1.std) + "," + format_fixed(m5.std) + "\n";
  return out;
}

std::string pm(const MeanStd& m) { return format_fixed(m.mean) + " ± " + format_fixed(m.std); }

void write_seed_runs(const fs::path& dir, const CellRun& cell, bool checkpoints) {
  fs::create_directories(dir);
  for (const auto& s : cell.seeds) {
    write_round_log(s.records, dir / seed_file(s.seed, ".csv"));
    if (checkpoints) save_checkpoint(s.final_weights, dir / seed_file(s.seed, ".fgck"));
  }
  write_file_atomic(dir / "summary.csv", cell_summary_csv(cell));
}

void prepare_dataset_dir(const FederatedDataset& ds, const fs::path& dir, std::ostream& log) {
  write_dataset_cache(ds, dir);
  std::string clients = "client_id,samples,distinct_locations,entropy\n";
  std::string freq = "client_id,rank,location_id,count\n";
  for (const auto& c : ds.clients) {
    clients += std::to_string(c.client_id) + "," + std::to_string(c.samples.size()) + "," +
               std::to_string(c.location_counts.size()) + "," + format_fixed(location_entropy(c), 6) + "\n";
    std::vector<std::pair<LocationId, std::size_t>> sorted(c.location_counts.begin(), c.location_counts.end());
    std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    for (std::size_t r = 0; r < sorted.size(); ++r) {
      freq += std::to_string(c.client_id) + "," + std::to_string(r + 1) + "," +
              std::to_string(sorted[r].first.index) + "," + std::to_string(sorted[r].second) + "\n";
    }
  }
  const double hi = heterogeneity_index(ds);
  write_file_atomic(dir / "clients.csv", clients);
  write_file_atomic(dir / "location_frequency.csv", freq);
  write_file_atomic(dir / "heterogeneity.txt", "heterogeneity_index " + format_fixed(hi, 6) + "\n");
  log << "clients: " << ds.clients.size() << ", HI = " << format_fixed(hi, 6) << "\n";
}

FederatedDataset split_dataset(const ExperimentConfig& cfg) {
  return split_train_test(load_dataset(cfg.dataset), cfg.dataset.test_frac);
}

void print_plan(Command cmd, const ExperimentConfig& cfg, const fs::path& dir, std::ostream& log) {
  log << "command: " << to_string(cmd) << "\n";
  log << "output: " << dir.string() << "\n";
  log << "seeds: " << join(cfg.seeds) << "\n";
  if (cmd == Command::kAblate) {
    log << "cells: " << std::size(kAblationRows) << " rows x " << cfg.seeds.size() << " seeds"
        << (cfg.centralized ? " + centralized" : "") << "\n";
  } else if (cmd == Command::kSweep) {
    log << "cells: " << sweep_grid(cfg).size() << " x " << cfg.seeds.size() << " seeds\n";
  }
  log << "--- resolved config ---\n" << format_experiment_config(cfg);
}

void cmd_dataset(Command cmd, const ExperimentConfig& cfg, const fs::path& dir, bool force, std::ostream& log) {
  if (cmd == Command::kSynth && cfg.dataset.source != DataSource::kSynthetic) {
    throw ConfigError("dataset.source must be synthetic for the synth command");
  }
  if (cmd == Command::kIngest && cfg.dataset.source != DataSource::kPlt) {
    throw ConfigError("dataset.source must be plt for the ingest command");
  }
  const FederatedDataset ds = load_dataset(cfg.dataset);
  claim_dir(dir, force);
  prepare_dataset_dir(ds, dir, log);
  write_manifest(dir, cmd, cfg);
}

void cmd_run(const ExperimentConfig& cfg, const fs::path& dir, bool force, std::ostream& log) {
  const FederatedDataset ds = split_dataset(cfg);
  claim_dir(dir, force);
  const CellRun cell = run_cell(ds, cfg.federation, cfg.seeds, cfg.threads);
  write_seed_runs(dir, cell, true);
  write_file_atomic(dir / "summary.txt", "best acc@1 " + pm(cell.best_acc1) + "\nbest acc@5 " + pm(cell.best_acc5) + "\n");
  write_manifest(dir, Command::kRun, cfg);
  log << "best acc@1 " << pm(cell.best_acc1) << ", best acc@5 " << pm(cell.best_acc5) << "\n";
}

void cmd_ablate(const ExperimentConfig& cfg, const fs::path& dir, bool force, std::ostream& log) {
  const FederatedDataset ds = split_dataset(cfg);
  claim_dir(dir, force);
  const AblationResult res = run_ablation(ds, cfg, cfg.seeds);
  Table table;
  table.header = {"row", "variant", "gaa", "lwa", "ebs", "acc1_mean", "acc1_std", "acc5_mean", "acc5_std"};
  std::string per_seed = "row,seed,best_acc1,best_acc5,last10_std_acc1,last10_std_acc5\n";
  for (std::size_t i = 0; i < res.rows.size(); ++i) {
    const AblationRow& row = kAblationRows[i];
    const CellRun& cell = res.rows[i];
    write_seed_runs(dir / std::string(1, row.label), cell, false);
    table.rows.push_back({std::string(1, row.label), std::string(row.name), row.gaa ? "1" : "0", row.lwa ? "1" : "0",
                          row.ebs ? "1" : "0", format_fixed(cell.best_acc1.mean), format_fixed(cell.best_acc1.std),
                          format_fixed(cell.best_acc5.mean), format_fixed(cell.best_acc5.std)});
    for (const auto& s : cell.seeds) per_seed += summary_row(std::string(1, row.label) + "," + std::to_string(s.seed), s) + "\n";
  }
  if (!res.centralized.empty()) {
    fs::create_directories(dir / "centralized");
    std::vector<double> b1, b5;
    for (const auto& c : res.centralized) {
      std::string log_csv = "epoch,acc1,acc5,loss\n";
      for (std::size_t e = 0; e < c.result.acc1.size(); ++e) {
        log_csv += std::to_string(e + 1) + "," + format_double(c.result.acc1[e]) + "," +
                   format_double(c.result.acc5[e]) + "," + format_double(c.result.loss[e]) + "\n";
      }
      write_file_atomic(dir / "centralized" / seed_file(c.seed, ".csv"), log_csv);
      b1.push_back(c.acc1.best);
      b5.push_back(c.acc5.best);
      per_seed += "central," + std::to_string(c.seed) + "," + format_fixed(c.acc1.best) + "," +
                  format_fixed(c.acc5.best) + "," + format_fixed(c.acc1.last_std) + "," +
                  format_fixed(c.acc5.last_std) + "\n";
    }
    const MeanStd m1 = mean_std(b1), m5 = mean_std(b5);
    table.rows.push_back({"central", "Centralized", "-", "-", "-", format_fixed(m1.mean), format_fixed(m1.std),
                          format_fixed(m5.mean), format_fixed(m5.std)});
  }
  write_file_atomic(dir / "table.csv", table.to_csv());
  write_file_atomic(dir / "table.txt", table.to_text());
  write_file_atomic(dir / "per_seed.csv", per_seed);
  write_manifest(dir, Command::kAblate, cfg);
  log << table.to_text();
}

void cmd_sweep(const ExperimentConfig& cfg, const fs::path& dir, bool force, std::ostream& log) {
  if (cfg.sweep.empty()) throw ConfigError("sweep: at least one of fraction, local_epochs, q must be listed");
  const FederatedDataset ds = split_dataset(cfg);
  claim_dir(dir, force);
  const auto grid = sweep_grid(cfg);
  Table table;
  table.header = {"cell", "fraction", "local_epochs", "q", "acc1_mean", "acc1_std", "acc5_mean", "acc5_std"};
  std::size_t best = 0;
  std::vector<CellRun> cells;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    cells.push_back(run_cell(ds, sweep_config(cfg.federation, grid[i]), cfg.seeds, cfg.threads));
    write_seed_runs(dir / ("cell_" + std::to_string(i)), cells.back(), false);
    table.rows.push_back({std::to_string(i), format_double(grid[i].fraction), std::to_string(grid[i].local_epochs),
                          format_double(grid[i].q), format_fixed(cells[i].best_acc1.mean),
                          format_fixed(cells[i].best_acc1.std), format_fixed(cells[i].best_acc5.mean),
                          format_fixed(cells[i].best_acc5.std)});
    if (cells[i].best_acc1.mean > cells[best].best_acc1.mean) best = i;
  }
  write_file_atomic(dir / "summary.csv", table.to_csv());
  write_file_atomic(dir / "summary.txt", table.to_text() + "best cell " + std::to_string(best) + "\n");
  write_manifest(dir, Command::kSweep, cfg);
  log << table.to_text() << "best cell " << best << "\n";
}

void cmd_report(const fs::path& root, std::ostream& log) {
  if (!fs::is_directory(root)) throw ConfigError("output directory " + root.string() + " does not exist");
  bool any = false;
  const std::pair<const char*, const char*> parts[] = {{"dataset", "heterogeneity.txt"},
                                                       {"run", "summary.txt"},
                                                       {"ablate", "table.txt"},
                                                       {"sweep", "summary.txt"}};
  for (const auto& [sub, file] : parts) {
    const fs::path p = root / sub / file;
    if (!fs::exists(p)) continue;
    any = true;
    log << "== " << sub << " ==\n" << read_file(p) << "\n";
  }
  if (!any) throw ConfigError("no results found under " + root.string());
}

}  // namespace

std::string_view to_string(DataSource s) {
  switch (s) {
    case DataSource::kSynthetic:
      return "synthetic";
    case DataSource::kPlt:
      return "plt";
    case DataSource::kCache:
      return "cache";
  }
  return "?";
}

void ExperimentConfig::validate() const {
  dataset.grid.validate();
  if (dataset.window < 1) throw ConfigError("dataset.window must be >= 1");
  if (!(dataset.test_frac > 0.0 && dataset.test_frac < 1.0)) throw ConfigError("dataset.test_frac must be in (0, 1)");
  switch (dataset.source) {
    case DataSource::kSynthetic:
      if (dataset.synth_clients < 1) throw ConfigError("synthetic.clients must be >= 1");
      dataset.synth.validate();
      break;
    case DataSource::kPlt:
      if (dataset.plt_root.empty()) throw ConfigError("ingest.root must be set when dataset.source = plt");
      if (dataset.ingest.resample_interval_s < 1) throw ConfigError("dataset.resample_s must be >= 1");
      if (dataset.ingest.ingest.split_gap_s < 1) throw ConfigError("ingest.split_gap_s must be >= 1");
      break;
    case DataSource::kCache:
      if (dataset.cache_dir.empty()) throw ConfigError("dataset.cache must be set when dataset.source = cache");
      break;
  }
  federation.validate();
  if (seeds.empty()) throw ConfigError("experiment.seeds must list at least one seed");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("experiment.seeds has duplicates");
  }
  if (threads < 1) throw ConfigError("experiment.threads must be >= 1");
  if (out.empty()) throw ConfigError("experiment.out must be set");
  for (const SweepPoint& p : sweep_grid(*this)) {
    try {
      sweep_config(federation, p).validate();
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("sweep: ") + e.what());
    }
  }
}

ExperimentConfig parse_experiment_config(std::string_view text) {
  pt::ptree tree;
  try {
    std::istringstream in{std::string(text)};
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config: line " + std::to_string(e.line()) + ": " + e.message());
  }
  static const std::set<std::string> kSections = {"dataset", "grid", "synthetic", "ingest", "federation",
                                                  "model", "centralized", "sweep", "experiment"};
  for (const auto& [name, child] : tree) {
    if (!kSections.contains(name)) throw ConfigError(name + ": unknown section");
    if (child.empty() && !child.data().empty()) throw ConfigError(name + ": key outside a section");
  }
  auto section = [&](const std::string& name) {
    const auto it = tree.find(name);
    return Section(it == tree.not_found() ? nullptr : &it->second, name);
  };

  ExperimentConfig cfg;
  DatasetConfig& d = cfg.dataset;

  Section dataset = section("dataset");
  if (const auto src = dataset.raw("source")) {
    if (*src == "synthetic") {
      d.source = DataSource::kSynthetic;
    } else if (*src == "plt") {
      d.source = DataSource::kPlt;
    } else if (*src == "cache") {
      d.source = DataSource::kCache;
    } else {
      throw ConfigError("dataset.source must be synthetic, plt or cache, got '" + *src + "'");
    }
  }
  dataset.read("window", d.window);
  dataset.read("test_frac", d.test_frac);
  dataset.read("resample_s", d.ingest.resample_interval_s);
  std::string cache;
  dataset.read("cache", cache);
  d.cache_dir = cache;
  dataset.reject_unknown();
  if ((d.source == DataSource::kCache) != !cache.empty()) {
    throw ConfigError("dataset.cache must be given exactly when dataset.source = cache");
  }

  Section grid = section("grid");
  grid.read("origin_lat", d.grid.origin_lat);
  grid.read("origin_lon", d.grid.origin_lon);
  grid.read("cell_size_m", d.grid.cell_size_m);
  grid.read("rows", d.grid.n_rows);
  grid.read("cols", d.grid.n_cols);
  grid.reject_unknown();

  Section synth = section("synthetic");
  if (synth.present() && d.source != DataSource::kSynthetic) {
    throw ConfigError("synthetic: section given but dataset.source = " + std::string(to_string(d.source)));
  }
  synth.read("clients", d.synth_clients);
  synth.read("seed", d.synth_seed);
  synth.read("home_size_min", d.synth.home_size_min);
  synth.read("home_size_max", d.synth.home_size_max);
  synth.read("downtown_size", d.synth.downtown_size);
  synth.read("stay_prob", d.synth.stay_prob);
  synth.read("commute_prob", d.synth.commute_prob);
  synth.read("trajectories_min", d.synth.trajectories_min);
  synth.read("trajectories_max", d.synth.trajectories_max);
  synth.read("trajectory_length", d.synth.trajectory_length);
  synth.read("step_s", d.synth.step_s);
  synth.reject_unknown();

  Section ingest = section("ingest");
  if (ingest.present() && d.source != DataSource::kPlt) {
    throw ConfigError("ingest: section given but dataset.source = " + std::string(to_string(d.source)));
  }
  std::string root;
  ingest.read("root", root);
  d.plt_root = root;
  ingest.read_list("users", d.plt_users);
  ingest.read("min_records", d.ingest.min_records);
  ingest.read("split_gap_s", d.ingest.ingest.split_gap_s);
  ingest.reject_unknown();
  d.synth.window = d.window;
  d.ingest.window = d.window;

  FederationConfig& f = cfg.federation;
  Section fed = section("federation");
  fed.read("rounds", f.rounds);
  fed.read("fraction", f.fraction);
  if (const auto s = fed.raw("sampler")) f.sampler = parse_sampler(*s);
  if (const auto a = fed.raw("aggregator")) f.aggregator = parse_aggregator(*a);
  fed.read("gaa", f.gaa);
  fed.read_list("lwa_layers", f.lwa_layers);
  fed.read("q", f.q);
  fed.read("d", f.d_m);
  if (const auto mu = fed.raw("prox_mu")) {
    if (*mu == "none" || mu->empty()) {
      f.prox_mu.reset();
    } else {
      f.prox_mu = to_double("federation.prox_mu", *mu);
    }
  }
  fed.read("threads", f.threads);
  fed.reject_unknown();

  Section model = section("model");
  model.read("embed_dim", f.hp.embed_dim);
  model.read("hidden_dim", f.hp.hidden_dim);
  model.read("learning_rate", f.hp.learning_rate);
  model.read("momentum", f.hp.momentum);
  model.read("weight_decay", f.hp.weight_decay);
  model.read("batch_size", f.hp.batch_size);
  model.read("local_epochs", f.hp.local_epochs);
  model.reject_unknown();

  Section central = section("centralized");
  central.read("enabled", cfg.centralized);
  central.read("epochs", cfg.centralized_epochs);
  central.reject_unknown();

  Section sweep = section("sweep");
  sweep.read_list("fraction", cfg.sweep.fraction);
  sweep.read_list("local_epochs", cfg.sweep.local_epochs);
  sweep.read_list("q", cfg.sweep.q);
  sweep.reject_unknown();

  Section exp = section("experiment");
  exp.read_list("seeds", cfg.seeds);
  std::string out;
  exp.read("out", out);
  if (!out.empty()) cfg.out = out;
  exp.read("threads", cfg.threads);
  exp.reject_unknown();

  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const IoError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  ExperimentConfig cfg = parse_experiment_config(text);
  // Input paths are relative to the config file; the output root is not.
  const fs::path base = path.parent_path();
  if (!cfg.dataset.plt_root.empty() && cfg.dataset.plt_root.is_relative()) {
    cfg.dataset.plt_root = base / cfg.dataset.plt_root;
  }
  if (!cfg.dataset.cache_dir.empty() && cfg.dataset.cache_dir.is_relative()) {
    cfg.dataset.cache_dir = base / cfg.dataset.cache_dir;
  }
  return cfg;
}

std::string format_experiment_config(const ExperimentConfig& cfg) {
  const DatasetConfig& d = cfg.dataset;
  const FederationConfig& f = cfg.federation;
  std::ostringstream s;
  s << "[dataset]\nsource = " << to_string(d.source) << "\nwindow = " << d.window
    << "\ntest_frac = " << format_double(d.test_frac) << "\n";
  if (d.source == DataSource::kPlt) s << "resample_s = " << d.ingest.resample_interval_s << "\n";
  if (d.source == DataSource::kCache) s << "cache = " << d.cache_dir.string() << "\n";
  s << "\n[grid]\norigin_lat = " << format_double(d.grid.origin_lat)
    << "\norigin_lon = " << format_double(d.grid.origin_lon)
    << "\ncell_size_m = " << format_double(d.grid.cell_size_m) << "\nrows = " << d.grid.n_rows
    << "\ncols = " << d.grid.n_cols << "\n";
  if (d.source == DataSource::kSynthetic) {
    s << "\n[synthetic]\nclients = " << d.synth_clients << "\nseed = " << d.synth_seed
      << "\nhome_size_min = " << d.synth.home_size_min << "\nhome_size_max = " << d.synth.home_size_max
      << "\ndowntown_size = " << d.synth.downtown_size << "\nstay_prob = " << format_double(d.synth.stay_prob)
      << "\ncommute_prob = " << format_double(d.synth.commute_prob)
      << "\ntrajectories_min = " << d.synth.trajectories_min << "\ntrajectories_max = " << d.synth.trajectories_max
      << "\ntrajectory_length = " << d.synth.trajectory_length << "\nstep_s = " << d.synth.step_s << "\n";
  }
  if (d.source == DataSource::kPlt) {
    s << "\n[ingest]\nroot = " << d.plt_root.string() << "\nusers = " << join(d.plt_users)
      << "\nmin_records = " << d.ingest.min_records << "\nsplit_gap_s = " << d.ingest.ingest.split_gap_s << "\n";
  }
  s << "\n[federation]\nrounds = " << f.rounds << "\nfraction = " << format_double(f.fraction)
    << "\nsampler = " << to_string(f.sampler) << "\naggregator = " << to_string(f.aggregator)
    << "\ngaa = " << (f.gaa ? "true" : "false") << "\nlwa_layers = " << join(f.lwa_layers)
    << "\nq = " << format_double(f.q) << "\nd = " << format_double(f.d_m)
    << "\nprox_mu = " << (f.prox_mu ? format_double(*f.prox_mu) : "none") << "\nthreads = " << f.threads << "\n";
  s << "\n[model]\nembed_dim = " << f.hp.embed_dim << "\nhidden_dim = " << f.hp.hidden_dim
    << "\nlearning_rate = " << format_double(f.hp.learning_rate) << "\nmomentum = " << format_double(f.hp.momentum)
    << "\nweight_decay = " << format_double(f.hp.weight_decay) << "\nbatch_size = " << f.hp.batch_size
    << "\nlocal_epochs = " << f.hp.local_epochs << "\n";
  s << "\n[centralized]\nenabled = " << (cfg.centralized ? "true" : "false")
    << "\nepochs = " << cfg.centralized_epochs << "\n";
  if (!cfg.sweep.empty()) {
    s << "\n[sweep]\n";
    if (!cfg.sweep.fraction.empty()) s << "fraction = " << join(cfg.sweep.fraction) << "\n";
    if (!cfg.sweep.local_epochs.empty()) s << "local_epochs = " << join(cfg.sweep.local_epochs) << "\n";
    if (!cfg.sweep.q.empty()) s << "q = " << join(cfg.sweep.q) << "\n";
  }
  s << "\n[experiment]\nseeds = " << join(cfg.seeds) << "\nout = " << cfg.out.string()
    << "\nthreads = " << cfg.threads << "\n";
  return s.str();
}

FederatedDataset load_dataset(const DatasetConfig& cfg) {
  switch (cfg.source) {
    case DataSource::kSynthetic: {
      SynthConfig sc = cfg.synth;
      sc.window = cfg.window;
      return synth_generate(cfg.grid, cfg.synth_clients, sc, cfg.synth_seed);
    }
    case DataSource::kCache: {
      FederatedDataset ds = read_dataset_cache(cfg.cache_dir);
      if (ds.window != cfg.window) throw ConfigError("dataset.window does not match the cached dataset");
      if (!(ds.grid == cfg.grid)) throw ConfigError("grid does not match the cached dataset");
      return ds;
    }
    case DataSource::kPlt: {
      std::vector<std::string> users = cfg.plt_users;
      if (users.empty()) {
        if (!fs::is_directory(cfg.plt_root)) throw ConfigError("ingest.root is not a directory: " + cfg.plt_root.string());
        for (const auto& e : fs::directory_iterator(cfg.plt_root)) {
          if (e.is_directory()) users.push_back(e.path().filename().string());
        }
        std::ranges::sort(users);
      }
      ClientIngestOptions opts = cfg.ingest;
      opts.window = cfg.window;
      FederatedDataset ds;
      ds.grid = cfg.grid;
      ds.window = cfg.window;
      for (const auto& user : users) {
        const fs::path dir = cfg.plt_root / user;
        if (!fs::is_directory(dir)) throw ConfigError("ingest.users: no directory " + dir.string());
        const auto files = list_plt_files(dir);
        ClientDataset c = ingest_client(static_cast<int>(ds.clients.size()), files, cfg.grid, opts);
        if (c.samples.size() < 2) {
          std::clog << "warning: user " << user << " yields " << c.samples.size() << " samples; skipped\n";
          continue;
        }
        ds.clients.push_back(std::move(c));
      }
      if (ds.clients.empty()) throw EmptyDataset("no user produced any samples under " + cfg.plt_root.string());
      return ds;
    }
  }
  throw ConfigError("dataset.source is invalid");
}

CellRun run_cell(const FederatedDataset& ds, const FederationConfig& cfg, std::span<const std::uint64_t> seeds,
                 std::size_t threads) {
  CellRun cell;
  cell.config = cfg;
  cell.seeds.resize(seeds.size());
  std::optional<SpatialWeightMatrix> s;
  if (cfg.gaa) s = row_normalize(build_spatial_weights(ds.grid, cfg.d_m, cfg.q));
  parallel_for(seeds.size(), threads, [&](std::size_t i) {
    FederationConfig run_cfg = cfg;
    run_cfg.seed = seeds[i];
    run_cfg.hp.seed = seeds[i];
    FederationResult res = run_federation(ds, run_cfg, s ? &*s : nullptr);
    SeedRun& out = cell.seeds[i];
    out.seed = seeds[i];
    out.summary = summarize(res.records);
    out.records = std::move(res.records);
    out.final_weights = std::move(res.final_weights);
  });
  std::vector<double> b1, b5;
  for (const auto& r : cell.seeds) {
    b1.push_back(r.summary.acc1.best);
    b5.push_back(r.summary.acc5.best);
  }
  cell.best_acc1 = mean_std(b1);
  cell.best_acc5 = mean_std(b5);
  return cell;
}

std::span<const AblationRow> ablation_rows() { return kAblationRows; }

FederationConfig ablation_config(const FederationConfig& base, const AblationRow& row) {
  FederationConfig cfg = base;
  cfg.gaa = row.gaa;
  cfg.aggregator = row.lwa ? Aggregator::kLayerWise : Aggregator::kFedAvg;
  cfg.sampler = row.ebs ? Sampler::kEntropy : Sampler::kUniform;
  return cfg;
}

AblationResult run_ablation(const FederatedDataset& ds, const ExperimentConfig& cfg,
                            std::span<const std::uint64_t> seeds) {
  const std::size_t n_rows = std::size(kAblationRows);
  const std::size_t n_seeds = seeds.size();
  const SpatialWeightMatrix s = row_normalize(build_spatial_weights(ds.grid, cfg.federation.d_m, cfg.federation.q));

  AblationResult res;
  res.rows.resize(n_rows);
  for (std::size_t r = 0; r < n_rows; ++r) {
    res.rows[r].config = ablation_config(cfg.federation, kAblationRows[r]);
    res.rows[r].seeds.resize(n_seeds);
  }
  if (cfg.centralized) res.centralized.resize(n_seeds);
  const std::size_t n_central = cfg.centralized ? n_seeds : 0;

  // Centralized jobs first: they are the longest single tasks.
  parallel_for(n_central + n_rows * n_seeds, cfg.threads, [&](std::size_t job) {
    if (job < n_central) {
      HyperParams hp = cfg.federation.hp;
      hp.seed = seeds[job];
      CentralizedRun& c = res.centralized[job];
      c.seed = seeds[job];
      c.result = train_centralized(ds, hp, cfg.resolved_centralized_epochs(), seeds[job]);
      c.acc1 = summarize_series(c.result.acc1);
      c.acc5 = summarize_series(c.result.acc5);
      return;
    }
    job -= n_central;
    const std::size_t r = job / n_seeds, k = job % n_seeds;
    FederationConfig run_cfg = res.rows[r].config;
    run_cfg.seed = seeds[k];
    run_cfg.hp.seed = seeds[k];
    FederationResult fr = run_federation(ds, run_cfg, &s);
    SeedRun& out = res.rows[r].seeds[k];
    out.seed = seeds[k];
    out.summary = summarize(fr.records);
    out.records = std::move(fr.records);
    out.final_weights = std::move(fr.final_weights);
  });
  for (auto& cell : res.rows) {
    std::vector<double> b1, b5;
    for (const auto& r : cell.seeds) {
      b1.push_back(r.summary.acc1.best);
      b5.push_back(r.summary.acc5.best);
    }
    cell.best_acc1 = mean_std(b1);
    cell.best_acc5 = mean_std(b5);
  }
  return res;
}

std::vector<SweepPoint> sweep_grid(const ExperimentConfig& cfg) {
  const auto& f = cfg.federation;
  const std::vector<double> fr = cfg.sweep.fraction.empty() ? std::vector<double>{f.fraction} : cfg.sweep.fraction;
  const std::vector<std::size_t> le =
      cfg.sweep.local_epochs.empty() ? std::vector<std::size_t>{f.hp.local_epochs} : cfg.sweep.local_epochs;
  const std::vector<double> q = cfg.sweep.q.empty() ? std::vector<double>{f.q} : cfg.sweep.q;
  std::vector<SweepPoint> out;
  for (double a : fr) {
    for (std::size_t b : le) {
      for (double c : q) out.push_back({a, b, c});
    }
  }
  return out;
}

FederationConfig sweep_config(const FederationConfig& base, const SweepPoint& p) {
  FederationConfig cfg = base;
  cfg.fraction = p.fraction;
  cfg.hp.local_epochs = p.local_epochs;
  cfg.q = p.q;
  return cfg;
}

std::string_view to_string(Command c) {
  switch (c) {
    case Command::kSynth:
      return "synth";
    case Command::kIngest:
      return "ingest";
    case Command::kRun:
      return "run";
    case Command::kAblate:
      return "ablate";
    case Command::kSweep:
      return "sweep";
    case Command::kReport:
      return "report";
  }
  return "?";
}

Command parse_command(std::string_view s) {
  for (Command c : {Command::kSynth, Command::kIngest, Command::kRun, Command::kAblate, Command::kSweep,
                    Command::kReport}) {
    if (to_string(c) == s) return c;
  }
  throw ConfigError("unknown command '" + std::string(s) + "'");
}

std::vector<std::uint64_t> parse_seed_list(std::string_view csv) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(csv)) out.push_back(to_integer<std::uint64_t>("--seeds", item));
  if (out.empty()) throw ConfigError("--seeds: empty list");
  return out;
}

void run_command(Command cmd, ExperimentConfig cfg, const CommandOptions& opts, std::ostream& log) {
  if (opts.out) cfg.out = *opts.out;
  if (opts.seeds) cfg.seeds = *opts.seeds;
  cfg.validate();
  if (cmd == Command::kReport) {
    cmd_report(cfg.out, log);
    return;
  }
  const fs::path dir = cfg.out / ((cmd == Command::kSynth || cmd == Command::kIngest) ? "dataset" : std::string(to_string(cmd)));
  if (cmd == Command::kSweep && cfg.sweep.empty()) {
    throw ConfigError("sweep: at least one of fraction, local_epochs, q must be listed");
  }
  if (opts.dry_run) {
    print_plan(cmd, cfg, dir, log);
    return;
  }
  if (fs::exists(dir) && !opts.force) {
    throw ConfigError("output directory " + dir.string() + " already exists; pass --force to replace it");
  }
  switch (cmd) {
    case Command::kSynth:
    case Command::kIngest:
      cmd_dataset(cmd, cfg, dir, opts.force, log);
      break;
    case Command::kRun:
      cmd_run(cfg, dir, opts.force, log);
      break;
    case Command::kAblate:
      cmd_ablate(cfg, dir, opts.force, log);
      break;
    case Command::kSweep:
      cmd_sweep(cfg, dir, opts.force, log);
      break;
    case Command::kReport:
      break;
  }
}

}  // namespace fedgeo
