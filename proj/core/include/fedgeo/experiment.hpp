#ifndef FEDGEO_EXPERIMENT_HPP
#define FEDGEO_EXPERIMENT_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedgeo/federation.hpp"
#include "fedgeo/geogrid.hpp"
#include "fedgeo/metrics.hpp"
#include "fedgeo/mobility.hpp"

namespace fedgeo {

enum class DataSource { kSynthetic, kPlt, kCache };

std::string_view to_string(DataSource s);

struct DatasetConfig {
  DataSource source = DataSource::kSynthetic;
  GridSpec grid{39.9, 116.3, 100.0, 20, 20};
  std::size_t window = 32;
  double test_frac = 0.1;

  // source = synthetic
  std::size_t synth_clients = 10;
  std::uint64_t synth_seed = 0;
  SynthConfig synth;

  // source = plt
  std::filesystem::path plt_root;
  /// User directory names under plt_root; empty means every subdirectory.
  std::vector<std::string> plt_users;
  ClientIngestOptions ingest;

  // source = cache
  std::filesystem::path cache_dir;
};

struct SweepConfig {
  std::vector<double> fraction;
  std::vector<std::size_t> local_epochs;
  std::vector<double> q;

  bool empty() const { return fraction.empty() && local_epochs.empty() && q.empty(); }
};

struct ExperimentConfig {
  DatasetConfig dataset;
  FederationConfig federation;
  /// Epochs of the centralized baseline; 0 means federation.rounds.
  std::size_t centralized_epochs = 0;
  bool centralized = true;
  SweepConfig sweep;
  std::filesystem::path out = "results";
  std::vector<std::uint64_t> seeds{0};
  /// Independent runs executed concurrently.
  std::size_t threads = 1;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  std::size_t resolved_centralized_epochs() const {
    return centralized_epochs == 0 ? federation.rounds : centralized_epochs;
  }
};

/// Parses the INI experiment format. Unknown sections or keys are errors.
ExperimentConfig parse_experiment_config(std::string_view text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
/// Canonical INI rendering of a config; parses back to the same config.
std::string format_experiment_config(const ExperimentConfig& cfg);

/// Loads or generates the dataset described by the config, unsplit.
FederatedDataset load_dataset(const DatasetConfig& cfg);

// ---------------------------------------------------------------------------
// Experiment cells

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<RoundRecord> records;
  Summary summary;
  ModelWeights final_weights;
};

struct CellRun {
  FederationConfig config;
  std::vector<SeedRun> seeds;
  MeanStd best_acc1;
  MeanStd best_acc5;
};

/// Runs one federation config once per seed; runs are spread over threads.
CellRun run_cell(const FederatedDataset& ds, const FederationConfig& cfg, std::span<const std::uint64_t> seeds,
                 std::size_t threads);

struct AblationRow {
  char label;
  std::string_view name;
  bool gaa;
  bool lwa;
  bool ebs;
};

/// Rows A..H: FedAvg, +GAA, +LWA, +EBS, +GAA+LWA, +GAA+EBS, +LWA+EBS, +GAA+LWA+EBS.
std::span<const AblationRow> ablation_rows();
FederationConfig ablation_config(const FederationConfig& base, const AblationRow& row);

struct CentralizedRun {
  std::uint64_t seed = 0;
  CentralizedResult result;
  SeriesSummary acc1;
  SeriesSummary acc5;
};

struct AblationResult {
  std::vector<CellRun> rows;
  std::vector<CentralizedRun> centralized;
};

/// All eight rows over the seed list, plus the centralized baseline when
/// enabled in the config.
AblationResult run_ablation(const FederatedDataset& ds, const ExperimentConfig& cfg,
                            std::span<const std::uint64_t> seeds);

struct SweepPoint {
  double fraction;
  std::size_t local_epochs;
  double q;
};

/// Cartesian product of the sweep axes; an empty axis holds the base value.
std::vector<SweepPoint> sweep_grid(const ExperimentConfig& cfg);
FederationConfig sweep_config(const FederationConfig& base, const SweepPoint& p);

// ---------------------------------------------------------------------------
// Commands

enum class Command { kSynth, kIngest, kRun, kAblate, kSweep, kReport };

std::string_view to_string(Command c);
Command parse_command(std::string_view s);

struct CommandOptions {
  std::optional<std::filesystem::path> out;
  std::optional<std::vector<std::uint64_t>> seeds;
  bool dry_run = false;
  bool force = false;
};

/// Parses "0,1,2"; throws ConfigError.
std::vector<std::uint64_t> parse_seed_list(std::string_view csv);

/// Executes a command, writing artifacts below the output directory and a
/// human-readable account to log. Throws ConfigError for invalid input or a
/// refused overwrite; other errors propagate.
void run_command(Command cmd, ExperimentConfig cfg, const CommandOptions& opts, std::ostream& log);

}  // namespace fedgeo

#endif  // FEDGEO_EXPERIMENT_HPP
