#ifndef FEDGEO_MOBILITY_HPP
#define FEDGEO_MOBILITY_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "fedgeo/geogrid.hpp"

namespace fedgeo {

struct TrajectoryPoint {
  std::int64_t timestamp = 0;  // seconds since the Unix epoch
  LocationId loc;

  friend bool operator==(const TrajectoryPoint&, const TrajectoryPoint&) = default;
};

/// Time-ordered visits of one user. Timestamps are strictly increasing.
struct Trajectory {
  std::vector<TrajectoryPoint> points;

  std::size_t size() const noexcept { return points.size(); }
  bool valid() const;

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

/// One training example: T consecutive locations and the location after them.
struct Sample {
  std::vector<LocationId> window;
  LocationId target;

  friend bool operator==(const Sample&, const Sample&) = default;
};

using LocationCounts = std::map<LocationId, std::uint64_t>;

struct ClientDataset {
  int client_id = 0;
  /// All samples in time order.
  std::vector<Sample> samples;
  /// Visit counts over every point of the client's source trajectories.
  LocationCounts location_counts;
  /// Number of leading samples used for training; unset before splitting.
  std::optional<std::size_t> train_size;

  std::span<const Sample> train() const;
  std::span<const Sample> test() const;
};

struct FederatedDataset {
  GridSpec grid;
  std::size_t window = 0;
  std::vector<ClientDataset> clients;

  bool is_split() const;
  /// Union of every client's test split, in client order.
  std::vector<Sample> global_test() const;
  /// Union of every client's train split, in client order.
  std::vector<Sample> global_train() const;
};

// ---------------------------------------------------------------------------
// Trajectory preparation

struct IngestOptions {
  /// Silence longer than this starts a new trajectory.
  std::int64_t split_gap_s = 30 * 60;
};

/// Reads a GeoLife .plt file: six header lines, then
/// "lat,lon,0,alt,days,date,time" records. Points outside the grid are dropped.
/// Throws EmptyFile when the header is incomplete, ParseError on a bad record.
std::vector<Trajectory> ingest_plt(const std::filesystem::path& path, const GridSpec& spec,
                                   const IngestOptions& opts = {});

/// One point per tick t0, t0+interval, ... <= t_last: the latest record at or
/// before the tick, stamped with the tick.
Trajectory resample_fixed_interval(const Trajectory& t, std::int64_t interval_s);

/// Stride-1 sliding windows of length T, each paired with the next location.
std::vector<Sample> windowize(const Trajectory& t, std::size_t T);

/// Windowizes every trajectory in order and tallies all visited points.
ClientDataset build_client_dataset(int client_id, std::span<const Trajectory> trajectories,
                                   std::size_t T);

/// Sorted .plt files of a GeoLife user directory (recurses into Trajectory/).
std::vector<std::filesystem::path> list_plt_files(const std::filesystem::path& user_dir);

struct ClientIngestOptions {
  IngestOptions ingest;
  std::int64_t resample_interval_s = 60;
  /// Trajectories need strictly more records than this after resampling.
  std::size_t min_records = 10;
  std::size_t window = 32;
};

/// Full ingestion pipeline for one user: parse, resample, length-filter,
/// windowize.
ClientDataset ingest_client(int client_id, std::span<const std::filesystem::path> plt_files,
                            const GridSpec& spec, const ClientIngestOptions& opts);

// ---------------------------------------------------------------------------
// Synthetic heterogeneous clients

/// Lazy random walk over a per-client home block plus an optional shared
/// downtown block.
struct SynthConfig {
  std::size_t window = 32;
  /// Home blocks are squares whose side is drawn per client from this range.
  std::size_t home_size_min = 4;
  std::size_t home_size_max = 4;
  /// Side of the centered downtown block; 0 disables it.
  std::size_t downtown_size = 3;
  double stay_prob = 0.5;
  /// Probability of jumping between home and downtown on a step.
  double commute_prob = 0.05;
  std::size_t trajectories_min = 4;
  std::size_t trajectories_max = 4;
  std::size_t trajectory_length = 64;
  std::int64_t step_s = 60;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

FederatedDataset synth_generate(const GridSpec& spec, std::size_t n_clients,
                                const SynthConfig& cfg, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Statistics

/// Shannon entropy (natural log) of the visit distribution. Zero for an empty
/// or single-location tally.
double location_entropy(const LocationCounts& counts);
double location_entropy(const ClientDataset& c);

/// Tally of training-split targets. Every target is a distinct trajectory
/// position, so the tally contains no test data.
LocationCounts train_location_counts(const ClientDataset& c);

/// 1 - (c - 1) / (C_max - 1), c = max distinct locations of a client,
/// C_max = distinct locations across the dataset. Throws DegenerateDataset
/// when C_max < 2.
double heterogeneity_index(const FederatedDataset& ds);

/// Moves the last ceil(test_frac * n_k) samples of each client to its test
/// split. Throws ClientTooSmall when a client would keep no training samples.
FederatedDataset split_train_test(FederatedDataset ds, double test_frac);

// ---------------------------------------------------------------------------
// Dataset cache: dataset.ini, samples.csv, locations.csv in one directory.

void write_dataset_cache(const FederatedDataset& ds, const std::filesystem::path& dir);
/// Loads an unsplit dataset written by write_dataset_cache.
FederatedDataset read_dataset_cache(const std::filesystem::path& dir);

}  // namespace fedgeo

#endif  // FEDGEO_MOBILITY_HPP
