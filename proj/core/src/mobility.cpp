#include "fedgeo/mobility.hpp"

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>

#include "fedgeo/error.hpp"
#include "fedgeo/io.hpp"
#include "fedgeo/rng.hpp"

namespace fedgeo {

namespace {

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  s = trim(s);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

// "YYYY-MM-DD" and "HH:MM:SS" to seconds since the Unix epoch (UTC).
bool parse_timestamp(std::string_view date, std::string_view time, std::int64_t& out) {
  const auto d = split(trim(date), '-');
  const auto t = split(trim(time), ':');
  if (d.size() != 3 || t.size() != 3) return false;
  int y = 0;
  unsigned mo = 0, dd = 0;
  int hh = 0, mm = 0, ss = 0;
  if (!parse_number(d[0], y) || !parse_number(d[1], mo) || !parse_number(d[2], dd) ||
      !parse_number(t[0], hh) || !parse_number(t[1], mm) || !parse_number(t[2], ss)) {
    return false;
  }
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{mo},
                                        std::chrono::day{dd}};
  if (!ymd.ok() || hh < 0 || hh > 23 || mm < 0 || mm > 59 || ss < 0 || ss > 60) return false;
  const auto days = std::chrono::sys_days{ymd}.time_since_epoch().count();
  out = static_cast<std::int64_t>(days) * 86400 + hh * 3600 + mm * 60 + ss;
  return true;
}

struct Block {
  std::size_t row0 = 0;
  std::size_t col0 = 0;
  std::size_t size = 0;

  bool contains(CellCoord c) const {
    return c.row >= row0 && c.row < row0 + size && c.col >= col0 && c.col < col0 + size;
  }
  bool overlaps(const Block& o) const {
    return row0 < o.row0 + o.size && o.row0 < row0 + size && col0 < o.col0 + o.size &&
           o.col0 < col0 + size;
  }
  CellCoord random_cell(Rng& rng) const {
    return {row0 + static_cast<std::size_t>(rng.below(size)),
            col0 + static_cast<std::size_t>(rng.below(size))};
  }
};

CellCoord step_within(const Block& b, CellCoord at, Rng& rng) {
  CellCoord options[8];
  std::size_t n = 0;
  for (int dr = -1; dr <= 1; ++dr) {
    for (int dc = -1; dc <= 1; ++dc) {
      if (dr == 0 && dc == 0) continue;
      const auto r = static_cast<std::ptrdiff_t>(at.row) + dr;
      const auto c = static_cast<std::ptrdiff_t>(at.col) + dc;
      if (r < 0 || c < 0) continue;
      const CellCoord cand{static_cast<std::size_t>(r), static_cast<std::size_t>(c)};
      if (b.contains(cand)) options[n++] = cand;
    }
  }
  if (n == 0) return at;
  return options[rng.below(n)];
}

std::size_t draw_in_range(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

}  // namespace

bool Trajectory::valid() const {
  if (points.empty()) return false;
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (points[i].timestamp <= points[i - 1].timestamp) return false;
  }
  return true;
}

std::span<const Sample> ClientDataset::train() const {
  const std::size_t n = train_size.value_or(samples.size());
  return {samples.data(), n};
}

std::span<const Sample> ClientDataset::test() const {
  const std::size_t n = train_size.value_or(samples.size());
  return {samples.data() + n, samples.size() - n};
}

bool FederatedDataset::is_split() const {
  return !clients.empty() &&
         std::all_of(clients.begin(), clients.end(), [](const auto& c) { return c.train_size.has_value(); });
}

std::vector<Sample> FederatedDataset::global_test() const {
  std::vector<Sample> out;
  for (const auto& c : clients) out.insert(out.end(), c.test().begin(), c.test().end());
  return out;
}

std::vector<Sample> FederatedDataset::global_train() const {
  std::vector<Sample> out;
  for (const auto& c : clients) out.insert(out.end(), c.train().begin(), c.train().end());
  return out;
}

std::vector<Trajectory> ingest_plt(const std::filesystem::path& path, const GridSpec& spec,
                                   const IngestOptions& opts) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());

  std::string line;
  std::size_t line_no = 0;
  for (int i = 0; i < 6; ++i) {
    if (!std::getline(in, line)) throw EmptyFile(path.string() + ": missing PLT header");
    ++line_no;
  }

  std::vector<Trajectory> out;
  Trajectory current;
  auto flush = [&] {
    if (!current.points.empty()) out.push_back(std::move(current));
    current = {};
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    double lat = 0.0, lon = 0.0;
    std::int64_t ts = 0;
    if (f.size() != 7 || !parse_number(f[0], lat) || !parse_number(f[1], lon) ||
        !parse_timestamp(f[5], f[6], ts)) {
      throw ParseError(path.string() + ": malformed PLT record", line_no);
    }
    LocationId loc;
    try {
      loc = locate(spec, lat, lon);
    } catch (const OutOfBounds&) {
      continue;
    }
    if (!current.points.empty()) {
      const std::int64_t prev = current.points.back().timestamp;
      if (ts <= prev) continue;  // duplicate or out-of-order fix
      if (ts - prev > opts.split_gap_s) flush();
    }
    current.points.push_back({ts, loc});
  }
  flush();
  return out;
}

Trajectory resample_fixed_interval(const Trajectory& t, std::int64_t interval_s) {
  if (interval_s <= 0) throw ConfigError("resample interval must be > 0");
  Trajectory out;
  if (t.points.empty()) return out;
  const std::int64_t t0 = t.points.front().timestamp;
  const std::int64_t t_last = t.points.back().timestamp;
  std::size_t idx = 0;
  for (std::int64_t tick = t0; tick <= t_last; tick += interval_s) {
    while (idx + 1 < t.points.size() && t.points[idx + 1].timestamp <= tick) ++idx;
    out.points.push_back({tick, t.points[idx].loc});
  }
  return out;
}

std::vector<Sample> windowize(const Trajectory& t, std::size_t T) {
  if (T < 1) throw ConfigError("window length must be >= 1");
  std::vector<Sample> out;
  if (t.size() <= T) return out;
  out.reserve(t.size() - T);
  for (std::size_t p = 0; p + T < t.size(); ++p) {
    Sample s;
    s.window.reserve(T);
    for (std::size_t i = p; i < p + T; ++i) s.window.push_back(t.points[i].loc);
    s.target = t.points[p + T].loc;
    out.push_back(std::move(s));
  }
  return out;
}

ClientDataset build_client_dataset(int client_id, std::span<const Trajectory> trajectories,
                                   std::size_t T) {
  ClientDataset c;
  c.client_id = client_id;
  for (const auto& t : trajectories) {
    for (const auto& p : t.points) ++c.location_counts[p.loc];
    auto samples = windowize(t, T);
    std::move(samples.begin(), samples.end(), std::back_inserter(c.samples));
  }
  return c;
}

std::vector<std::filesystem::path> list_plt_files(const std::filesystem::path& user_dir) {
  std::vector<std::filesystem::path> out;
  if (!std::filesystem::is_directory(user_dir)) {
    throw IoError(user_dir.string() + " is not a directory");
  }
  for (const auto& e : std::filesystem::recursive_directory_iterator(user_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".plt") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

ClientDataset ingest_client(int client_id, std::span<const std::filesystem::path> plt_files,
                            const GridSpec& spec, const ClientIngestOptions& opts) {
  std::vector<Trajectory> kept;
  for (const auto& f : plt_files) {
    for (const auto& raw : ingest_plt(f, spec, opts.ingest)) {
      Trajectory t = resample_fixed_interval(raw, opts.resample_interval_s);
      if (t.size() > opts.min_records) kept.push_back(std::move(t));
    }
  }
  return build_client_dataset(client_id, kept, opts.window);
}

void SynthConfig::validate() const {
  if (window < 1) throw ConfigError("synthetic.window must be >= 1");
  if (home_size_min < 1) throw ConfigError("synthetic.home_size_min must be >= 1");
  if (home_size_max < home_size_min) throw ConfigError("synthetic.home_size_max must be >= home_size_min");
  if (!(stay_prob >= 0.0 && stay_prob <= 1.0)) throw ConfigError("synthetic.stay_prob must be in [0, 1]");
  if (!(commute_prob >= 0.0 && commute_prob <= 1.0)) {
    throw ConfigError("synthetic.commute_prob must be in [0, 1]");
  }
  if (trajectories_min < 1) throw ConfigError("synthetic.trajectories_min must be >= 1");
  if (trajectories_max < trajectories_min) {
    throw ConfigError("synthetic.trajectories_max must be >= trajectories_min");
  }
  if (trajectory_length <= window) {
    throw ConfigError("synthetic.trajectory_length must exceed synthetic.window");
  }
  if (step_s < 1) throw ConfigError("synthetic.step_s must be >= 1");
}

FederatedDataset synth_generate(const GridSpec& spec, std::size_t n_clients, const SynthConfig& cfg,
                                std::uint64_t seed) {
  spec.validate();
  cfg.validate();
  if (n_clients < 1) throw ConfigError("n_clients must be >= 1");
  if (cfg.downtown_size > std::min(spec.n_rows, spec.n_cols)) {
    throw ConfigError("synthetic.downtown_size exceeds the grid");
  }
  const std::size_t tile = cfg.home_size_max;
  if (tile > std::min(spec.n_rows, spec.n_cols)) {
    throw ConfigError("synthetic.home_size_max exceeds the grid");
  }

  std::optional<Block> downtown;
  if (cfg.downtown_size > 0) {
    downtown = Block{(spec.n_rows - cfg.downtown_size) / 2, (spec.n_cols - cfg.downtown_size) / 2,
                     cfg.downtown_size};
  }
  std::vector<Block> tiles;
  for (std::size_t r = 0; r + tile <= spec.n_rows; r += tile) {
    for (std::size_t c = 0; c + tile <= spec.n_cols; c += tile) {
      Block b{r, c, tile};
      if (!downtown || !b.overlaps(*downtown)) tiles.push_back(b);
    }
  }
  if (tiles.size() < n_clients) {
    throw ConfigError("grid fits only " + std::to_string(tiles.size()) + " home regions for " +
                      std::to_string(n_clients) + " clients");
  }
  Rng layout_rng(mix_seed({seed, 0x1A7017}));
  layout_rng.shuffle(std::span<Block>(tiles));

  FederatedDataset ds;
  ds.grid = spec;
  ds.window = cfg.window;
  for (std::size_t k = 0; k < n_clients; ++k) {
    Rng rng(mix_seed({seed, 0xC11E47, k}));
    Block home = tiles[k];
    home.size = draw_in_range(rng, cfg.home_size_min, cfg.home_size_max);
    const std::size_t n_traj = draw_in_range(rng, cfg.trajectories_min, cfg.trajectories_max);
    const CellCoord anchor = home.random_cell(rng);

    std::vector<Trajectory> trajectories;
    for (std::size_t j = 0; j < n_traj; ++j) {
      Trajectory t;
      bool at_home = true;
      CellCoord at = anchor;
      const std::int64_t start = static_cast<std::int64_t>(j) * 86400;
      for (std::size_t s = 0; s < cfg.trajectory_length; ++s) {
        t.points.push_back({start + static_cast<std::int64_t>(s) * cfg.step_s, location_of(spec, at)});
        const double u = rng.uniform();
        if (u < cfg.stay_prob) continue;
        if (u < cfg.stay_prob + cfg.commute_prob) {
          if (downtown) {
            at_home = !at_home;
            at = (at_home ? home : *downtown).random_cell(rng);
          }
          continue;
        }
        at = step_within(at_home ? home : *downtown, at, rng);
      }
      trajectories.push_back(std::move(t));
    }
    ds.clients.push_back(build_client_dataset(static_cast<int>(k), trajectories, cfg.window));
  }
  return ds;
}

double location_entropy(const LocationCounts& counts) {
  std::uint64_t total = 0;
  for (const auto& [loc, n] : counts) total += n;
  if (total == 0) return 0.0;
  double h = 0.0;
  for (const auto& [loc, n] : counts) {
    if (n == 0) continue;
    const double p = static_cast<double>(n) / static_cast<double>(total);
    h -= p * std::log(p);
  }
  // Single-outcome tallies give -1*log(1) = -0.0.
  return h == 0.0 ? 0.0 : h;
}

double location_entropy(const ClientDataset& c) { return location_entropy(c.location_counts); }

LocationCounts train_location_counts(const ClientDataset& c) {
  LocationCounts counts;
  for (const auto& s : c.train()) ++counts[s.target];
  return counts;
}

double heterogeneity_index(const FederatedDataset& ds) {
  std::set<LocationId> all;
  std::size_t c_max_client = 0;
  for (const auto& c : ds.clients) {
    std::size_t distinct = 0;
    for (const auto& [loc, n] : c.location_counts) {
      if (n == 0) continue;
      ++distinct;
      all.insert(loc);
    }
    c_max_client = std::max(c_max_client, distinct);
  }
  const std::size_t c_total = all.size();
  if (c_total < 2) {
    throw DegenerateDataset("heterogeneity index needs at least 2 distinct locations, found " +
                            std::to_string(c_total));
  }
  return 1.0 - static_cast<double>(c_max_client - 1) / static_cast<double>(c_total - 1);
}

FederatedDataset split_train_test(FederatedDataset ds, double test_frac) {
  if (!(test_frac > 0.0 && test_frac < 1.0)) throw ConfigError("test_frac must be in (0, 1)");
  for (auto& c : ds.clients) {
    const std::size_t n = c.samples.size();
    const auto n_test = static_cast<std::size_t>(std::ceil(test_frac * static_cast<double>(n)));
    if (n_test >= n) {
      throw ClientTooSmall("client " + std::to_string(c.client_id) + " has " + std::to_string(n) +
                           " samples; no training samples would remain");
    }
    c.train_size = n - n_test;
  }
  return ds;
}

void write_dataset_cache(const FederatedDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);

  std::ostringstream meta;
  meta << "[grid]\n"
       << "origin_lat = " << format_double(ds.grid.origin_lat) << '\n'
       << "origin_lon = " << format_double(ds.grid.origin_lon) << '\n'
       << "cell_size_m = " << format_double(ds.grid.cell_size_m) << '\n'
       << "n_rows = " << ds.grid.n_rows << '\n'
       << "n_cols = " << ds.grid.n_cols << '\n'
       << "\n[dataset]\n"
       << "window = " << ds.window << '\n'
       << "clients = " << ds.clients.size() << '\n';
  write_file_atomic(dir / "dataset.ini", meta.str());

  std::ostringstream samples;
  samples << "client_id,sample_index";
  for (std::size_t i = 0; i < ds.window; ++i) samples << ",loc_" << i;
  samples << ",target\n";
  for (const auto& c : ds.clients) {
    for (std::size_t i = 0; i < c.samples.size(); ++i) {
      samples << c.client_id << ',' << i;
      for (const auto& l : c.samples[i].window) samples << ',' << l.index;
      samples << ',' << c.samples[i].target.index << '\n';
    }
  }
  write_file_atomic(dir / "samples.csv", samples.str());

  std::ostringstream locs;
  locs << "client_id,location_id,count\n";
  for (const auto& c : ds.clients) {
    for (const auto& [loc, n] : c.location_counts) locs << c.client_id << ',' << loc.index << ',' << n << '\n';
  }
  write_file_atomic(dir / "locations.csv", locs.str());
}

FederatedDataset read_dataset_cache(const std::filesystem::path& dir) {
  namespace pt = boost::property_tree;
  FederatedDataset ds;
  pt::ptree meta;
  try {
    pt::read_ini((dir / "dataset.ini").string(), meta);
    ds.grid.origin_lat = meta.get<double>("grid.origin_lat");
    ds.grid.origin_lon = meta.get<double>("grid.origin_lon");
    ds.grid.cell_size_m = meta.get<double>("grid.cell_size_m");
    ds.grid.n_rows = meta.get<std::size_t>("grid.n_rows");
    ds.grid.n_cols = meta.get<std::size_t>("grid.n_cols");
    ds.window = meta.get<std::size_t>("dataset.window");
  } catch (const pt::ptree_error& e) {
    throw IoError("bad dataset cache metadata in " + dir.string() + ": " + e.what());
  }
  ds.grid.validate();
  const std::size_t n_locations = ds.grid.num_locations();

  std::map<int, ClientDataset> by_id;
  auto client = [&](int id) -> ClientDataset& {
    auto [it, inserted] = by_id.try_emplace(id);
    if (inserted) it->second.client_id = id;
    return it->second;
  };
  auto parse_loc = [&](std::string_view f, std::size_t line_no, const std::string& file) {
    std::uint32_t v = 0;
    if (!parse_number(f, v) || v >= n_locations) throw ParseError(file + ": bad location id", line_no);
    return LocationId{v};
  };

  {
    const std::string file = (dir / "samples.csv").string();
    std::istringstream in(read_file(dir / "samples.csv"));
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw EmptyFile(file + ": missing header");
    ++line_no;
    while (std::getline(in, line)) {
      ++line_no;
      if (trim(line).empty()) continue;
      const auto f = split(line, ',');
      int id = 0;
      std::size_t index = 0;
      if (f.size() != ds.window + 3 || !parse_number(f[0], id) || !parse_number(f[1], index)) {
        throw ParseError(file + ": malformed sample row", line_no);
      }
      ClientDataset& c = client(id);
      if (index != c.samples.size()) throw ParseError(file + ": sample_index out of order", line_no);
      Sample s;
      for (std::size_t i = 0; i < ds.window; ++i) s.window.push_back(parse_loc(f[2 + i], line_no, file));
      s.target = parse_loc(f[2 + ds.window], line_no, file);
      c.samples.push_back(std::move(s));
    }
  }
  {
    const std::string file = (dir / "locations.csv").string();
    std::istringstream in(read_file(dir / "locations.csv"));
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw EmptyFile(file + ": missing header");
    ++line_no;
    while (std::getline(in, line)) {
      ++line_no;
      if (trim(line).empty()) continue;
      const auto f = split(line, ',');
      int id = 0;
      std::uint64_t n = 0;
      if (f.size() != 3 || !parse_number(f[0], id) || !parse_number(f[2], n)) {
        throw ParseError(file + ": malformed location row", line_no);
      }
      client(id).location_counts[parse_loc(f[1], line_no, file)] += n;
    }
  }
  for (auto& [id, c] : by_id) ds.clients.push_back(std::move(c));
  return ds;
}

}  // namespace fedgeo
