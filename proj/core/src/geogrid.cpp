#include "fedgeo/geogrid.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <string>

#include "fedgeo/error.hpp"

namespace fedgeo {

namespace {

constexpr double kEarthRadiusM = 6371008.8;
constexpr double kDegToRad = std::numbers::pi / 180.0;

double meters_per_degree_lon(const GridSpec& spec) {
  return kEarthRadiusM * kDegToRad * std::cos(spec.origin_lat * kDegToRad);
}

}  // namespace

void GridSpec::validate() const {
  if (n_rows < 1) throw ConfigError("grid n_rows must be >= 1");
  if (n_cols < 1) throw ConfigError("grid n_cols must be >= 1");
  if (!(cell_size_m > 0.0) || !std::isfinite(cell_size_m)) {
    throw ConfigError("grid cell_size_m must be > 0");
  }
  if (std::abs(origin_lat) >= 90.0) throw ConfigError("grid origin_lat must be in (-90, 90)");
  if (num_locations() > std::size_t{UINT32_MAX}) throw ConfigError("grid has too many cells");
}

CellCoord cell_of(const GridSpec& spec, LocationId id) {
  return {id.index / spec.n_cols, id.index % spec.n_cols};
}

LocationId location_of(const GridSpec& spec, CellCoord cell) {
  return {static_cast<std::uint32_t>(cell.row * spec.n_cols + cell.col)};
}

PlanarPoint project(const GridSpec& spec, double lat, double lon) {
  return {(lon - spec.origin_lon) * meters_per_degree_lon(spec),
          (lat - spec.origin_lat) * kEarthRadiusM * kDegToRad};
}

GeoPoint unproject(const GridSpec& spec, PlanarPoint p) {
  return {spec.origin_lat + p.north_m / (kEarthRadiusM * kDegToRad),
          spec.origin_lon + p.east_m / meters_per_degree_lon(spec)};
}

PlanarPoint cell_center(const GridSpec& spec, LocationId id) {
  const CellCoord c = cell_of(spec, id);
  return {(static_cast<double>(c.col) + 0.5) * spec.cell_size_m,
          (static_cast<double>(c.row) + 0.5) * spec.cell_size_m};
}

LocationId locate(const GridSpec& spec, double lat, double lon) {
  const PlanarPoint p = project(spec, lat, lon);
  const double width = static_cast<double>(spec.n_cols) * spec.cell_size_m;
  const double height = static_cast<double>(spec.n_rows) * spec.cell_size_m;
  if (!(p.east_m >= 0.0 && p.east_m < width && p.north_m >= 0.0 && p.north_m < height)) {
    throw OutOfBounds("point (" + std::to_string(lat) + ", " + std::to_string(lon) +
                      ") lies outside the grid");
  }
  auto col = static_cast<std::size_t>(std::floor(p.east_m / spec.cell_size_m));
  auto row = static_cast<std::size_t>(std::floor(p.north_m / spec.cell_size_m));
  // Guard against rounding up at the far edge.
  col = std::min(col, spec.n_cols - 1);
  row = std::min(row, spec.n_rows - 1);
  return location_of(spec, {row, col});
}

double cell_center_distance(const GridSpec& spec, LocationId i, LocationId j) {
  if (i == j) return 0.0;
  const CellCoord a = cell_of(spec, i);
  const CellCoord b = cell_of(spec, j);
  const double dr = static_cast<double>(a.row) - static_cast<double>(b.row);
  const double dc = static_cast<double>(a.col) - static_cast<double>(b.col);
  return spec.cell_size_m * std::hypot(dr, dc);
}

SpatialWeightMatrix::SpatialWeightMatrix(std::size_t size, std::vector<std::size_t> row_offsets,
                                         std::vector<Entry> entries, bool normalized)
    : size_(size),
      offsets_(std::move(row_offsets)),
      entries_(std::move(entries)),
      normalized_(normalized) {
  if (offsets_.size() != size_ + 1 || offsets_.front() != 0 || offsets_.back() != entries_.size()) {
    throw DimensionMismatch("spatial weight row offsets do not match entries");
  }
  for (std::size_t i = 0; i < size_; ++i) {
    if (offsets_[i] > offsets_[i + 1]) throw DimensionMismatch("row offsets must be nondecreasing");
    for (std::size_t e = offsets_[i]; e < offsets_[i + 1]; ++e) {
      if (entries_[e].col >= size_) throw DimensionMismatch("column index out of range");
      if (e > offsets_[i] && entries_[e].col <= entries_[e - 1].col) {
        throw DimensionMismatch("column indices must be strictly increasing within a row");
      }
    }
  }
}

SpatialWeightMatrix SpatialWeightMatrix::identity(std::size_t size) {
  std::vector<std::size_t> offsets(size + 1);
  std::vector<Entry> entries(size);
  for (std::size_t i = 0; i < size; ++i) {
    offsets[i + 1] = i + 1;
    entries[i] = {static_cast<std::uint32_t>(i), 1.0};
  }
  return SpatialWeightMatrix(size, std::move(offsets), std::move(entries), true);
}

double SpatialWeightMatrix::at(std::size_t i, std::size_t j) const {
  for (const Entry& e : row(i)) {
    if (e.col == j) return e.weight;
  }
  return 0.0;
}

double SpatialWeightMatrix::row_sum(std::size_t i) const {
  double s = 0.0;
  for (const Entry& e : row(i)) s += e.weight;
  return s;
}

Matrix SpatialWeightMatrix::to_dense() const {
  Matrix out(size_, size_);
  for (std::size_t i = 0; i < size_; ++i) {
    for (const Entry& e : row(i)) out(i, e.col) = e.weight;
  }
  return out;
}

SpatialWeightMatrix build_spatial_weights(const GridSpec& spec, double d_m, double q) {
  spec.validate();
  if (!(d_m >= 0.0)) throw ConfigError("neighbor threshold d must be >= 0");
  if (!(q > 0.0)) throw ConfigError("self weight q must be > 0");

  const std::size_t n = spec.num_locations();
  // Only cells within this many rows/cols can be closer than d_m.
  const auto reach = static_cast<std::ptrdiff_t>(std::ceil(d_m / spec.cell_size_m));
  const auto rows = static_cast<std::ptrdiff_t>(spec.n_rows);
  const auto cols = static_cast<std::ptrdiff_t>(spec.n_cols);

  std::vector<std::size_t> offsets;
  offsets.reserve(n + 1);
  offsets.push_back(0);
  std::vector<SpatialWeightMatrix::Entry> entries;

  for (std::size_t i = 0; i < n; ++i) {
    const LocationId li{static_cast<std::uint32_t>(i)};
    const CellCoord c = cell_of(spec, li);
    const auto r0 = static_cast<std::ptrdiff_t>(c.row);
    const auto c0 = static_cast<std::ptrdiff_t>(c.col);
    for (std::ptrdiff_t r = std::max<std::ptrdiff_t>(0, r0 - reach);
         r <= std::min(rows - 1, r0 + reach); ++r) {
      for (std::ptrdiff_t k = std::max<std::ptrdiff_t>(0, c0 - reach);
           k <= std::min(cols - 1, c0 + reach); ++k) {
        const LocationId lj = location_of(spec, {static_cast<std::size_t>(r), static_cast<std::size_t>(k)});
        if (lj == li) {
          entries.push_back({lj.index, q});
        } else if (cell_center_distance(spec, li, lj) < d_m) {
          entries.push_back({lj.index, 1.0});
        }
      }
    }
    offsets.push_back(entries.size());
  }
  return SpatialWeightMatrix(n, std::move(offsets), std::move(entries), false);
}

SpatialWeightMatrix row_normalize(const SpatialWeightMatrix& m) {
  std::vector<std::size_t> offsets{0};
  offsets.reserve(m.size() + 1);
  std::vector<SpatialWeightMatrix::Entry> entries;
  entries.reserve(m.nnz());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double sum = m.row_sum(i);
    if (!(sum > 0.0)) throw DegenerateRow("row " + std::to_string(i) + " sums to zero");
    for (const auto& e : m.row(i)) entries.push_back({e.col, e.weight / sum});
    offsets.push_back(entries.size());
  }
  return SpatialWeightMatrix(m.size(), std::move(offsets), std::move(entries), true);
}

Matrix apply_to_embedding(const SpatialWeightMatrix& m, const Matrix& emb) {
  if (!m.normalized()) throw DimensionMismatch("spatial weight matrix must be row-normalized");
  if (m.size() != emb.rows()) {
    throw DimensionMismatch("spatial weight matrix size " + std::to_string(m.size()) +
                            " does not match embedding rows " + std::to_string(emb.rows()));
  }
  Matrix out(emb.rows(), emb.cols());
  for (std::size_t i = 0; i < m.size(); ++i) {
    auto dst = out.row(i);
    for (const auto& e : m.row(i)) {
      auto src = emb.row(e.col);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += e.weight * src[c];
    }
  }
  return out;
}

void write_spatial_weights(const SpatialWeightMatrix& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << m.size() << ' ' << m.nnz() << '\n';
  out.precision(9);
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (const auto& e : m.row(i)) out << i << ' ' << e.col << ' ' << e.weight << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace fedgeo
