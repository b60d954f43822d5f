#ifndef FEDGEO_GEOGRID_HPP
#define FEDGEO_GEOGRID_HPP

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fedgeo/matrix.hpp"

namespace fedgeo {

/// Index of a grid cell, row * n_cols + col.
struct LocationId {
  std::uint32_t index = 0;

  friend auto operator<=>(const LocationId&, const LocationId&) = default;
};

/// Uniform square-cell grid anchored at its south-west corner.
struct GridSpec {
  double origin_lat = 0.0;
  double origin_lon = 0.0;
  double cell_size_m = 100.0;
  std::size_t n_rows = 1;
  std::size_t n_cols = 1;

  std::size_t num_locations() const noexcept { return n_rows * n_cols; }
  /// Throws ConfigError when a field violates the grid invariants.
  void validate() const;

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

struct CellCoord {
  std::size_t row = 0;
  std::size_t col = 0;
};

CellCoord cell_of(const GridSpec& spec, LocationId id);
LocationId location_of(const GridSpec& spec, CellCoord cell);

/// Meters (east, north) of a point relative to the grid origin, using a
/// local equirectangular projection.
struct PlanarPoint {
  double east_m = 0.0;
  double north_m = 0.0;
};

struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;
};

PlanarPoint project(const GridSpec& spec, double lat, double lon);
/// Inverse of project().
GeoPoint unproject(const GridSpec& spec, PlanarPoint p);
PlanarPoint cell_center(const GridSpec& spec, LocationId id);

/// Cell containing (lat, lon). Throws OutOfBounds outside the grid extent.
LocationId locate(const GridSpec& spec, double lat, double lon);

/// Euclidean distance between two cell centers, in meters.
double cell_center_distance(const GridSpec& spec, LocationId i, LocationId j);

/// Sparse square matrix in compressed-row form. Column indices within a row
/// are strictly increasing.
class SpatialWeightMatrix {
 public:
  struct Entry {
    std::uint32_t col;
    double weight;

    friend bool operator==(const Entry&, const Entry&) = default;
  };

  SpatialWeightMatrix() = default;
  /// Builds from row offsets and entries; validates ordering and shape.
  SpatialWeightMatrix(std::size_t size, std::vector<std::size_t> row_offsets,
                      std::vector<Entry> entries, bool normalized);

  static SpatialWeightMatrix identity(std::size_t size);

  std::size_t size() const noexcept { return size_; }
  std::size_t nnz() const noexcept { return entries_.size(); }
  bool normalized() const noexcept { return normalized_; }

  std::span<const Entry> row(std::size_t i) const {
    return {entries_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }
  /// Weight at (i, j); zero when the entry is absent.
  double at(std::size_t i, std::size_t j) const;
  double row_sum(std::size_t i) const;

  Matrix to_dense() const;

  friend bool operator==(const SpatialWeightMatrix&, const SpatialWeightMatrix&) = default;

 private:
  std::size_t size_ = 0;
  std::vector<std::size_t> offsets_{0};
  std::vector<Entry> entries_;
  bool normalized_ = false;
};

/// Unnormalized adjacency: q on the diagonal, 1 for distinct cells whose
/// center distance is strictly below d_m, otherwise absent.
SpatialWeightMatrix build_spatial_weights(const GridSpec& spec, double d_m, double q);

/// Divides every entry by its row sum. Throws DegenerateRow on a zero row.
SpatialWeightMatrix row_normalize(const SpatialWeightMatrix& m);

/// Returns m * emb. Requires a normalized matrix with m.size() == emb.rows().
Matrix apply_to_embedding(const SpatialWeightMatrix& m, const Matrix& emb);

/// Text export: header "<size> <nnz>", then one "i j weight" line per entry
/// with 9 significant digits.
void write_spatial_weights(const SpatialWeightMatrix& m, const std::filesystem::path& path);

}  // namespace fedgeo

#endif  // FEDGEO_GEOGRID_HPP
