#ifndef FEDGEO_ERROR_HPP
#define FEDGEO_ERROR_HPP

#include <stdexcept>
#include <string>

namespace fedgeo {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define FEDGEO_DEFINE_ERROR(Name)          \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  }

FEDGEO_DEFINE_ERROR(OutOfBounds);
FEDGEO_DEFINE_ERROR(DimensionMismatch);
FEDGEO_DEFINE_ERROR(DegenerateRow);
FEDGEO_DEFINE_ERROR(EmptyFile);
FEDGEO_DEFINE_ERROR(ConfigError);
FEDGEO_DEFINE_ERROR(DegenerateDataset);
FEDGEO_DEFINE_ERROR(ClientTooSmall);
FEDGEO_DEFINE_ERROR(InvalidLocationId);
FEDGEO_DEFINE_ERROR(EmptyDataset);
FEDGEO_DEFINE_ERROR(InvalidLayerIndex);
FEDGEO_DEFINE_ERROR(ShapeMismatch);
FEDGEO_DEFINE_ERROR(EmptyTestSet);
FEDGEO_DEFINE_ERROR(IoError);

#undef FEDGEO_DEFINE_ERROR

/// Malformed input line; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace fedgeo

#endif  // FEDGEO_ERROR_HPP
