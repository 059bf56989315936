#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace driftguard {

enum class ErrorKind {
  Format,
  Data,
  Io,
  DegenerateInput,
  Shape,
  Parameter,
  Convergence,
  Numerical,
  DegenerateFit,
  Selection,
  GridSearch,
  Train,
  Metric,
};

std::string_view error_kind_name(ErrorKind kind);

// Numerical failures map to CLI exit code 3; everything else is a
// user/input error (exit code 2).
bool is_numerical_failure(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define DRIFTGUARD_DEFINE_ERROR(Name, Kind)                   \
  class Name : public Error {                                 \
   public:                                                    \
    explicit Name(const std::string& message)                 \
        : Error(ErrorKind::Kind, message) {}                  \
  };

DRIFTGUARD_DEFINE_ERROR(FormatError, Format)
DRIFTGUARD_DEFINE_ERROR(DataError, Data)
DRIFTGUARD_DEFINE_ERROR(IoError, Io)
DRIFTGUARD_DEFINE_ERROR(DegenerateInputError, DegenerateInput)
DRIFTGUARD_DEFINE_ERROR(ShapeError, Shape)
DRIFTGUARD_DEFINE_ERROR(ParameterError, Parameter)
DRIFTGUARD_DEFINE_ERROR(NumericalError, Numerical)
DRIFTGUARD_DEFINE_ERROR(DegenerateFitError, DegenerateFit)
DRIFTGUARD_DEFINE_ERROR(SelectionError, Selection)
DRIFTGUARD_DEFINE_ERROR(GridSearchError, GridSearch)
DRIFTGUARD_DEFINE_ERROR(TrainError, Train)
DRIFTGUARD_DEFINE_ERROR(MetricError, Metric)

#undef DRIFTGUARD_DEFINE_ERROR

}  // namespace driftguard
