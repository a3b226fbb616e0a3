#pragma once

#include <stdexcept>
#include <string>

namespace duc {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParameterError : Error {
  using Error::Error;
};

struct DimensionError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct ParseError : Error {
  using Error::Error;
};

struct EmptyCorpusError : Error {
  using Error::Error;
};

struct CellInfeasibleError : Error {
  using Error::Error;
};

struct LengthError : Error {
  using Error::Error;
};

struct TrainingError : Error {
  TrainingError(const std::string& what, long step_index)
      : Error(what + " (step " + std::to_string(step_index) + ")"), step(step_index) {}
  long step;
};

}  // namespace duc
