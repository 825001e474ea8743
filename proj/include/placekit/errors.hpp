#pragma once

#include <stdexcept>
#include <string>

namespace placekit {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

#define PLACEKIT_DEFINE_ERROR(Name)                                            \
  class Name : public Error {                                                  \
  public:                                                                      \
    explicit Name(const std::string &what) : Error(#Name ": " + what) {}      \
  }

PLACEKIT_DEFINE_ERROR(NotPositiveDefinite);
PLACEKIT_DEFINE_ERROR(InvalidConfig);
PLACEKIT_DEFINE_ERROR(ShapeMismatch);
PLACEKIT_DEFINE_ERROR(OutOfDomain);
PLACEKIT_DEFINE_ERROR(OptimizationDiverged);
PLACEKIT_DEFINE_ERROR(CorruptCheckpoint);
PLACEKIT_DEFINE_ERROR(EmptyContext);
PLACEKIT_DEFINE_ERROR(DegenerateInput);
PLACEKIT_DEFINE_ERROR(IoError);

#undef PLACEKIT_DEFINE_ERROR

} // namespace placekit
