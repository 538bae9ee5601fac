#pragma once

#include <stdexcept>
#include <string>

namespace elpose {

// Base of every error thrown by the library. The CLI maps subclasses to
// distinct exit codes (see cli.hpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define ELPOSE_DEFINE_ERROR(Name)          \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  }

ELPOSE_DEFINE_ERROR(ParseError);
ELPOSE_DEFINE_ERROR(SchemaError);
ELPOSE_DEFINE_ERROR(ValueError);
ELPOSE_DEFINE_ERROR(ShapeError);
ELPOSE_DEFINE_ERROR(LengthError);
ELPOSE_DEFINE_ERROR(DimError);
ELPOSE_DEFINE_ERROR(TooShort);
ELPOSE_DEFINE_ERROR(EmptyDataset);
ELPOSE_DEFINE_ERROR(EmptyInput);
ELPOSE_DEFINE_ERROR(DegenerateError);
ELPOSE_DEFINE_ERROR(DivisibilityError);
ELPOSE_DEFINE_ERROR(BlowupError);
ELPOSE_DEFINE_ERROR(ConfigError);
ELPOSE_DEFINE_ERROR(IoError);
ELPOSE_DEFINE_ERROR(MissingCheckpoint);

#undef ELPOSE_DEFINE_ERROR

}  // namespace elpose
