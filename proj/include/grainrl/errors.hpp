#ifndef GRAINRL_ERRORS_HPP_
#define GRAINRL_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace grainrl {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define GRAINRL_DEFINE_ERROR(Name)                                  \
  struct Name : Error {                                             \
    explicit Name(const std::string& msg) : Error(msg) {}           \
  }

GRAINRL_DEFINE_ERROR(UnknownTokenError);
GRAINRL_DEFINE_ERROR(EmptyResponseError);
GRAINRL_DEFINE_ERROR(EmptySequenceError);
GRAINRL_DEFINE_ERROR(VocabError);
GRAINRL_DEFINE_ERROR(ShapeMismatchError);
GRAINRL_DEFINE_ERROR(NonFiniteInputError);
GRAINRL_DEFINE_ERROR(NonFiniteGradientError);
GRAINRL_DEFINE_ERROR(NonFiniteLossError);
GRAINRL_DEFINE_ERROR(NonScalarLossError);
GRAINRL_DEFINE_ERROR(EmptyU1Error);
GRAINRL_DEFINE_ERROR(WrongHeadError);
GRAINRL_DEFINE_ERROR(HeadSchemeMismatchError);
GRAINRL_DEFINE_ERROR(LengthMismatchError);
GRAINRL_DEFINE_ERROR(TimeoutError);
GRAINRL_DEFINE_ERROR(MalformedResponseError);
GRAINRL_DEFINE_ERROR(DatasetError);
GRAINRL_DEFINE_ERROR(CheckpointError);
GRAINRL_DEFINE_ERROR(ConfigError);

#undef GRAINRL_DEFINE_ERROR

}  // namespace grainrl

#endif  // GRAINRL_ERRORS_HPP_
