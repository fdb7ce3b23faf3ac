#pragma once

#include <stdexcept>
#include <string>

namespace cohere {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define COHERE_DEFINE_ERROR(Name)              \
  class Name : public Error {                  \
   public:                                     \
    using Error::Error;                        \
  }

// corpus
COHERE_DEFINE_ERROR(EmptyDocument);
COHERE_DEFINE_ERROR(InvalidIndex);
COHERE_DEFINE_ERROR(DegenerateDocument);
COHERE_DEFINE_ERROR(FormatError);
COHERE_DEFINE_ERROR(IoError);

// position model
COHERE_DEFINE_ERROR(InvalidConfig);
COHERE_DEFINE_ERROR(DegenerateInput);
COHERE_DEFINE_ERROR(InvalidLabel);
COHERE_DEFINE_ERROR(NonFiniteLoss);
COHERE_DEFINE_ERROR(VersionMismatch);
COHERE_DEFINE_ERROR(ChecksumMismatch);

// coherence / insights / eval
COHERE_DEFINE_ERROR(TooShort);
COHERE_DEFINE_ERROR(MismatchedInputs);

#undef COHERE_DEFINE_ERROR

}  // namespace cohere
