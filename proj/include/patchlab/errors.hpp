#pragma once

#include <stdexcept>
#include <string>

namespace plab {

/// Base class for every error raised by the library. `kind()` is a stable
/// identifier used by the CLI to pick exit codes and by tests.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define PLAB_DEFINE_ERROR(Name)                                  \
  class Name : public Error {                                    \
   public:                                                       \
    explicit Name(const std::string& what) : Error(#Name, what) {} \
  };

// numerics
PLAB_DEFINE_ERROR(ShapeMismatch)
PLAB_DEFINE_ERROR(IndexOutOfRange)
PLAB_DEFINE_ERROR(NotScalar)
// model
PLAB_DEFINE_ERROR(InvalidConfig)
PLAB_DEFINE_ERROR(SequenceTooLong)
PLAB_DEFINE_ERROR(SiteShapeMismatch)
PLAB_DEFINE_ERROR(CheckpointFormat)
// corpus
PLAB_DEFINE_ERROR(ExhaustedCandidates)
// trainer
PLAB_DEFINE_ERROR(DivergedLoss)
// patcher
PLAB_DEFINE_ERROR(GateNotPassed)
PLAB_DEFINE_ERROR(EmptyExampleSet)
PLAB_DEFINE_ERROR(MissingTriggerSpan)
// analyzer
PLAB_DEFINE_ERROR(KExceedsGridSize)
PLAB_DEFINE_ERROR(BothEmpty)
PLAB_DEFINE_ERROR(IoFailure)
PLAB_DEFINE_ERROR(MissingArtifact)
// cli
PLAB_DEFINE_ERROR(ConfigError)

#undef PLAB_DEFINE_ERROR

}  // namespace plab
