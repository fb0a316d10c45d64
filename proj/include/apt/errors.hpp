#pragma once

#include <stdexcept>
#include <string>

namespace apt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define APT_DEFINE_ERROR(Name)                                                 \
    class Name : public Error {                                                \
    public:                                                                    \
        explicit Name(const std::string& what) : Error(#Name ": " + what) {}   \
    }

// embedding_bank
APT_DEFINE_ERROR(MalformedHeader);
APT_DEFINE_ERROR(TruncatedFile);
APT_DEFINE_ERROR(InvariantViolation);
APT_DEFINE_ERROR(IoFailure);
APT_DEFINE_ERROR(InvalidSpec);
APT_DEFINE_ERROR(InsufficientSamples);
APT_DEFINE_ERROR(TooFewClasses);

// apt_block
APT_DEFINE_ERROR(DimMismatch);
APT_DEFINE_ERROR(ShapeMismatch);
APT_DEFINE_ERROR(NonFiniteInput);
APT_DEFINE_ERROR(StaleCache);
APT_DEFINE_ERROR(InvalidEpsilon);

// classifier
APT_DEFINE_ERROR(ZeroNormVector);
APT_DEFINE_ERROR(NonPositiveTemperature);
APT_DEFINE_ERROR(LabelOutOfRange);

// trainer
APT_DEFINE_ERROR(UnsupportedShots);
APT_DEFINE_ERROR(StepOutOfRange);
APT_DEFINE_ERROR(DivergenceDetected);
APT_DEFINE_ERROR(MalformedCheckpoint);

// uq
APT_DEFINE_ERROR(InvalidSampleCount);
APT_DEFINE_ERROR(DegenerateMax);
APT_DEFINE_ERROR(EmptyInput);
APT_DEFINE_ERROR(EmptySet);

// analysis
APT_DEFINE_ERROR(LengthMismatch);
APT_DEFINE_ERROR(BothZero);
APT_DEFINE_ERROR(EmptyClass);

// cli
APT_DEFINE_ERROR(UsageError);
APT_DEFINE_ERROR(MissingArtifacts);

#undef APT_DEFINE_ERROR

}  // namespace apt
