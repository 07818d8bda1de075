#pragma once

#include <stdexcept>
#include <string>

namespace mrvf {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Geometry
class EmptyMask : public Error { public: using Error::Error; };
class InfeasibleGeometry : public Error { public: using Error::Error; };
class DimensionError : public Error { public: using Error::Error; };

// File formats
class FormatError : public Error { public: using Error::Error; };
class VersionError : public Error { public: using Error::Error; };

// Physics
class StepTooCoarse : public Error { public: using Error::Error; };
class ZeroSignal : public Error { public: using Error::Error; };

// Reconstruction / evaluation
class LengthMismatch : public Error { public: using Error::Error; };
class DegenerateSample : public Error { public: using Error::Error; };
class EmptyRoi : public Error { public: using Error::Error; };

/// Invalid user input (configuration, flags, preconditions on arguments).
class ValidationError : public Error { public: using Error::Error; };

/// Rethrows the active exception with `prefix` prepended to its message, keeping the
/// toolkit error type. Must be called from inside a catch block.
[[noreturn]] inline void rethrow_with_prefix(const std::string& prefix) {
    try {
        throw;
    }
#define MRVF_RETHROW_AS(T) \
    catch (const T& e) { throw T(prefix + e.what()); }
    MRVF_RETHROW_AS(EmptyMask)
    MRVF_RETHROW_AS(InfeasibleGeometry)
    MRVF_RETHROW_AS(DimensionError)
    MRVF_RETHROW_AS(FormatError)
    MRVF_RETHROW_AS(VersionError)
    MRVF_RETHROW_AS(StepTooCoarse)
    MRVF_RETHROW_AS(ZeroSignal)
    MRVF_RETHROW_AS(LengthMismatch)
    MRVF_RETHROW_AS(DegenerateSample)
    MRVF_RETHROW_AS(EmptyRoi)
    MRVF_RETHROW_AS(ValidationError)
#undef MRVF_RETHROW_AS
    catch (const std::exception& e) {
        throw Error(prefix + e.what());
    }
}

} // namespace mrvf
