#pragma once

#include <stdexcept>
#include <string>

namespace stereo_traj {

/// Coarse error classes; the CLI maps each one to a distinct exit code.
enum class ErrorFamily {
  parse,       // malformed input, bad arguments, broken references
  numerical,   // degenerate geometry, non-finite values, inconsistent scale
  infeasible,  // inputs are valid but admit no answer
  io,          // files cannot be read or written
};

class Error : public std::runtime_error {
 public:
  Error(ErrorFamily family, const std::string& what)
      : std::runtime_error(what), family_(family) {}

  ErrorFamily family() const noexcept { return family_; }

 private:
  ErrorFamily family_;
};

#define STEREO_TRAJ_DEFINE_ERROR(Name, Family)                 \
  class Name : public Error {                                  \
   public:                                                     \
    explicit Name(const std::string& what)                     \
        : Error(ErrorFamily::Family, std::string(#Name ": ") + what) {} \
  };

// geometry
STEREO_TRAJ_DEFINE_ERROR(InvalidRotation, numerical)
STEREO_TRAJ_DEFINE_ERROR(PointBehindCamera, numerical)
STEREO_TRAJ_DEFINE_ERROR(DegenerateBaseline, numerical)

// tracking
STEREO_TRAJ_DEFINE_ERROR(EmptyPrediction, numerical)
STEREO_TRAJ_DEFINE_ERROR(FrameOrderError, parse)
STEREO_TRAJ_DEFINE_ERROR(DimensionMismatch, parse)

// recon
STEREO_TRAJ_DEFINE_ERROR(ParseError, parse)
STEREO_TRAJ_DEFINE_ERROR(DanglingReference, parse)
STEREO_TRAJ_DEFINE_ERROR(DuplicateCamera, parse)
STEREO_TRAJ_DEFINE_ERROR(NoCommonFrames, infeasible)

// refine
STEREO_TRAJ_DEFINE_ERROR(NoStereoFrames, infeasible)
STEREO_TRAJ_DEFINE_ERROR(NonPositiveScale, numerical)
STEREO_TRAJ_DEFINE_ERROR(EmptyProblem, infeasible)
STEREO_TRAJ_DEFINE_ERROR(NumericalFailure, numerical)

// trajectory
STEREO_TRAJ_DEFINE_ERROR(UnknownCamera, parse)
STEREO_TRAJ_DEFINE_ERROR(ScaleMismatch, numerical)

// synth
STEREO_TRAJ_DEFINE_ERROR(InfeasibleScene, infeasible)
STEREO_TRAJ_DEFINE_ERROR(FrameMismatch, parse)

STEREO_TRAJ_DEFINE_ERROR(IoError, io)

#undef STEREO_TRAJ_DEFINE_ERROR

}  // namespace stereo_traj
