#ifndef LPMAP_TYPES_H_
#define LPMAP_TYPES_H_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace lpmap {

using Vector3 = Eigen::Vector3d;
using Vector6 = Eigen::Matrix<double, 6, 1>;
using Matrix3 = Eigen::Matrix3d;
using Matrix6 = Eigen::Matrix<double, 6, 6>;

enum class ErrorCode {
  kSingularDirection,
  kEmptyStream,
  kNotLinear,
  kBasisNotOrthonormal,
  kDimensionMismatch,
  kNoConsensus,
  kDegenerate,
  kNotConverged,
  kMissingChain,
  kNumericalFailure,
  kParseError,
  kValidationError,
  kNoOverlap,
  kLostTrack,
  kLengthMismatch,
};

std::string_view ErrorCodeName(ErrorCode code);

// All library failures surface as this exception.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

enum class Label : std::uint8_t { kPole, kBuilding, kFence, kRoad, kOther };

std::string_view LabelName(Label label);
Label LabelFromName(std::string_view name);

inline bool IsPlanarLabel(Label label) {
  return label == Label::kBuilding || label == Label::kFence ||
         label == Label::kRoad;
}

enum class LandmarkKind : std::uint8_t { kLine, kPlane };

std::string_view KindName(LandmarkKind kind);
LandmarkKind KindFromName(std::string_view name);

}  // namespace lpmap

#endif  // LPMAP_TYPES_H_
