#include "lpmap/types.h"

namespace lpmap {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kSingularDirection: return "SingularDirection";
    case ErrorCode::kEmptyStream: return "EmptyStream";
    case ErrorCode::kNotLinear: return "NotLinear";
    case ErrorCode::kBasisNotOrthonormal: return "BasisNotOrthonormal";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kNoConsensus: return "NoConsensus";
    case ErrorCode::kDegenerate: return "Degenerate";
    case ErrorCode::kNotConverged: return "NotConverged";
    case ErrorCode::kMissingChain: return "MissingChain";
    case ErrorCode::kNumericalFailure: return "NumericalFailure";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kValidationError: return "ValidationError";
    case ErrorCode::kNoOverlap: return "NoOverlap";
    case ErrorCode::kLostTrack: return "LostTrack";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
  }
  return "Unknown";
}

std::string_view LabelName(Label label) {
  switch (label) {
    case Label::kPole: return "pole";
    case Label::kBuilding: return "building";
    case Label::kFence: return "fence";
    case Label::kRoad: return "road";
    case Label::kOther: return "other";
  }
  return "other";
}

Label LabelFromName(std::string_view name) {
  if (name == "pole") return Label::kPole;
  if (name == "building") return Label::kBuilding;
  if (name == "fence") return Label::kFence;
  if (name == "road") return Label::kRoad;
  if (name == "other") return Label::kOther;
  throw Error(ErrorCode::kParseError, "unknown label '" + std::string(name) + "'");
}

std::string_view KindName(LandmarkKind kind) {
  return kind == LandmarkKind::kLine ? "line" : "plane";
}

LandmarkKind KindFromName(std::string_view name) {
  if (name == "line") return LandmarkKind::kLine;
  if (name == "plane") return LandmarkKind::kPlane;
  throw Error(ErrorCode::kParseError, "unknown landmark kind '" + std::string(name) + "'");
}

}  // namespace lpmap
