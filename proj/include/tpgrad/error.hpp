#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tpgrad {

enum class ErrorCode {
  NonFinite,
  Singular,
  ZeroMatrix,
  ShapeMismatch,
  IndexOutOfRange,
  VariantMismatch,
  BadMagic,
  TruncatedFile,
  CountMismatch,
  ParseError,
  ValidationError,
  ConfigInvalid,
  DivergedNaN,
  IoError,
};

inline std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::Singular: return "Singular";
    case ErrorCode::ZeroMatrix: return "ZeroMatrix";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::VariantMismatch: return "VariantMismatch";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::CountMismatch: return "CountMismatch";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ValidationError: return "ValidationError";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::DivergedNaN: return "DivergedNaN";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace tpgrad
