#pragma once

#include <stdexcept>
#include <string>

namespace innerspeech {

enum class ErrorCode {
  // core
  MalformedHeader,
  ShapeMismatch,
  NonFiniteSample,
  IoFailure,
  EmptySelection,
  IntervalTooShort,
  // dsp
  InvalidBandEdges,
  SignalTooShort,
  InvalidFrequency,
  UpsamplingUnsupported,
  WindowTooLong,
  SegmentTooLong,
  ZeroTotalPower,
  BandOutOfRange,
  // features
  DegenerateData,
  DimensionMismatch,
  AllZeroGains,
  PcaProvenance,
  // models
  SingleClassData,
  NonFiniteFeature,
  UntrainedModel,
  NonFiniteLoss,
  KindMismatch,
  // eval
  TooFewSamples,
  LengthMismatch,
  LeakageDetected,
  EmptyReport,
  // synth
  NyquistViolation,
  // cli
  ConfigInvalid,
};

/// Coarse grouping used by the CLI to pick an exit code.
enum class ErrorKind { Config, Data, Numeric };

inline const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteSample: return "NonFiniteSample";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::EmptySelection: return "EmptySelection";
    case ErrorCode::IntervalTooShort: return "IntervalTooShort";
    case ErrorCode::InvalidBandEdges: return "InvalidBandEdges";
    case ErrorCode::SignalTooShort: return "SignalTooShort";
    case ErrorCode::InvalidFrequency: return "InvalidFrequency";
    case ErrorCode::UpsamplingUnsupported: return "UpsamplingUnsupported";
    case ErrorCode::WindowTooLong: return "WindowTooLong";
    case ErrorCode::SegmentTooLong: return "SegmentTooLong";
    case ErrorCode::ZeroTotalPower: return "ZeroTotalPower";
    case ErrorCode::BandOutOfRange: return "BandOutOfRange";
    case ErrorCode::DegenerateData: return "DegenerateData";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::AllZeroGains: return "AllZeroGains";
    case ErrorCode::PcaProvenance: return "PcaProvenance";
    case ErrorCode::SingleClassData: return "SingleClassData";
    case ErrorCode::NonFiniteFeature: return "NonFiniteFeature";
    case ErrorCode::UntrainedModel: return "UntrainedModel";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::KindMismatch: return "KindMismatch";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::LeakageDetected: return "LeakageDetected";
    case ErrorCode::EmptyReport: return "EmptyReport";
    case ErrorCode::NyquistViolation: return "NyquistViolation";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
  }
  return "Unknown";
}

inline ErrorKind kind_of(ErrorCode c) {
  switch (c) {
    case ErrorCode::ConfigInvalid:
    case ErrorCode::KindMismatch:
      return ErrorKind::Config;
    case ErrorCode::NonFiniteLoss:
    case ErrorCode::DegenerateData:
    case ErrorCode::ZeroTotalPower:
    case ErrorCode::NonFiniteFeature:
      return ErrorKind::Numeric;
    default:
      return ErrorKind::Data;
  }
}

/// Every library failure is an Error carrying a code and the module that raised it.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string module, const std::string& what)
      : std::runtime_error(module + ": " + to_string(code) + ": " + what),
        code_(code),
        module_(std::move(module)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& module() const noexcept { return module_; }
  ErrorKind kind() const noexcept { return kind_of(code_); }

 private:
  ErrorCode code_;
  std::string module_;
};

}  // namespace innerspeech
