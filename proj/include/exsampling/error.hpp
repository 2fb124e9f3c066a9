#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace exsampling {

enum class ErrorCode {
  MalformedContainer,
  UnsupportedEncoding,
  EmptyAudio,
  NoSignal,
  TooShort,
  ClipTooShort,
  BadBandCount,
  UnknownLabel,
  UnknownInstrument,
  EmptyClass,
  BridgeUnavailable,
  BridgeProtocol,
  NonPositiveFrequency,
  InvalidAddress,
  Malformed,
  UnsupportedType,
  SocketError,
  EmptySample,
  TooLarge,
  MalformedAudio,
  TooBusy,
  NotFound,
  InvalidArgument,
  Io,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedContainer: return "malformed_container";
    case ErrorCode::UnsupportedEncoding: return "unsupported_encoding";
    case ErrorCode::EmptyAudio: return "empty_audio";
    case ErrorCode::NoSignal: return "no_signal";
    case ErrorCode::TooShort: return "too_short";
    case ErrorCode::ClipTooShort: return "clip_too_short";
    case ErrorCode::BadBandCount: return "bad_band_count";
    case ErrorCode::UnknownLabel: return "unknown_label";
    case ErrorCode::UnknownInstrument: return "unknown_instrument";
    case ErrorCode::EmptyClass: return "empty_class";
    case ErrorCode::BridgeUnavailable: return "bridge_unavailable";
    case ErrorCode::BridgeProtocol: return "bridge_protocol";
    case ErrorCode::NonPositiveFrequency: return "non_positive_frequency";
    case ErrorCode::InvalidAddress: return "invalid_address";
    case ErrorCode::Malformed: return "malformed";
    case ErrorCode::UnsupportedType: return "unsupported_type";
    case ErrorCode::SocketError: return "socket_error";
    case ErrorCode::EmptySample: return "empty_sample";
    case ErrorCode::TooLarge: return "too_large";
    case ErrorCode::MalformedAudio: return "malformed_audio";
    case ErrorCode::TooBusy: return "too_busy";
    case ErrorCode::NotFound: return "not_found";
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::Io: return "io";
  }
  return "unknown";
}

// Every failure in the library surfaces as this exception; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace exsampling
