#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace gpucrsim {

enum class Errc {
  PastTime,
  Livelock,
  OutOfDeviceMemory,
  InvalidLocator,
  UseAfterFree,
  FreedBuffer,
  BadState,
  PendingKernels,
  UnknownApi,
  InvalidArgument,
  CorruptDag,
  CorruptImage,
  InvariantViolation,
  StagingExhausted,
  OracleMismatch,
};

inline const char* errc_name(Errc e) {
  switch (e) {
    case Errc::PastTime: return "PastTime";
    case Errc::Livelock: return "Livelock";
    case Errc::OutOfDeviceMemory: return "OutOfDeviceMemory";
    case Errc::InvalidLocator: return "InvalidLocator";
    case Errc::UseAfterFree: return "UseAfterFree";
    case Errc::FreedBuffer: return "FreedBuffer";
    case Errc::BadState: return "BadState";
    case Errc::PendingKernels: return "PendingKernels";
    case Errc::UnknownApi: return "UnknownApi";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::CorruptDag: return "CorruptDag";
    case Errc::CorruptImage: return "CorruptImage";
    case Errc::InvariantViolation: return "InvariantViolation";
    case Errc::StagingExhausted: return "StagingExhausted";
    case Errc::OracleMismatch: return "OracleMismatch";
  }
  return "?";
}

class SimError : public std::runtime_error {
 public:
  SimError(Errc code, std::string what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + std::move(what)), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

// Parse failures carry the byte offset where decoding gave up.
class CorruptImageError : public SimError {
 public:
  CorruptImageError(uint64_t offset, std::string reason)
      : SimError(Errc::CorruptImage, "offset " + std::to_string(offset) + ": " + reason),
        offset_(offset) {}
  uint64_t offset() const { return offset_; }

 private:
  uint64_t offset_;
};

}  // namespace gpucrsim
