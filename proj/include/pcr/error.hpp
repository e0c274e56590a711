/* Copyright 2026 The PCR Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pcr {

enum class Errc {
  // jpeg_scan
  NotJpeg,
  NotProgressive,
  Truncated,
  Unsupported,
  Malformed,
  // container
  EmptyRecord,
  DuplicateSampleId,
  BadMagic,
  VersionUnsupported,
  CorruptIndex,
  Io,
  // reader
  TruncatedPayload,
  ZeroLengthImage,
  FidelityUnavailable,
  // numeric modules
  InvalidArgument,
  DimensionMismatch,
  TooSmall,
  ShapeMismatch,
  ZeroGradient,
  ConfigInvalid,
  DecodeFailed,
};

constexpr std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::NotJpeg: return "NotJpeg";
    case Errc::NotProgressive: return "NotProgressive";
    case Errc::Truncated: return "Truncated";
    case Errc::Unsupported: return "Unsupported";
    case Errc::Malformed: return "Malformed";
    case Errc::EmptyRecord: return "EmptyRecord";
    case Errc::DuplicateSampleId: return "DuplicateSampleId";
    case Errc::BadMagic: return "BadMagic";
    case Errc::VersionUnsupported: return "VersionUnsupported";
    case Errc::CorruptIndex: return "CorruptIndex";
    case Errc::Io: return "Io";
    case Errc::TruncatedPayload: return "TruncatedPayload";
    case Errc::ZeroLengthImage: return "ZeroLengthImage";
    case Errc::FidelityUnavailable: return "FidelityUnavailable";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::TooSmall: return "TooSmall";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::ZeroGradient: return "ZeroGradient";
    case Errc::ConfigInvalid: return "ConfigInvalid";
    case Errc::DecodeFailed: return "DecodeFailed";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI's exit-code mapping) can branch without string
/// matching.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace pcr
