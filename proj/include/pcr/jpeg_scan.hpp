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

// Marker-level splitting of a progressive JPEG into its header and scans.
//
// Only the marker stream is interpreted; entropy-coded data is skipped
// byte-wise. The result partitions the input exactly, so concatenating the
// header and every scan reproduces the source bytes.

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "pcr/error.hpp"

namespace pcr {

struct ByteRange {
  std::size_t offset = 0;
  std::size_t length = 0;

  constexpr std::size_t end() const noexcept { return offset + length; }
  friend constexpr bool operator==(const ByteRange&, const ByteRange&) = default;
};

struct ScanMap {
  ByteRange header;
  std::vector<ByteRange> scans;
  std::size_t total_len = 0;
  bool has_trailing_eoi = false;

  friend bool operator==(const ScanMap&, const ScanMap&) = default;
};

namespace marker {
inline constexpr std::uint8_t kSOF0 = 0xC0;
inline constexpr std::uint8_t kSOF1 = 0xC1;
inline constexpr std::uint8_t kSOF2 = 0xC2;
inline constexpr std::uint8_t kSOF3 = 0xC3;
inline constexpr std::uint8_t kDHT = 0xC4;
inline constexpr std::uint8_t kJPG = 0xC8;
inline constexpr std::uint8_t kDAC = 0xCC;
inline constexpr std::uint8_t kRST0 = 0xD0;
inline constexpr std::uint8_t kRST7 = 0xD7;
inline constexpr std::uint8_t kSOI = 0xD8;
inline constexpr std::uint8_t kEOI = 0xD9;
inline constexpr std::uint8_t kSOS = 0xDA;
inline constexpr std::uint8_t kDQT = 0xDB;
inline constexpr std::uint8_t kDNL = 0xDC;
inline constexpr std::uint8_t kDRI = 0xDD;
inline constexpr std::uint8_t kDHP = 0xDE;
inline constexpr std::uint8_t kEXP = 0xDF;
inline constexpr std::uint8_t kAPP0 = 0xE0;
inline constexpr std::uint8_t kAPP15 = 0xEF;
inline constexpr std::uint8_t kJPG0 = 0xF0;
inline constexpr std::uint8_t kJPG13 = 0xFD;
inline constexpr std::uint8_t kCOM = 0xFE;

constexpr bool is_rst(std::uint8_t code) noexcept { return code >= kRST0 && code <= kRST7; }

constexpr bool is_sof(std::uint8_t code) noexcept {
  return code >= 0xC0 && code <= 0xCF && code != kDHT && code != kJPG && code != kDAC;
}

// Segments that only carry tables; a later scan may depend on them.
constexpr bool is_table(std::uint8_t code) noexcept {
  return code == kDHT || code == kDQT || code == kDRI;
}

// Segments with no decoding effect on the following scan.
constexpr bool is_passive(std::uint8_t code) noexcept {
  return (code >= kAPP0 && code <= kAPP15) || (code >= kJPG0 && code <= kJPG13) ||
         code == kCOM || code == kDNL;
}
}  // namespace marker

inline constexpr std::size_t kMaxScansPerImage = 64;
inline constexpr std::size_t kDefaultMaxJpegBytes = std::size_t{1} << 30;

/// Returns the offset of the first real marker at or after `start`, skipping
/// stuffed 0xFF00 pairs, RSTn markers and fill bytes. A run of fill bytes
/// resolves to the 0xFF immediately before the marker code.
inline std::size_t entropy_skip(std::span<const std::uint8_t> bytes, std::size_t start) {
  const std::uint8_t* data = bytes.data();
  const std::size_t n = bytes.size();
  std::size_t i = start;
  while (i < n) {
    const void* hit = std::memchr(data + i, 0xFF, n - i);
    if (hit == nullptr) break;
    i = static_cast<std::size_t>(static_cast<const std::uint8_t*>(hit) - data);
    if (i + 1 >= n) break;
    const std::uint8_t code = data[i + 1];
    if (code == 0x00 || marker::is_rst(code)) {
      i += 2;
    } else if (code == 0xFF) {
      i += 1;
    } else {
      return i;
    }
  }
  fail(Errc::Truncated, "entropy-coded data runs past end of stream");
}

namespace detail {

class MarkerWalker {
 public:
  explicit MarkerWalker(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  struct Marker {
    std::size_t offset;  // of the 0xFF directly preceding the code
    std::uint8_t code;
  };

  // Reads the marker at `pos`, which must point at 0xFF (fill bytes allowed).
  Marker read_marker(std::size_t pos) const {
    const std::size_t n = bytes_.size();
    if (pos >= n) fail(Errc::Truncated, "stream ends before next marker");
    if (bytes_[pos] != 0xFF) fail(Errc::Malformed, "expected marker at offset " + std::to_string(pos));
    while (pos + 1 < n && bytes_[pos + 1] == 0xFF) ++pos;
    if (pos + 1 >= n) fail(Errc::Truncated, "stream ends inside marker");
    const std::uint8_t code = bytes_[pos + 1];
    if (code == 0x00) fail(Errc::Malformed, "stuffed byte outside entropy data at " + std::to_string(pos));
    return {pos, code};
  }

  // Offset one past the end of the length-prefixed segment at `m`.
  std::size_t segment_end(const Marker& m) const {
    const std::size_t n = bytes_.size();
    if (m.offset + 4 > n) fail(Errc::Truncated, "segment length runs past end of stream");
    const std::size_t len = (std::size_t{bytes_[m.offset + 2]} << 8) | bytes_[m.offset + 3];
    if (len < 2) fail(Errc::Malformed, "segment length below 2 at " + std::to_string(m.offset));
    const std::size_t end = m.offset + 2 + len;
    if (end > n) fail(Errc::Truncated, "segment runs past end of stream");
    return end;
  }

 private:
  std::span<const std::uint8_t> bytes_;
};

inline void check_frame_marker(std::uint8_t code, int& frames) {
  if (code == marker::kDHP || code == marker::kEXP) fail(Errc::Unsupported, "hierarchical JPEG");
  if (code == marker::kDAC) fail(Errc::Unsupported, "arithmetic-coded JPEG");
  if (!marker::is_sof(code)) return;
  if (++frames > 1) fail(Errc::Unsupported, "more than one frame header");
  if (code >= 0xC9) fail(Errc::Unsupported, "arithmetic-coded frame");
  if (code >= 0xC5) fail(Errc::Unsupported, "differential (hierarchical) frame");
  if (code != marker::kSOF2) fail(Errc::NotProgressive, "frame is not progressive (SOF2); transcode first");
}

}  // namespace detail

/// Splits a single-frame progressive JPEG into header and scan byte ranges.
///
/// Passive segments (APPn, COM, DNL) between scans stay with the scan they
/// follow. Table segments (DHT, DQT, DRI) start the scan they precede, so every
/// prefix that ends on a scan boundary carries the tables it needs.
inline ScanMap parse_scans(std::span<const std::uint8_t> jpeg,
                           std::size_t max_bytes = kDefaultMaxJpegBytes) {
  const std::size_t n = jpeg.size();
  if (n < 2 || jpeg[0] != 0xFF || jpeg[1] != marker::kSOI) fail(Errc::NotJpeg, "missing SOI marker");
  if (n > max_bytes) fail(Errc::Unsupported, "input exceeds " + std::to_string(max_bytes) + " bytes");

  const detail::MarkerWalker walker(jpeg);
  int frames = 0;
  std::size_t pos = 2;

  // Header: everything up to the first SOS.
  detail::MarkerWalker::Marker m{};
  for (;;) {
    m = walker.read_marker(pos);
    if (m.code == marker::kSOS) break;
    if (m.code == marker::kEOI) fail(Errc::Malformed, "EOI before first scan");
    if (m.code == marker::kSOI || marker::is_rst(m.code) || m.code == 0x01) {
      fail(Errc::Malformed, "unexpected standalone marker in header");
    }
    detail::check_frame_marker(m.code, frames);
    pos = walker.segment_end(m);
  }
  if (frames == 0) fail(Errc::Malformed, "scan before frame header");

  ScanMap map;
  map.total_len = n;
  map.header = {0, m.offset};

  std::size_t scan_start = m.offset;
  auto close_scan = [&](std::size_t end) {
    if (map.scans.size() == kMaxScansPerImage) {
      fail(Errc::Unsupported, "more than " + std::to_string(kMaxScansPerImage) + " scans");
    }
    map.scans.push_back({scan_start, end - scan_start});
    scan_start = end;
  };

  for (;;) {
    // `m` is an SOS marker: skip its header, then the entropy-coded data.
    pos = entropy_skip(jpeg, walker.segment_end(m));

    constexpr std::size_t kNone = static_cast<std::size_t>(-1);
    std::size_t next_start = kNone;
    for (;;) {
      m = walker.read_marker(pos);
      if (m.code == marker::kEOI) {
        // Tables followed by EOI have no scan to attach to; keep them with
        // the last scan. Trailing bytes after EOI also stay in the last scan.
        close_scan(n);
        map.has_trailing_eoi = n >= 2 && jpeg[n - 2] == 0xFF && jpeg[n - 1] == marker::kEOI;
        return map;
      }
      if (m.code == marker::kSOS) {
        close_scan(next_start == kNone ? m.offset : next_start);
        break;
      }
      if (marker::is_table(m.code)) {
        if (next_start == kNone) next_start = m.offset;
      } else if (!marker::is_passive(m.code)) {
        detail::check_frame_marker(m.code, frames);
        fail(Errc::Malformed, "unexpected marker between scans at " + std::to_string(m.offset));
      }
      pos = walker.segment_end(m);
    }
  }
}

}  // namespace pcr
