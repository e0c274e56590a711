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

// The .pcr record container.
//
// On-disk layout, little-endian throughout:
//
//   header    24 bytes
//     0  magic          "PCR1"
//     4  version        u16   (= 1)
//     6  flags          u16   (= 0; bits reserved for metadata schemas)
//     8  n_images       u32
//     12 n_groups       u16
//     14 reserved       u16   (= 0)
//     16 checksum       u32   CRC-32 of header (checksum zeroed) + metadata + index
//     20 metadata_len   u32
//   metadata  per image: sample_id u64, label i32, n_scans u8, name_len u16, name
//   index     group_offsets u64[G], then lengths u32[G][n_images] (group-major)
//   payload   scan group 1 .. G, each holding one slice per image in record order
//
// Group 0 is the metadata alone. Group 1 slices carry the JPEG header plus
// scan 1; group g carries scan g; the last group also absorbs any surplus scans.

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "pcr/error.hpp"
#include "pcr/io.hpp"
#include "pcr/jpeg_scan.hpp"

namespace pcr {

inline constexpr char kMagic[4] = {'P', 'C', 'R', '1'};
inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr std::size_t kHeaderSize = 24;
inline constexpr std::size_t kMetaFixedSize = 15;
inline constexpr std::size_t kMaxGroups = 64;
inline constexpr std::size_t kDefaultGroups = 10;

struct SampleMeta {
  std::uint64_t sample_id = 0;
  std::int32_t label = 0;
  std::string source_name;
  std::uint8_t n_scans = 0;

  friend bool operator==(const SampleMeta&, const SampleMeta&) = default;
};

struct PcrIndex {
  std::uint32_t n_images = 0;
  std::uint16_t n_groups = 0;
  std::vector<std::uint64_t> group_offsets;  // absolute; [g - 1] for group g
  std::vector<std::uint32_t> lengths;        // [(g - 1) * n_images + i]
  std::uint32_t metadata_len = 0;

  friend bool operator==(const PcrIndex&, const PcrIndex&) = default;

  /// Byte length of image `i` in group `g` (1-based). Group 0 holds no image bytes.
  std::uint32_t length(std::size_t g, std::size_t i) const {
    return g == 0 ? 0 : lengths[(g - 1) * n_images + i];
  }

  std::uint64_t group_size(std::size_t g) const {
    if (g == 0) return 0;
    const auto row = lengths.begin() + static_cast<std::ptrdiff_t>((g - 1) * n_images);
    return std::accumulate(row, row + n_images, std::uint64_t{0});
  }

  std::uint64_t index_len() const {
    return 8ull * n_groups + 4ull * n_groups * n_images;
  }

  /// Offset of the first payload byte, i.e. the size of everything before it.
  std::uint64_t payload_offset() const { return kHeaderSize + metadata_len + index_len(); }

  /// File offset one past the end of group g; g == 0 stops after the index.
  std::uint64_t prefix_end(std::size_t g) const {
    if (g == 0) return payload_offset();
    return group_offsets[g - 1] + group_size(g);
  }

  std::uint64_t payload_size() const { return prefix_end(n_groups) - payload_offset(); }
};

/// In-memory record: index, metadata, and the payload (groups 1..G back to back).
struct PcrRecord {
  PcrIndex index;
  std::vector<SampleMeta> metadata;
  Bytes payload;

  ByteView group(std::size_t g) const {
    const std::uint64_t begin = index.group_offsets[g - 1] - index.payload_offset();
    return ByteView(payload).subspan(begin, index.group_size(g));
  }
};

struct EncodeItem {
  ByteView jpeg;
  SampleMeta meta;  // n_scans is filled in by the encoder
};

/// Fixed bytes that are not payload: header, metadata block and index block.
inline std::uint64_t container_overhead(std::span<const SampleMeta> metas, std::size_t n_groups) {
  std::uint64_t meta = 0;
  for (const auto& m : metas) meta += kMetaFixedSize + m.source_name.size();
  return kHeaderSize + meta + 8ull * n_groups + 4ull * n_groups * metas.size();
}

namespace detail {

inline void put_u16(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_u32(Bytes& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}
inline void put_u64(Bytes& out, std::uint64_t v) {
  for (int s = 0; s < 64; s += 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}
inline std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
         (std::uint32_t{p[3]} << 24);
}
inline std::uint64_t get_u64(const std::uint8_t* p) {
  return std::uint64_t{get_u32(p)} | (std::uint64_t{get_u32(p + 4)} << 32);
}
inline void set_u32(std::uint8_t* p, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) p[k] = static_cast<std::uint8_t>(v >> (8 * k));
}

inline std::uint32_t crc32_of(std::uint32_t crc, ByteView bytes) {
  // zlib takes uInt lengths; feed in chunks.
  while (!bytes.empty()) {
    const std::size_t n = std::min<std::size_t>(bytes.size(), 1u << 30);
    crc = static_cast<std::uint32_t>(::crc32(crc, bytes.data(), static_cast<uInt>(n)));
    bytes = bytes.subspan(n);
  }
  return crc;
}

// Header + metadata + index, checksum filled in.
inline Bytes serialize_prologue(const PcrIndex& index, std::span<const SampleMeta> metas) {
  Bytes out;
  out.reserve(index.payload_offset());
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u16(out, kFormatVersion);
  put_u16(out, 0);
  put_u32(out, index.n_images);
  put_u16(out, index.n_groups);
  put_u16(out, 0);
  put_u32(out, 0);
  put_u32(out, index.metadata_len);
  for (const auto& m : metas) {
    put_u64(out, m.sample_id);
    put_u32(out, static_cast<std::uint32_t>(m.label));
    out.push_back(m.n_scans);
    put_u16(out, static_cast<std::uint16_t>(m.source_name.size()));
    out.insert(out.end(), m.source_name.begin(), m.source_name.end());
  }
  for (auto off : index.group_offsets) put_u64(out, off);
  for (auto len : index.lengths) put_u32(out, len);
  set_u32(out.data() + 16, crc32_of(::crc32(0, nullptr, 0), out));
  return out;
}

struct HeaderFields {
  std::uint16_t version = 0;
  std::uint16_t flags = 0;
  std::uint32_t n_images = 0;
  std::uint16_t n_groups = 0;
  std::uint32_t checksum = 0;
  std::uint32_t metadata_len = 0;

  std::uint64_t body_len() const {
    return std::uint64_t{metadata_len} + 8ull * n_groups + 4ull * n_groups * n_images;
  }
};

inline HeaderFields parse_header(ByteView h) {
  if (h.size() < kHeaderSize || std::memcmp(h.data(), kMagic, 4) != 0) {
    fail(Errc::BadMagic, "not a PCR file");
  }
  HeaderFields f;
  f.version = get_u16(h.data() + 4);
  f.flags = get_u16(h.data() + 6);
  f.n_images = get_u32(h.data() + 8);
  f.n_groups = get_u16(h.data() + 12);
  f.checksum = get_u32(h.data() + 16);
  f.metadata_len = get_u32(h.data() + 20);
  if (f.version != kFormatVersion) {
    fail(Errc::VersionUnsupported, "format version " + std::to_string(f.version));
  }
  return f;
}

}  // namespace detail

struct IndexedMetadata {
  PcrIndex index;
  std::vector<SampleMeta> metadata;
};

/// Decodes and validates the metadata and index blocks that follow `header`.
inline IndexedMetadata parse_index(ByteView header, ByteView body) {
  const detail::HeaderFields f = detail::parse_header(header);
  if (body.size() != f.body_len()) fail(Errc::CorruptIndex, "index region size mismatch");

  std::uint8_t zeroed[kHeaderSize];
  std::memcpy(zeroed, header.data(), kHeaderSize);
  detail::set_u32(zeroed + 16, 0);
  std::uint32_t crc = detail::crc32_of(::crc32(0, nullptr, 0), ByteView(zeroed, kHeaderSize));
  crc = detail::crc32_of(crc, body);
  if (crc != f.checksum) fail(Errc::CorruptIndex, "checksum mismatch");

  if (f.n_groups == 0 || f.n_groups > kMaxGroups) fail(Errc::CorruptIndex, "group count out of range");
  if (f.n_images == 0) fail(Errc::CorruptIndex, "record holds no images");

  IndexedMetadata out;
  PcrIndex& idx = out.index;
  idx.n_images = f.n_images;
  idx.n_groups = f.n_groups;
  idx.metadata_len = f.metadata_len;

  const std::uint8_t* p = body.data();
  const std::uint8_t* meta_end = p + f.metadata_len;
  std::unordered_set<std::uint64_t> seen;
  out.metadata.reserve(f.n_images);
  for (std::uint32_t i = 0; i < f.n_images; ++i) {
    if (meta_end - p < static_cast<std::ptrdiff_t>(kMetaFixedSize)) {
      fail(Errc::CorruptIndex, "metadata block too short");
    }
    SampleMeta m;
    m.sample_id = detail::get_u64(p);
    m.label = static_cast<std::int32_t>(detail::get_u32(p + 8));
    m.n_scans = p[12];
    const std::uint16_t name_len = detail::get_u16(p + 13);
    p += kMetaFixedSize;
    if (meta_end - p < name_len) fail(Errc::CorruptIndex, "metadata name overruns block");
    m.source_name.assign(reinterpret_cast<const char*>(p), name_len);
    p += name_len;
    if (m.n_scans == 0) fail(Errc::CorruptIndex, "sample with zero scans");
    if (!seen.insert(m.sample_id).second) fail(Errc::CorruptIndex, "duplicate sample id");
    out.metadata.push_back(std::move(m));
  }
  if (p != meta_end) fail(Errc::CorruptIndex, "metadata block has trailing bytes");

  idx.group_offsets.resize(f.n_groups);
  for (auto& off : idx.group_offsets) {
    off = detail::get_u64(p);
    p += 8;
  }
  idx.lengths.resize(std::size_t{f.n_groups} * f.n_images);
  for (auto& len : idx.lengths) {
    len = detail::get_u32(p);
    p += 4;
  }

  std::uint64_t expect = idx.payload_offset();
  for (std::size_t g = 1; g <= idx.n_groups; ++g) {
    if (idx.group_offsets[g - 1] != expect) fail(Errc::CorruptIndex, "group offsets inconsistent");
    expect += idx.group_size(g);
  }
  for (std::size_t i = 0; i < idx.n_images; ++i) {
    if (idx.length(1, i) == 0) fail(Errc::CorruptIndex, "image without group-1 bytes");
  }
  return out;
}

/// Rearranges parsed images into scan groups. Images with fewer scans than
/// `n_groups` leave zero-length slices in the higher groups; surplus scans
/// are folded into the last group.
inline PcrRecord encode_record(std::span<const EncodeItem> images,
                               std::size_t n_groups = kDefaultGroups) {
  if (n_groups == 0 || n_groups > kMaxGroups) {
    fail(Errc::InvalidArgument, "n_groups must be in 1.." + std::to_string(kMaxGroups));
  }
  if (images.empty()) fail(Errc::EmptyRecord, "record needs at least one image");
  if (images.size() > UINT32_MAX) fail(Errc::InvalidArgument, "too many images for one record");

  const std::size_t n = images.size();
  PcrRecord rec;
  rec.metadata.reserve(n);
  std::vector<std::vector<std::size_t>> bounds(n);  // source offsets b(0..G)
  std::unordered_set<std::uint64_t> seen;
  std::uint64_t meta_len = 0;

  for (std::size_t i = 0; i < n; ++i) {
    const EncodeItem& item = images[i];
    if (!seen.insert(item.meta.sample_id).second) {
      fail(Errc::DuplicateSampleId, "sample_id " + std::to_string(item.meta.sample_id));
    }
    if (item.meta.source_name.size() > UINT16_MAX) {
      fail(Errc::InvalidArgument, "source_name longer than 65535 bytes");
    }
    ScanMap map;
    try {
      map = parse_scans(item.jpeg);
    } catch (const Error& e) {
      throw Error(e.code(), "sample_id " + std::to_string(item.meta.sample_id) + " (" +
                                item.meta.source_name + "): " + e.what());
    }
    const std::size_t k = map.scans.size();
    auto& b = bounds[i];
    b.resize(n_groups + 1);
    b[0] = 0;
    for (std::size_t g = 1; g < n_groups; ++g) b[g] = g <= k ? map.scans[g - 1].end() : map.total_len;
    b[n_groups] = map.total_len;
    for (std::size_t g = 1; g <= n_groups; ++g) {
      if (b[g] - b[g - 1] > UINT32_MAX) fail(Errc::InvalidArgument, "scan group slice exceeds 4 GiB");
    }

    SampleMeta meta = item.meta;
    meta.n_scans = static_cast<std::uint8_t>(k);
    meta_len += kMetaFixedSize + meta.source_name.size();
    rec.metadata.push_back(std::move(meta));
  }
  if (meta_len > UINT32_MAX) fail(Errc::InvalidArgument, "metadata block exceeds 4 GiB");

  PcrIndex& idx = rec.index;
  idx.n_images = static_cast<std::uint32_t>(n);
  idx.n_groups = static_cast<std::uint16_t>(n_groups);
  idx.metadata_len = static_cast<std::uint32_t>(meta_len);
  idx.lengths.resize(n_groups * n);
  for (std::size_t g = 1; g <= n_groups; ++g) {
    for (std::size_t i = 0; i < n; ++i) {
      idx.lengths[(g - 1) * n + i] = static_cast<std::uint32_t>(bounds[i][g] - bounds[i][g - 1]);
    }
  }

  std::uint64_t total = 0;
  for (const auto& item : images) total += item.jpeg.size();
  rec.payload.reserve(total);
  idx.group_offsets.resize(n_groups);
  for (std::size_t g = 1; g <= n_groups; ++g) {
    idx.group_offsets[g - 1] = idx.payload_offset() + rec.payload.size();
    for (std::size_t i = 0; i < n; ++i) {
      const auto slice = images[i].jpeg.subspan(bounds[i][g - 1], bounds[i][g] - bounds[i][g - 1]);
      rec.payload.insert(rec.payload.end(), slice.begin(), slice.end());
    }
  }
  return rec;
}

/// Serializes `record`; returns the number of bytes written.
inline std::uint64_t write_record(const PcrRecord& record, ByteSink& sink) {
  const Bytes prologue = detail::serialize_prologue(record.index, record.metadata);
  sink.write(prologue);
  sink.write(record.payload);
  return prologue.size() + record.payload.size();
}

/// Reads header, metadata and index only; no payload byte is requested.
inline IndexedMetadata read_index(const RandomAccessSource& source) {
  std::uint8_t header[kHeaderSize];
  if (source.read_at(0, std::span(header)) != kHeaderSize) fail(Errc::BadMagic, "file shorter than header");
  const detail::HeaderFields f = detail::parse_header(ByteView(header, kHeaderSize));
  if (kHeaderSize + f.body_len() > source.size()) fail(Errc::CorruptIndex, "index extends past end of file");
  Bytes body(f.body_len());
  if (source.read_at(kHeaderSize, body) != body.size()) fail(Errc::CorruptIndex, "short index read");
  return parse_index(ByteView(header, kHeaderSize), body);
}

/// Sequential flavour: consumes exactly header + metadata + index bytes.
inline IndexedMetadata read_index(SequentialSource& source) {
  std::uint8_t header[kHeaderSize];
  if (source.read(std::span(header)) != kHeaderSize) fail(Errc::BadMagic, "file shorter than header");
  const detail::HeaderFields f = detail::parse_header(ByteView(header, kHeaderSize));
  // Guard against absurd sizes from a damaged header before allocating.
  if (f.body_len() > (std::uint64_t{1} << 36)) fail(Errc::CorruptIndex, "index size implausible");
  Bytes body(f.body_len());
  if (source.read(body) != body.size()) fail(Errc::CorruptIndex, "short index read");
  return parse_index(ByteView(header, kHeaderSize), body);
}

}  // namespace pcr
