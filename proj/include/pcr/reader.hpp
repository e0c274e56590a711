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

// Partial-fidelity reading of .pcr files.
//
// A read at scan group g is one forward pass over the file prefix that ends
// with group g. Images are then reassembled by concatenating their slices
// from groups 1..g and terminating the stream with EOI when needed.

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "pcr/container.hpp"
#include "pcr/double_buffer.hpp"
#include "pcr/error.hpp"
#include "pcr/io.hpp"

namespace pcr {

struct FidelityRequest {
  std::size_t scan_group = 0;
};

struct AssembledImage {
  SampleMeta meta;
  Bytes jpeg_bytes;
  std::size_t groups_used = 0;
};

/// The file prefix read for one request: index plus groups 1..g.
struct PrefixData {
  IndexedMetadata meta;
  std::size_t groups = 0;
  Bytes payload;                       // groups 1..g back to back
  std::vector<std::uint64_t> starts;   // [(g - 1) * n + i] offset into payload
  std::uint64_t bytes_read = 0;

  std::size_t n_images() const noexcept { return meta.index.n_images; }

  ByteView slice(std::size_t g, std::size_t i) const {
    const std::size_t n = n_images();
    return ByteView(payload).subspan(starts[(g - 1) * n + i], meta.index.length(g, i));
  }
};

/// Fills `out` with the prefix of `source` through group `req.scan_group`,
/// reusing its storage. Reads exactly header + metadata + index + groups
/// 1..g in one forward pass.
inline void read_prefix_into(SequentialSource& source, FidelityRequest req, PrefixData& out) {
  out.meta = read_index(source);
  const PcrIndex& idx = out.meta.index;
  if (req.scan_group > idx.n_groups) {
    fail(Errc::FidelityUnavailable, "scan group " + std::to_string(req.scan_group) +
                                        " exceeds record's " + std::to_string(idx.n_groups) + " groups");
  }
  out.groups = req.scan_group;
  const std::uint64_t want = idx.prefix_end(req.scan_group) - idx.payload_offset();
  out.payload.resize(want);
  const std::size_t got = source.read(out.payload);
  out.bytes_read = idx.payload_offset() + got;
  if (got != want) {
    fail(Errc::TruncatedPayload, "file ends before group " + std::to_string(req.scan_group) + " (" +
                                     std::to_string(got) + " of " + std::to_string(want) + " bytes)");
  }

  const std::size_t n = idx.n_images;
  out.starts.resize(out.groups * n);
  std::uint64_t pos = 0;
  for (std::size_t g = 1; g <= out.groups; ++g) {
    for (std::size_t i = 0; i < n; ++i) {
      out.starts[(g - 1) * n + i] = pos;
      pos += idx.length(g, i);
    }
  }
}

inline PrefixData read_prefix(SequentialSource& source, FidelityRequest req) {
  PrefixData out;
  read_prefix_into(source, req, out);
  return out;
}

/// True when `bytes` already ends with an EOI marker.
inline bool ends_with_eoi(ByteView bytes) noexcept {
  return bytes.size() >= 2 && bytes[bytes.size() - 2] == 0xFF && bytes.back() == marker::kEOI;
}

/// Rebuilds image `image_i` from groups 1..g of `prefix`. g == 0 yields an
/// empty payload (labels only).
inline AssembledImage assemble(const PrefixData& prefix, std::size_t image_i, std::size_t g) {
  if (image_i >= prefix.n_images()) fail(Errc::InvalidArgument, "image index out of range");
  if (g > prefix.groups) fail(Errc::FidelityUnavailable, "group " + std::to_string(g) + " was not read");
  AssembledImage out;
  out.meta = prefix.meta.metadata[image_i];
  out.groups_used = g;
  if (g == 0) return out;
  if (prefix.meta.index.length(1, image_i) == 0) {
    fail(Errc::ZeroLengthImage, "image " + std::to_string(image_i) + " has no group-1 bytes");
  }
  std::size_t total = 2;
  for (std::size_t k = 1; k <= g; ++k) total += prefix.meta.index.length(k, image_i);
  out.jpeg_bytes.reserve(total);
  for (std::size_t k = 1; k <= g; ++k) {
    const ByteView s = prefix.slice(k, image_i);
    out.jpeg_bytes.insert(out.jpeg_bytes.end(), s.begin(), s.end());
  }
  if (!ends_with_eoi(out.jpeg_bytes)) {
    out.jpeg_bytes.push_back(0xFF);
    out.jpeg_bytes.push_back(marker::kEOI);
  }
  return out;
}

/// `.pcr` files under `path` (a single file is returned as is), sorted by name.
inline std::vector<std::filesystem::path> list_records(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(path, ec)) {
    if (!fs::exists(path, ec)) fail(Errc::Io, "no such file or directory: " + path.string());
    return {path};
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(path)) {
    if (entry.is_regular_file() && entry.path().extension() == ".pcr") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

struct IterateOptions {
  /// Skip records that fail to open or read, collecting their errors,
  /// instead of stopping the stream at the first failure.
  bool permissive = false;
  FileReadOptions file = file_read_options_from_env();
};

struct RecordFailure {
  std::filesystem::path file;
  Errc code;
  std::string message;
};

/// Streams every image of every record under a path at one fidelity.
///
/// A background thread reads the next record's prefix into one half of a
/// double buffer while the caller assembles images from the other half.
/// Single consumer; not copyable or movable once started.
class RecordStream {
 public:
  RecordStream(const std::filesystem::path& path, FidelityRequest req, IterateOptions opts = {})
      : files_(list_records(path)), req_(req), opts_(opts) {
    producer_ = std::thread([this] { produce(); });
  }

  RecordStream(const RecordStream&) = delete;
  RecordStream& operator=(const RecordStream&) = delete;

  ~RecordStream() {
    buffers_.close();
    if (producer_.joinable()) producer_.join();
  }

  /// Next image in record order, or nullopt when every record is consumed.
  std::optional<AssembledImage> next() {
    for (;;) {
      if (current_ == nullptr) {
        current_ = buffers_.acquire_for_drain();
        if (current_ == nullptr) return std::nullopt;
        image_ = 0;
        if (current_->error) {
          Slot* failed = std::exchange(current_, nullptr);
          std::exception_ptr err = failed->error;
          const auto file = failed->file;
          failed->error = nullptr;
          buffers_.release();
          if (!opts_.permissive) {
            buffers_.close();
            rethrow_with_file(err, file);
          }
          record_failure(err, file);
          continue;
        }
      }
      if (image_ < current_->prefix.n_images()) {
        const std::size_t i = image_++;
        try {
          return assemble(current_->prefix, i, req_.scan_group);
        } catch (const Error& e) {
          throw Error(e.code(), current_->file.string() + ": " + e.what());
        }
      }
      current_ = nullptr;
      buffers_.release();
    }
  }

  const std::vector<RecordFailure>& failures() const noexcept { return failures_; }
  const std::vector<std::filesystem::path>& files() const noexcept { return files_; }
  std::uint64_t bytes_read() const noexcept { return bytes_read_; }

 private:
  struct Slot {
    PrefixData prefix;
    std::filesystem::path file;
    std::exception_ptr error;
  };

  void produce() {
    for (const auto& file : files_) {
      Slot* slot = buffers_.acquire_for_fill();
      if (slot == nullptr) return;
      slot->file = file;
      slot->error = nullptr;
      try {
        FileSource src(file, opts_.file);
        read_prefix_into(src, req_, slot->prefix);
        bytes_read_ += slot->prefix.bytes_read;
      } catch (...) {
        slot->error = std::current_exception();
      }
      buffers_.publish();
    }
    buffers_.finish();
  }

  [[noreturn]] static void rethrow_with_file(std::exception_ptr err, const std::filesystem::path& file) {
    try {
      std::rethrow_exception(err);
    } catch (const Error& e) {
      throw Error(e.code(), file.string() + ": " + e.what());
    }
  }

  void record_failure(std::exception_ptr err, const std::filesystem::path& file) {
    try {
      std::rethrow_exception(err);
    } catch (const Error& e) {
      failures_.push_back({file, e.code(), e.what()});
    } catch (const std::exception& e) {
      failures_.push_back({file, Errc::Io, e.what()});
    }
  }

  std::vector<std::filesystem::path> files_;
  FidelityRequest req_;
  IterateOptions opts_;
  DoubleBuffer<Slot> buffers_;
  std::thread producer_;
  Slot* current_ = nullptr;
  std::size_t image_ = 0;
  std::vector<RecordFailure> failures_;
  std::atomic<std::uint64_t> bytes_read_{0};
};

}  // namespace pcr
