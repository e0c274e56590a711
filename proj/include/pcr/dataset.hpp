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

// Pass-oriented dataset handle, the surface consumed by language bindings.
// Each pass yields (label, jpeg bytes) pairs at the scan group that was
// current when the pass started; changing the group affects the next pass.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <utility>

#include "pcr/reader.hpp"

namespace pcr {

struct LabeledBytes {
  std::int32_t label = 0;
  Bytes jpeg_bytes;
};

class Dataset {
 public:
  class Pass {
   public:
    std::optional<LabeledBytes> next() {
      auto img = stream_->next();
      if (!img) return std::nullopt;
      return LabeledBytes{img->meta.label, std::move(img->jpeg_bytes)};
    }
    std::size_t scan_group() const noexcept { return scan_group_; }

   private:
    friend class Dataset;
    Pass(const std::filesystem::path& path, std::size_t g, const IterateOptions& opts)
        : stream_(std::make_unique<RecordStream>(path, FidelityRequest{g}, opts)), scan_group_(g) {}

    std::unique_ptr<RecordStream> stream_;
    std::size_t scan_group_;
  };

  /// Validates that `path` holds at least one record and that every record
  /// offers `scan_group`.
  static Dataset open(const std::filesystem::path& path, std::size_t scan_group,
                      IterateOptions opts = {}) {
    Dataset ds(path, opts);
    ds.set_scan_group(scan_group);
    return ds;
  }

  /// Takes effect on the next call to `pass()`; passes already started keep
  /// their group.
  Dataset& set_scan_group(std::size_t g) {
    if (g > max_group_) {
      fail(Errc::FidelityUnavailable, "scan group " + std::to_string(g) + " exceeds dataset maximum " +
                                          std::to_string(max_group_));
    }
    scan_group_ = g;
    return *this;
  }

  std::size_t scan_group() const noexcept { return scan_group_; }
  std::size_t max_scan_group() const noexcept { return max_group_; }
  std::uint64_t n_images() const noexcept { return n_images_; }

  Pass pass() const { return Pass(path_, scan_group_, opts_); }

 private:
  Dataset(std::filesystem::path path, IterateOptions opts) : path_(std::move(path)), opts_(opts) {
    const auto files = list_records(path_);
    if (files.empty()) fail(Errc::Io, "no .pcr files under " + path_.string());
    max_group_ = kMaxGroups;
    for (const auto& f : files) {
      FileSource src(f);
      const auto idx = read_index(static_cast<const RandomAccessSource&>(src)).index;
      max_group_ = std::min<std::size_t>(max_group_, idx.n_groups);
      n_images_ += idx.n_images;
    }
  }

  std::filesystem::path path_;
  IterateOptions opts_;
  std::size_t scan_group_ = 0;
  std::size_t max_group_ = 0;
  std::uint64_t n_images_ = 0;
};

}  // namespace pcr
