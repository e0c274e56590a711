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

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pcr/error.hpp"

namespace pcr {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

class ByteSink {
 public:
  virtual ~ByteSink() = default;
  virtual void write(ByteView bytes) = 0;
};

/// Forward-only byte source. `read` returns fewer bytes than requested only
/// at end of stream.
class SequentialSource {
 public:
  virtual ~SequentialSource() = default;
  virtual std::size_t read(std::span<std::uint8_t> out) = 0;
};

class RandomAccessSource {
 public:
  virtual ~RandomAccessSource() = default;
  virtual std::uint64_t size() const = 0;
  /// Fills `out` from `offset`; returns the number of bytes copied, which is
  /// short only when the source ends.
  virtual std::size_t read_at(std::uint64_t offset, std::span<std::uint8_t> out) const = 0;
};

class VectorSink final : public ByteSink {
 public:
  void write(ByteView bytes) override { data_.insert(data_.end(), bytes.begin(), bytes.end()); }
  const Bytes& data() const noexcept { return data_; }
  Bytes take() noexcept { return std::move(data_); }

 private:
  Bytes data_;
};

class MemorySource final : public SequentialSource, public RandomAccessSource {
 public:
  explicit MemorySource(ByteView bytes) : bytes_(bytes) {}

  std::size_t read(std::span<std::uint8_t> out) override {
    const std::size_t n = read_at(cursor_, out);
    cursor_ += n;
    return n;
  }
  std::uint64_t size() const override { return bytes_.size(); }
  std::size_t read_at(std::uint64_t offset, std::span<std::uint8_t> out) const override {
    if (offset >= bytes_.size()) return 0;
    const std::size_t n = std::min<std::size_t>(out.size(), bytes_.size() - offset);
    std::memcpy(out.data(), bytes_.data() + offset, n);
    return n;
  }

 private:
  ByteView bytes_;
  std::uint64_t cursor_ = 0;
};

namespace detail {

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  Fd& operator=(Fd&& other) noexcept {
    if (this != &other) {
      reset();
      fd_ = std::exchange(other.fd_, -1);
    }
    return *this;
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() { reset(); }

  int get() const noexcept { return fd_; }
  void reset() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

inline std::string errno_message(const std::string& what, const std::filesystem::path& path) {
  return what + " " + path.string() + ": " + std::strerror(errno);
}

struct FreeDeleter {
  void operator()(void* p) const noexcept { std::free(p); }
};

}  // namespace detail

class FileSink final : public ByteSink {
 public:
  explicit FileSink(const std::filesystem::path& path) : path_(path) {
    fd_ = detail::Fd(::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644));
    if (fd_.get() < 0) fail(Errc::Io, detail::errno_message("cannot create", path));
  }

  void write(ByteView bytes) override {
    const std::uint8_t* p = bytes.data();
    std::size_t left = bytes.size();
    while (left > 0) {
      const ssize_t n = ::write(fd_.get(), p, left);
      if (n < 0) {
        if (errno == EINTR) continue;
        fail(Errc::Io, detail::errno_message("write failed on", path_));
      }
      p += n;
      left -= static_cast<std::size_t>(n);
    }
  }

 private:
  std::filesystem::path path_;
  detail::Fd fd_;
};

struct FileReadOptions {
  /// Bypass the page cache with O_DIRECT. Reads are then issued in aligned
  /// blocks through a bounce buffer; the logical byte stream is unchanged.
  bool direct_io = false;
};

/// Reads the PCR_DIRECT_IO environment flag ("1"/"true" enables).
inline FileReadOptions file_read_options_from_env() {
  FileReadOptions opts;
  if (const char* v = std::getenv("PCR_DIRECT_IO")) {
    const std::string s(v);
    opts.direct_io = s == "1" || s == "true" || s == "on";
  }
  return opts;
}

/// POSIX file source usable both sequentially and by offset.
class FileSource final : public SequentialSource, public RandomAccessSource {
 public:
  explicit FileSource(const std::filesystem::path& path, FileReadOptions opts = {})
      : path_(path), opts_(opts) {
    int flags = O_RDONLY | O_CLOEXEC;
#ifdef O_DIRECT
    if (opts_.direct_io) flags |= O_DIRECT;
#endif
    fd_ = detail::Fd(::open(path.c_str(), flags));
    if (fd_.get() < 0 && opts_.direct_io) {
      // Filesystems such as tmpfs reject O_DIRECT; fall back to buffered.
      opts_.direct_io = false;
      fd_ = detail::Fd(::open(path.c_str(), O_RDONLY | O_CLOEXEC));
    }
    if (fd_.get() < 0) fail(Errc::Io, detail::errno_message("cannot open", path));
    struct stat st {};
    if (::fstat(fd_.get(), &st) != 0) fail(Errc::Io, detail::errno_message("cannot stat", path));
    size_ = static_cast<std::uint64_t>(st.st_size);
  }

  std::uint64_t size() const override { return size_; }

  std::size_t read_at(std::uint64_t offset, std::span<std::uint8_t> out) const override {
    if (opts_.direct_io) return read_direct(offset, out);
    std::size_t done = 0;
    while (done < out.size()) {
      const ssize_t n = ::pread(fd_.get(), out.data() + done, out.size() - done,
                                static_cast<off_t>(offset + done));
      if (n < 0) {
        if (errno == EINTR) continue;
        fail(Errc::Io, detail::errno_message("read failed on", path_));
      }
      if (n == 0) break;
      done += static_cast<std::size_t>(n);
    }
    return done;
  }

  std::size_t read(std::span<std::uint8_t> out) override {
    const std::size_t n = read_at(cursor_, out);
    cursor_ += n;
    return n;
  }

  bool direct_io() const noexcept { return opts_.direct_io; }
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  static constexpr std::size_t kAlign = 4096;

  std::size_t read_direct(std::uint64_t offset, std::span<std::uint8_t> out) const {
    if (offset >= size_ || out.empty()) return 0;
    const std::size_t want = std::min<std::uint64_t>(out.size(), size_ - offset);
    const std::uint64_t first = offset / kAlign * kAlign;
    const std::uint64_t last = (offset + want + kAlign - 1) / kAlign * kAlign;
    const std::size_t span_len = last - first;
    std::unique_ptr<std::uint8_t, detail::FreeDeleter> bounce(
        static_cast<std::uint8_t*>(std::aligned_alloc(kAlign, span_len)));
    if (!bounce) fail(Errc::Io, "cannot allocate direct-I/O buffer");
    std::size_t got = 0;
    while (got < span_len) {
      const ssize_t n = ::pread(fd_.get(), bounce.get() + got, span_len - got,
                                static_cast<off_t>(first + got));
      if (n < 0) {
        if (errno == EINTR) continue;
        fail(Errc::Io, detail::errno_message("direct read failed on", path_));
      }
      if (n == 0) break;
      got += static_cast<std::size_t>(n);
    }
    const std::size_t skip = offset - first;
    const std::size_t avail = got > skip ? std::min(want, got - skip) : 0;
    std::memcpy(out.data(), bounce.get() + skip, avail);
    return avail;
  }

  std::filesystem::path path_;
  FileReadOptions opts_;
  detail::Fd fd_;
  std::uint64_t size_ = 0;
  std::uint64_t cursor_ = 0;
};

inline Bytes read_file(const std::filesystem::path& path) {
  FileSource src(path);
  Bytes out(src.size());
  if (src.read_at(0, out) != out.size()) fail(Errc::Io, "short read on " + path.string());
  return out;
}

inline void write_file(const std::filesystem::path& path, ByteView bytes) {
  FileSink sink(path);
  sink.write(bytes);
}

}  // namespace pcr
