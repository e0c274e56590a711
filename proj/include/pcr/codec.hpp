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

// Thin libjpeg bridge: bytes -> RGB8 decoding, plus the encoding and lossless
// progressive transcoding used by tools and test fixtures.
//
// libjpeg reports fatal errors through longjmp. Every function below creates
// its owning objects before setjmp and only calls libjpeg afterwards, so no
// destructor is skipped when a jump happens.

#include <csetjmp>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include <jpeglib.h>

#include "pcr/error.hpp"
#include "pcr/image.hpp"
#include "pcr/io.hpp"

namespace pcr {

namespace detail {

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
  int warnings;
};

extern "C" inline void pcr_jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

extern "C" inline void pcr_jpeg_emit_message(j_common_ptr cinfo, int level) {
  if (level < 0) {
    auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    if (err->warnings++ == 0) (*cinfo->err->format_message)(cinfo, err->message);
  }
}

inline void init_error_mgr(JpegErrorMgr& err) {
  jpeg_std_error(&err.pub);
  err.pub.error_exit = pcr_jpeg_error_exit;
  err.pub.emit_message = pcr_jpeg_emit_message;
  err.message[0] = '\0';
  err.warnings = 0;
}

struct MemDest {
  unsigned char* data = nullptr;
  unsigned long size = 0;
  ~MemDest() { std::free(data); }
  Bytes take() const { return Bytes(data, data + size); }
};

}  // namespace detail

struct DecodeOptions {
  /// Treat libjpeg warnings (corrupt or premature data) as failures.
  bool strict = false;
};

/// Decodes a JPEG byte stream to RGB8 with libjpeg. Throws DecodeFailed.
inline Rgb8Image decode_rgb8(ByteView jpeg, DecodeOptions opts = {}) {
  Rgb8Image out;
  jpeg_decompress_struct cinfo{};
  detail::JpegErrorMgr err{};
  detail::init_error_mgr(err);
  cinfo.err = &err.pub;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    fail(Errc::DecodeFailed, err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, jpeg.data(), static_cast<unsigned long>(jpeg.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.width = cinfo.output_width;
  out.height = cinfo.output_height;
  out.pixels.resize(out.width * out.height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.pixels.data() + std::size_t{cinfo.output_scanline} * out.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  if (opts.strict && err.warnings > 0) fail(Errc::DecodeFailed, std::string("warning: ") + err.message);
  return out;
}

/// Frame dimensions from the header alone.
struct JpegInfo {
  std::size_t width = 0;
  std::size_t height = 0;
  int components = 0;
  bool progressive = false;
};

inline JpegInfo read_jpeg_info(ByteView jpeg) {
  JpegInfo info;
  jpeg_decompress_struct cinfo{};
  detail::JpegErrorMgr err{};
  detail::init_error_mgr(err);
  cinfo.err = &err.pub;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    fail(Errc::DecodeFailed, err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, jpeg.data(), static_cast<unsigned long>(jpeg.size()));
  jpeg_read_header(&cinfo, TRUE);
  info.width = cinfo.image_width;
  info.height = cinfo.image_height;
  info.components = cinfo.num_components;
  info.progressive = cinfo.progressive_mode != 0;
  jpeg_destroy_decompress(&cinfo);
  return info;
}

/// One entry of a progressive scan script (component indices, spectral band
/// Ss..Se, successive-approximation bits Ah/Al).
struct ScanSpec {
  std::vector<int> components;
  int ss = 0;
  int se = 0;
  int ah = 0;
  int al = 0;
};

struct EncodeOptions {
  int quality = 95;
  bool progressive = false;
  bool grayscale = false;
  /// Custom progression; empty selects libjpeg's default script.
  std::vector<ScanSpec> scan_script;
};

namespace detail {

inline std::vector<jpeg_scan_info> to_scan_info(const std::vector<ScanSpec>& script) {
  std::vector<jpeg_scan_info> out;
  out.reserve(script.size());
  for (const auto& s : script) {
    jpeg_scan_info si{};
    si.comps_in_scan = static_cast<int>(s.components.size());
    for (std::size_t c = 0; c < s.components.size() && c < MAX_COMPS_IN_SCAN; ++c) {
      si.component_index[c] = s.components[c];
    }
    si.Ss = s.ss;
    si.Se = s.se;
    si.Ah = s.ah;
    si.Al = s.al;
    out.push_back(si);
  }
  return out;
}

}  // namespace detail

/// Encodes RGB8 pixels (or their luma when `grayscale`) as JPEG.
inline Bytes encode_rgb8(const Rgb8Image& img, const EncodeOptions& opts = {}) {
  std::vector<std::uint8_t> gray;
  if (opts.grayscale) {
    gray.resize(img.width * img.height);
    for (std::size_t k = 0; k < gray.size(); ++k) {
      const std::uint8_t* p = &img.pixels[k * 3];
      gray[k] = static_cast<std::uint8_t>((299 * p[0] + 587 * p[1] + 114 * p[2] + 500) / 1000);
    }
  }
  const std::vector<jpeg_scan_info> script = detail::to_scan_info(opts.scan_script);
  detail::MemDest dest;
  jpeg_compress_struct cinfo{};
  detail::JpegErrorMgr err{};
  detail::init_error_mgr(err);
  cinfo.err = &err.pub;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    fail(Errc::InvalidArgument, std::string("jpeg encode: ") + err.message);
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &dest.data, &dest.size);
  cinfo.image_width = static_cast<JDIMENSION>(img.width);
  cinfo.image_height = static_cast<JDIMENSION>(img.height);
  cinfo.input_components = opts.grayscale ? 1 : 3;
  cinfo.in_color_space = opts.grayscale ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, opts.quality, TRUE);
  if (opts.progressive) {
    if (script.empty()) {
      jpeg_simple_progression(&cinfo);
    } else {
      cinfo.scan_info = script.data();
      cinfo.num_scans = static_cast<int>(script.size());
    }
  }
  jpeg_start_compress(&cinfo, TRUE);
  const std::size_t stride = img.width * (opts.grayscale ? 1 : 3);
  const std::uint8_t* base = opts.grayscale ? gray.data() : img.pixels.data();
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<std::uint8_t*>(base + std::size_t{cinfo.next_scanline} * stride);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  return dest.take();
}

/// Lossless DCT-domain rewrite of any JPEG into a progressive one with
/// libjpeg's default progression (what `jpegtran -progressive` does). Markers
/// other than the frame and tables are dropped.
inline Bytes transcode_progressive(ByteView jpeg, const std::vector<ScanSpec>& scan_script = {}) {
  const std::vector<jpeg_scan_info> script = detail::to_scan_info(scan_script);
  detail::MemDest dest;
  jpeg_decompress_struct src{};
  jpeg_compress_struct dst{};
  detail::JpegErrorMgr err{};
  detail::init_error_mgr(err);
  src.err = &err.pub;
  dst.err = &err.pub;
  volatile bool src_created = false;
  volatile bool dst_created = false;
  if (setjmp(err.jump)) {
    if (dst_created) jpeg_destroy_compress(&dst);
    if (src_created) jpeg_destroy_decompress(&src);
    fail(Errc::DecodeFailed, std::string("transcode: ") + err.message);
  }
  jpeg_create_decompress(&src);
  src_created = true;
  jpeg_create_compress(&dst);
  dst_created = true;
  jpeg_mem_src(&src, jpeg.data(), static_cast<unsigned long>(jpeg.size()));
  jpeg_read_header(&src, TRUE);
  jvirt_barray_ptr* coefs = jpeg_read_coefficients(&src);
  jpeg_copy_critical_parameters(&src, &dst);
  if (script.empty()) {
    jpeg_simple_progression(&dst);
  } else {
    dst.scan_info = script.data();
    dst.num_scans = static_cast<int>(script.size());
  }
  jpeg_mem_dest(&dst, &dest.data, &dest.size);
  jpeg_write_coefficients(&dst, coefs);
  jpeg_finish_compress(&dst);
  jpeg_destroy_compress(&dst);
  jpeg_finish_decompress(&src);
  jpeg_destroy_decompress(&src);
  return dest.take();
}

}  // namespace pcr
