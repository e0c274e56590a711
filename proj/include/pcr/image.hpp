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

#include <cstddef>
#include <cstdint>
#include <vector>

namespace pcr {

/// Interleaved 8-bit RGB, row-major, no padding.
struct Rgb8Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  Rgb8Image() = default;
  Rgb8Image(std::size_t w, std::size_t h) : width(w), height(h), pixels(w * h * 3) {}

  std::uint8_t* at(std::size_t x, std::size_t y) { return &pixels[(y * width + x) * 3]; }
  const std::uint8_t* at(std::size_t x, std::size_t y) const { return &pixels[(y * width + x) * 3]; }

  friend bool operator==(const Rgb8Image&, const Rgb8Image&) = default;
};

/// Single-channel float plane, row-major.
struct Plane {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;

  Plane() = default;
  Plane(std::size_t w, std::size_t h) : width(w), height(h), values(w * h, 0.0) {}

  double& operator()(std::size_t x, std::size_t y) { return values[y * width + x]; }
  double operator()(std::size_t x, std::size_t y) const { return values[y * width + x]; }
};

/// ITU-R BT.601 luma, unrounded, on the 0..255 scale.
inline Plane luminance(const Rgb8Image& img) {
  Plane out(img.width, img.height);
  const std::uint8_t* p = img.pixels.data();
  for (double& v : out.values) {
    v = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    p += 3;
  }
  return out;
}

}  // namespace pcr
