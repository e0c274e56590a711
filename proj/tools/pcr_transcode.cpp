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

// pcr-transcode IN OUT
//
// Lossless baseline -> progressive rewrite in the coefficient domain with
// libjpeg's default progression, the same thing `jpegtran -progressive`
// does. Usable as `pcr encode --transcoder pcr-transcode`.

#include <iostream>

#include "pcr/codec.hpp"
#include "pcr/io.hpp"

int main(int argc, char** argv) {
  if (argc != 3) {
    std::cerr << "usage: pcr-transcode IN OUT\n";
    return 1;
  }
  try {
    const pcr::Bytes in = pcr::read_file(argv[1]);
    pcr::write_file(argv[2], pcr::transcode_progressive(in));
  } catch (const std::exception& e) {
    std::cerr << "pcr-transcode: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
