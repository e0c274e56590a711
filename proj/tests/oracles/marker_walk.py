# Copyright 2026 The PCR Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
# ==============================================================================
"""Independent marker walker used to freeze expected scan offsets.

Walks a JPEG byte stream and prints the offset of every SOS marker (0xFFDA)
that is a real marker: stuffed 0xFF00 pairs, RSTn markers and fill bytes
inside entropy-coded data are skipped. Also prints table segment (DHT, DQT,
DRI) offsets, the EOI offset and the total length.

usage: python3 marker_walk.py file.jpg
"""
import sys


def walk(data: bytes):
    sos, tables, eoi = [], [], None
    i = 2  # past SOI
    in_entropy = False
    while i + 1 < len(data):
        if data[i] != 0xFF:
            if not in_entropy:
                raise ValueError(f"garbage at {i}")
            i += 1
            continue
        code = data[i + 1]
        if code == 0xFF:
            i += 1
            continue
        if in_entropy and (code == 0x00 or 0xD0 <= code <= 0xD7):
            i += 2
            continue
        # real marker
        if code == 0xD9:
            eoi = i
            break
        if code == 0xDA:
            sos.append(i)
        elif code in (0xC4, 0xDB, 0xDD):
            tables.append(i)
        length = (data[i + 2] << 8) | data[i + 3]
        i += 2 + length
        in_entropy = code == 0xDA
    return sos, tables, eoi


if __name__ == "__main__":
    blob = open(sys.argv[1], "rb").read()
    s, t, e = walk(blob)
    print("sos", *s)
    print("tables", *t)
    print("eoi", e)
    print("len", len(blob))
