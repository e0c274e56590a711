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

#include "pcr/reader.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "pcr/codec.hpp"
#include "pcr/double_buffer.hpp"
#include "test_support.hpp"

namespace pcr {
namespace {

Errc error_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error";
  return Errc::InvalidArgument;
}

struct Fixture {
  std::vector<testing::CorpusImage> images;
  PcrRecord record;
  Bytes file;
};

const Fixture& five_images() {
  static const Fixture f = [] {
    Fixture x;
    testing::CorpusOptions opts;
    opts.count = 5;
    opts.seed = 77;
    x.images = testing::photo_corpus(opts);
    x.record = encode_record(testing::as_encode_items(x.images), 10);
    VectorSink sink;
    write_record(x.record, sink);
    x.file = sink.take();
    return x;
  }();
  return f;
}

// ---------------------------------------------------------------------------
// read_prefix

TEST(ReadPrefix, GroupZeroReadsNoPayload) {
  const auto& f = five_images();
  testing::CountingSource src(f.file);
  const PrefixData p = read_prefix(src, {0});
  EXPECT_EQ(src.delivered(), f.record.index.payload_offset());
  EXPECT_EQ(src.high_water(), f.record.index.payload_offset());
  EXPECT_EQ(p.bytes_read, f.record.index.payload_offset());
  EXPECT_TRUE(p.payload.empty());
  for (std::size_t i = 0; i < 5; ++i) {
    const AssembledImage img = assemble(p, i, 0);
    EXPECT_TRUE(img.jpeg_bytes.empty());
    EXPECT_EQ(img.meta.label, f.images[i].label);
  }
}

TEST(ReadPrefix, AllGroupsReadsWholeFile) {
  const auto& f = five_images();
  testing::CountingSource src(f.file);
  const PrefixData p = read_prefix(src, {10});
  EXPECT_EQ(src.delivered(), f.file.size());
  EXPECT_EQ(p.bytes_read, f.file.size());
}

TEST(ReadPrefix, GroupFiveReadsExactlyThroughGroupFive) {
  const auto& f = five_images();
  // Sizes as recorded by the encoder.
  std::uint64_t want = kHeaderSize + f.record.index.metadata_len + f.record.index.index_len();
  for (std::size_t g = 1; g <= 5; ++g) want += f.record.group(g).size();
  testing::CountingSource src(f.file);
  const PrefixData p = read_prefix(src, {5});
  EXPECT_EQ(src.delivered(), want);
  EXPECT_EQ(src.high_water(), want);
  EXPECT_EQ(p.bytes_read, want);
}

TEST(ReadPrefix, SingleForwardPass) {
  const auto& f = five_images();
  for (std::size_t g = 0; g <= 10; ++g) {
    testing::CountingSource src(f.file);
    read_prefix(src, {g});
    std::uint64_t pos = 0;
    for (const auto& r : src.ranges()) {
      EXPECT_EQ(r.offset, pos);  // contiguous, never backwards
      pos = r.offset + r.length;
    }
  }
}

TEST(ReadPrefix, PrefixProperty) {
  const auto& f = five_images();
  std::uint64_t prev = 0;
  for (std::size_t g = 0; g <= 10; ++g) {
    MemorySource src(f.file);
    const PrefixData p = read_prefix(src, {g});
    EXPECT_GE(p.bytes_read, prev);
    prev = p.bytes_read;
    EXPECT_TRUE(std::equal(p.payload.begin(), p.payload.end(),
                           f.file.begin() + static_cast<std::ptrdiff_t>(f.record.index.payload_offset())));
  }
}

TEST(ReadPrefix, Errors) {
  const auto& f = five_images();
  MemorySource a(f.file);
  EXPECT_EQ(error_of([&] { read_prefix(a, {11}); }), Errc::FidelityUnavailable);

  const std::size_t cut = f.record.index.prefix_end(3) - 1;
  MemorySource b(ByteView(f.file).first(cut));
  EXPECT_EQ(error_of([&] { read_prefix(b, {3}); }), Errc::TruncatedPayload);
  MemorySource c(ByteView(f.file).first(cut));
  EXPECT_NO_THROW(read_prefix(c, {2}));
}

// ---------------------------------------------------------------------------
// assemble

TEST(Assemble, FullFidelityIsBitIdentical) {
  const auto& f = five_images();
  MemorySource src(f.file);
  const PrefixData p = read_prefix(src, {10});
  for (std::size_t i = 0; i < 5; ++i) {
    const AssembledImage img = assemble(p, i, 10);
    EXPECT_EQ(img.jpeg_bytes, f.images[i].jpeg);
    EXPECT_EQ(img.groups_used, 10u);
  }
}

TEST(Assemble, LengthsMatchEncoderScanMaps) {
  const auto& f = five_images();
  MemorySource src(f.file);
  const PrefixData p = read_prefix(src, {10});
  for (std::size_t i = 0; i < 5; ++i) {
    const ScanMap map = parse_scans(f.images[i].jpeg);
    for (std::size_t g = 1; g <= 10; ++g) {
      const AssembledImage img = assemble(p, i, g);
      const std::size_t through = map.scans[g - 1].end();
      const bool appended = g < 10;
      EXPECT_EQ(img.jpeg_bytes.size(), through + (appended ? 2 : 0)) << i << " g" << g;
      EXPECT_TRUE(std::equal(img.jpeg_bytes.begin(), img.jpeg_bytes.begin() + static_cast<std::ptrdiff_t>(through),
                             f.images[i].jpeg.begin()));
      EXPECT_EQ(img.jpeg_bytes[img.jpeg_bytes.size() - 2], 0xFF);
      EXPECT_EQ(img.jpeg_bytes.back(), 0xD9);
    }
  }
}

TEST(Assemble, EveryPrefixDecodesAtFullSize) {
  const auto& f = five_images();
  MemorySource src(f.file);
  const PrefixData p = read_prefix(src, {10});
  for (std::size_t i = 0; i < 5; ++i) {
    const JpegInfo info = read_jpeg_info(f.images[i].jpeg);
    for (std::size_t g = 1; g <= 10; ++g) {
      const Rgb8Image img = decode_rgb8(assemble(p, i, g).jpeg_bytes, {.strict = true});
      EXPECT_EQ(img.width, info.width);
      EXPECT_EQ(img.height, info.height);
    }
  }
}

TEST(Assemble, GroupOneIsHeaderScanOneAndEoi) {
  const auto& f = five_images();
  MemorySource src(f.file);
  const PrefixData p = read_prefix(src, {1});
  const ScanMap map = parse_scans(f.images[0].jpeg);
  Bytes want(f.images[0].jpeg.begin(), f.images[0].jpeg.begin() + static_cast<std::ptrdiff_t>(map.scans[0].end()));
  want.push_back(0xFF);
  want.push_back(0xD9);
  EXPECT_EQ(assemble(p, 0, 1).jpeg_bytes, want);
}

TEST(Assemble, ShortImageAtHighGroupIsNotDoubleTerminated) {
  const Bytes four = testing::synthetic_progressive(4, 5);
  const Bytes ten = testing::synthetic_progressive(10, 6);
  const std::vector<EncodeItem> items = {{ten, SampleMeta{0, 0, "a", 0}}, {four, SampleMeta{1, 1, "b", 0}}};
  const PcrRecord rec = encode_record(items, 10);
  VectorSink sink;
  write_record(rec, sink);
  MemorySource src(sink.data());
  const PrefixData p = read_prefix(src, {10});
  for (std::size_t g = 4; g <= 10; ++g) EXPECT_EQ(assemble(p, 1, g).jpeg_bytes, four);
}

TEST(Assemble, ForeignTailStillGetsEoi) {
  Bytes odd = testing::synthetic_progressive(3, 8);
  odd.push_back(0x00);  // bytes after EOI
  const std::vector<EncodeItem> items = {{odd, SampleMeta{0, 0, "odd", 0}}};
  const PcrRecord rec = encode_record(items, 3);
  VectorSink sink;
  write_record(rec, sink);
  MemorySource src(sink.data());
  const PrefixData p = read_prefix(src, {3});
  const Bytes out = assemble(p, 0, 3).jpeg_bytes;
  EXPECT_EQ(out.size(), odd.size() + 2);
  EXPECT_TRUE(ends_with_eoi(out));
}

TEST(Assemble, Errors) {
  const auto& f = five_images();
  MemorySource src(f.file);
  PrefixData p = read_prefix(src, {3});
  EXPECT_EQ(error_of([&] { assemble(p, 5, 1); }), Errc::InvalidArgument);
  EXPECT_EQ(error_of([&] { assemble(p, 0, 4); }), Errc::FidelityUnavailable);
  p.meta.index.lengths[2] = 0;  // group 1 of image 2
  EXPECT_EQ(error_of([&] { assemble(p, 2, 1); }), Errc::ZeroLengthImage);
}

// ---------------------------------------------------------------------------
// Double buffer contract: the consumer never sees a slot mid-write.

TEST(DoubleBufferContract, ConsumerNeverObservesPoison) {
  struct Slot {
    std::vector<std::uint32_t> data = std::vector<std::uint32_t>(512);
    std::atomic<bool> writing{false};
    std::uint32_t round = 0;
  };
  constexpr std::uint32_t kPoison = 0xDEADBEEF;
  constexpr std::uint32_t kRounds = 3000;
  DoubleBuffer<Slot> buf;
  std::atomic<bool> violation{false};

  std::thread producer([&] {
    for (std::uint32_t r = 1; r <= kRounds; ++r) {
      Slot* s = buf.acquire_for_fill();
      ASSERT_NE(s, nullptr);
      s->writing = true;
      std::fill(s->data.begin(), s->data.end(), kPoison);
      std::this_thread::yield();
      std::fill(s->data.begin(), s->data.end(), r);
      s->round = r;
      s->writing = false;
      buf.publish();
    }
    buf.finish();
  });

  std::uint32_t expect = 1;
  while (Slot* s = buf.acquire_for_drain()) {
    if (s->writing) violation = true;
    for (std::uint32_t v : s->data) {
      if (v != expect) violation = true;
    }
    if (s->round != expect) violation = true;
    std::this_thread::yield();
    if (s->writing) violation = true;
    ++expect;
    buf.release();
  }
  producer.join();
  EXPECT_FALSE(violation.load());
  EXPECT_EQ(expect, kRounds + 1);
}

TEST(DoubleBufferContract, CloseWakesBothSides) {
  DoubleBuffer<int> buf;
  ASSERT_NE(buf.acquire_for_fill(), nullptr);
  buf.publish();
  ASSERT_NE(buf.acquire_for_fill(), nullptr);
  buf.publish();
  std::thread blocked([&] { EXPECT_EQ(buf.acquire_for_fill(), nullptr); });
  buf.close();
  blocked.join();
  EXPECT_EQ(buf.acquire_for_drain(), nullptr);
}

// ---------------------------------------------------------------------------
// RecordStream

struct Directory {
  testing::TempDir dir{"pcr-reader"};
  std::vector<Bytes> sources;  // record order
};

// 3 records x 4 images.
const Directory& three_records() {
  static Directory x;
  static const bool built = [] {
    testing::CorpusOptions opts;
    opts.count = 12;
    opts.seed = 5;
    opts.max_side = 160;
    const auto images = testing::photo_corpus(opts);
    for (std::size_t r = 0; r < 3; ++r) {
      const PcrRecord rec = encode_record(testing::as_encode_items(images, r * 4, 4), 10);
      FileSink sink(x.dir / ("r" + std::to_string(r) + ".pcr"));
      write_record(rec, sink);
    }
    for (const auto& img : images) x.sources.push_back(img.jpeg);
    return true;
  }();
  (void)built;
  return x;
}

TEST(RecordStream, DirectoryAtFullFidelityRoundTrips) {
  const auto& d = three_records();
  RecordStream stream(d.dir.path(), {10});
  std::size_t k = 0;
  while (auto img = stream.next()) {
    ASSERT_LT(k, d.sources.size());
    EXPECT_EQ(img->jpeg_bytes, d.sources[k]) << k;
    EXPECT_EQ(img->meta.sample_id, k);
    ++k;
  }
  EXPECT_EQ(k, 12u);
  std::uint64_t total = 0;
  for (const auto& f : list_records(d.dir.path())) total += std::filesystem::file_size(f);
  EXPECT_EQ(stream.bytes_read(), total);
}

TEST(RecordStream, SingleFilePath) {
  const auto& d = three_records();
  RecordStream stream(d.dir / "r1.pcr", {3});
  std::size_t k = 0;
  while (auto img = stream.next()) {
    EXPECT_EQ(img->meta.sample_id, 4 + k);
    EXPECT_EQ(img->groups_used, 3u);
    ++k;
  }
  EXPECT_EQ(k, 4u);
}

TEST(RecordStream, EarlyDestructionJoinsProducer) {
  const auto& d = three_records();
  for (int i = 0; i < 20; ++i) {
    RecordStream stream(d.dir.path(), {10});
    ASSERT_TRUE(stream.next().has_value());
  }
}

TEST(RecordStream, GroupBeyondRecordNamesTheFile) {
  testing::TempDir dir;
  const auto& d = three_records();
  std::filesystem::copy_file(d.dir / "r0.pcr", dir / "a.pcr");
  const std::vector<EncodeItem> items = {{d.sources[4], SampleMeta{0, 0, "x", 0}}};
  FileSink sink(dir / "b.pcr");
  write_record(encode_record(items, 4), sink);

  RecordStream stream(dir.path(), {6});
  try {
    while (stream.next()) {
    }
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::FidelityUnavailable);
    EXPECT_NE(std::string(e.what()).find("b.pcr"), std::string::npos) << e.what();
  }
}

TEST(RecordStream, PermissiveSkipsBrokenRecords) {
  testing::TempDir dir;
  const auto& d = three_records();
  std::filesystem::copy_file(d.dir / "r0.pcr", dir / "a.pcr");
  Bytes broken = read_file(d.dir / "r1.pcr");
  broken[30] ^= 1;
  write_file(dir / "b.pcr", broken);
  std::filesystem::copy_file(d.dir / "r2.pcr", dir / "c.pcr");

  {
    RecordStream strict(dir.path(), {10});
    std::size_t seen = 0;
    EXPECT_EQ(error_of([&] {
                while (strict.next()) ++seen;
              }),
              Errc::CorruptIndex);
    EXPECT_EQ(seen, 4u);
  }

  RecordStream lenient(dir.path(), {10}, {.permissive = true});
  std::vector<std::uint64_t> ids;
  while (auto img = lenient.next()) ids.push_back(img->meta.sample_id);
  EXPECT_EQ(ids, (std::vector<std::uint64_t>{0, 1, 2, 3, 8, 9, 10, 11}));
  ASSERT_EQ(lenient.failures().size(), 1u);
  EXPECT_EQ(lenient.failures()[0].code, Errc::CorruptIndex);
  EXPECT_EQ(lenient.failures()[0].file.filename(), "b.pcr");
}

TEST(RecordStream, EmptyDirectoryYieldsNothing) {
  testing::TempDir dir;
  RecordStream stream(dir.path(), {1});
  EXPECT_FALSE(stream.next().has_value());
}

TEST(RecordStream, DirectIoReadsSameBytes) {
  const auto& d = three_records();
  IterateOptions opts;
  opts.file.direct_io = true;
  RecordStream stream(d.dir.path(), {10}, opts);
  std::size_t k = 0;
  while (auto img = stream.next()) EXPECT_EQ(img->jpeg_bytes, d.sources[k++]);
  EXPECT_EQ(k, 12u);
}

}  // namespace
}  // namespace pcr
