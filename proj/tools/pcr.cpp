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

// pcr: encode, inspect, extract, stats, bench, simulate, sweep, mssim and
// autotune front end.
//
// Exit status: 0 success, 1 usage error, 2 data error.

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "pcr/autotune.hpp"
#include "pcr/codec.hpp"
#include "pcr/container.hpp"
#include "pcr/csv.hpp"
#include "pcr/error.hpp"
#include "pcr/fidelity.hpp"
#include "pcr/io.hpp"
#include "pcr/jpeg_scan.hpp"
#include "pcr/perf_model.hpp"
#include "pcr/pipeline_sim.hpp"
#include "pcr/reader.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

// Output stream that is either stdout ("-" or empty) or a file.
class Output {
 public:
  explicit Output(const std::string& path) {
    if (path.empty() || path == "-") return;
    file_ = std::make_unique<std::ofstream>(path, std::ios::binary);
    if (!*file_) pcr::fail(pcr::Errc::Io, "cannot open " + path + " for writing");
  }
  std::ostream& get() { return file_ ? *file_ : std::cout; }

 private:
  std::unique_ptr<std::ofstream> file_;
};

template <typename F>
void parallel_for(std::size_t n, std::size_t threads, F&& body) {
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) body(i);
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::min(std::max<std::size_t>(threads, 1), n); ++t) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
}

std::size_t default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

// ---------------------------------------------------------------------------
// encode

struct InputImage {
  fs::path path;
  std::string name;  // relative to the input directory, '/' separated
  int label = -1;
};

bool is_jpeg_name(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".jpg" || ext == ".jpeg";
}

std::vector<InputImage> read_manifest(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) pcr::fail(pcr::Errc::Io, "cannot read " + manifest.string());
  const fs::path base = manifest.parent_path();
  std::vector<InputImage> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) {
      pcr::fail(pcr::Errc::InvalidArgument, manifest.string() + ":" + std::to_string(lineno) + ": expected path<TAB>label");
    }
    InputImage img;
    img.name = line.substr(0, tab);
    img.path = base / img.name;
    try {
      std::size_t used = 0;
      img.label = std::stoi(line.substr(tab + 1), &used);
      if (used != line.size() - tab - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      pcr::fail(pcr::Errc::InvalidArgument, manifest.string() + ":" + std::to_string(lineno) + ": bad label");
    }
    out.push_back(std::move(img));
  }
  return out;
}

// Images under top-level subdirectories take the subdirectory's rank among
// the sorted subdirectory names as label; images directly in `dir` get -1.
std::vector<InputImage> scan_input_dir(const fs::path& dir) {
  std::vector<std::string> classes;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) classes.push_back(e.path().filename().string());
  }
  std::sort(classes.begin(), classes.end());
  std::vector<InputImage> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file() || !is_jpeg_name(e.path())) continue;
    InputImage img;
    img.path = e.path();
    const fs::path rel = fs::relative(e.path(), dir);
    img.name = rel.generic_string();
    if (std::distance(rel.begin(), rel.end()) > 1) {
      const auto it = std::lower_bound(classes.begin(), classes.end(), rel.begin()->string());
      img.label = static_cast<int>(it - classes.begin());
    }
    out.push_back(std::move(img));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  return out;
}

void run_transcoder(const std::string& transcoder, const fs::path& in, const fs::path& out) {
  const std::string a = in.string(), b = out.string();
  char* argv[] = {const_cast<char*>(transcoder.c_str()), const_cast<char*>(a.c_str()),
                  const_cast<char*>(b.c_str()), nullptr};
  pid_t pid = 0;
  if (posix_spawnp(&pid, transcoder.c_str(), nullptr, nullptr, argv, environ) != 0) {
    pcr::fail(pcr::Errc::Io, "cannot run transcoder " + transcoder);
  }
  int status = 0;
  if (waitpid(pid, &status, 0) < 0 || !WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    pcr::fail(pcr::Errc::DecodeFailed, "transcoder failed on " + in.string());
  }
}

struct EncodeArgs {
  std::string input, output, transcoder, labels;
  std::size_t per_record = 1024;
  std::size_t groups = pcr::kDefaultGroups;
  std::size_t threads = default_threads();
};

int cmd_encode(const EncodeArgs& a) {
  std::string transcoder = a.transcoder;
  if (transcoder.empty()) {
    if (const char* env = std::getenv("PCR_TRANSCODER")) transcoder = env;
  }
  const fs::path input(a.input);
  fs::path manifest = a.labels;
  if (manifest.empty() && fs::is_regular_file(input / "labels.tsv")) manifest = input / "labels.tsv";
  const auto images = manifest.empty() ? scan_input_dir(input) : read_manifest(manifest);
  if (images.empty()) pcr::fail(pcr::Errc::InvalidArgument, "no JPEG files under " + input.string());

  const fs::path out_dir(a.output);
  fs::create_directories(out_dir);
  std::optional<fs::path> scratch;
  if (!transcoder.empty()) {
    std::string tmpl = (out_dir / ".transcode-XXXXXX").string();
    if (::mkdtemp(tmpl.data()) == nullptr) pcr::fail(pcr::Errc::Io, "cannot create scratch directory");
    scratch = tmpl;
  }

  // Pass 1: validate every image, transcoding baseline inputs if allowed.
  std::vector<fs::path> source(images.size());
  std::vector<std::string> error(images.size());
  std::atomic<std::size_t> transcoded{0};
  parallel_for(images.size(), a.threads, [&](std::size_t i) {
    try {
      const pcr::Bytes bytes = pcr::read_file(images[i].path);
      try {
        pcr::parse_scans(bytes);
        source[i] = images[i].path;
      } catch (const pcr::Error& e) {
        if (e.code() != pcr::Errc::NotProgressive || !scratch) throw;
        const fs::path t = *scratch / (std::to_string(i) + ".jpg");
        run_transcoder(transcoder, images[i].path, t);
        pcr::parse_scans(pcr::read_file(t));
        source[i] = t;
        ++transcoded;
      }
    } catch (const std::exception& e) {
      error[i] = e.what();
    }
  });
  std::vector<std::size_t> accepted;
  std::size_t failed = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (error[i].empty()) {
      accepted.push_back(i);
    } else {
      ++failed;
      std::cerr << "skip " << images[i].name << ": " << error[i] << '\n';
    }
  }

  // Pass 2: one record per `per_record` accepted images.
  const std::size_t n_records = (accepted.size() + a.per_record - 1) / a.per_record;
  std::vector<std::uint64_t> in_bytes(n_records, 0), payload(n_records, 0);
  std::vector<std::string> rec_error(n_records);
  parallel_for(n_records, a.threads, [&](std::size_t r) {
    try {
      const std::size_t first = r * a.per_record;
      const std::size_t last = std::min(accepted.size(), first + a.per_record);
      std::vector<pcr::Bytes> data;
      std::vector<pcr::EncodeItem> items;
      data.reserve(last - first);
      for (std::size_t k = first; k < last; ++k) {
        const std::size_t i = accepted[k];
        data.push_back(pcr::read_file(source[i]));
        in_bytes[r] += data.back().size();
      }
      for (std::size_t k = first; k < last; ++k) {
        const std::size_t i = accepted[k];
        pcr::SampleMeta meta;
        meta.sample_id = k;
        meta.label = images[i].label;
        meta.source_name = images[i].name;
        items.push_back({data[k - first], std::move(meta)});
      }
      const pcr::PcrRecord rec = pcr::encode_record(items, a.groups);
      payload[r] = rec.payload.size();
      char name[32];
      std::snprintf(name, sizeof name, "part-%05zu.pcr", r);
      pcr::FileSink sink(out_dir / name);
      pcr::write_record(rec, sink);
    } catch (const std::exception& e) {
      rec_error[r] = e.what();
    }
  });
  if (scratch) fs::remove_all(*scratch);

  bool record_failed = false;
  for (std::size_t r = 0; r < n_records; ++r) {
    if (!rec_error[r].empty()) {
      std::cerr << "record " << r << ": " << rec_error[r] << '\n';
      record_failed = true;
    }
  }
  std::uint64_t total_in = 0, total_payload = 0;
  for (std::size_t r = 0; r < n_records; ++r) {
    total_in += in_bytes[r];
    total_payload += payload[r];
  }
  const bool lossless = total_in == total_payload && !record_failed;
  std::cout << "encoded " << accepted.size() << " images into " << n_records << " records ("
            << transcoded.load() << " transcoded, " << failed << " skipped); payload bytes " << total_payload
            << (lossless ? " == " : " != ") << "input bytes " << total_in << '\n';
  return lossless && failed == 0 ? 0 : kExitData;
}

// ---------------------------------------------------------------------------
// inspect / extract / stats

struct InspectArgs {
  std::string file, csv, index_csv;
};

int cmd_inspect(const InspectArgs& a) {
  pcr::FileSource src(a.file);
  const auto meta = pcr::read_index(static_cast<const pcr::RandomAccessSource&>(src));
  const pcr::PcrIndex& idx = meta.index;
  const std::uint64_t overhead = pcr::container_overhead(meta.metadata, idx.n_groups);
  // CSV on stdout replaces the human-readable table.
  const bool human = a.csv != "-" && a.index_csv != "-";
  if (human) {
    std::cout << a.file << '\n'
              << "  images " << idx.n_images << ", groups " << idx.n_groups << ", file bytes " << src.size()
              << ", payload bytes " << idx.payload_size() << ", overhead bytes " << overhead << '\n';
    std::cout << "  group      bytes   cumulative  cumulative_mean\n";
  }
  std::uint64_t cum = 0;
  std::vector<std::array<std::string, 4>> rows;
  for (std::size_t g = 1; g <= idx.n_groups; ++g) {
    cum += idx.group_size(g);
    const double mean = static_cast<double>(cum) / static_cast<double>(idx.n_images);
    char line[128];
    std::snprintf(line, sizeof line, "  %5zu %10llu %12llu %16.1f\n", g,
                  static_cast<unsigned long long>(idx.group_size(g)), static_cast<unsigned long long>(cum), mean);
    if (human) std::cout << line;
    rows.push_back({pcr::csv::num(std::uint64_t{g}), pcr::csv::num(idx.group_size(g)), pcr::csv::num(cum),
                    pcr::csv::num(mean)});
  }
  if (!a.csv.empty()) {
    Output out(a.csv);
    pcr::csv::row(out.get(), {"group", "group_bytes", "cumulative_bytes", "cumulative_mean_bytes"});
    for (const auto& r : rows) pcr::csv::row(out.get(), {r[0], r[1], r[2], r[3]});
  }
  if (!a.index_csv.empty()) {
    Output out(a.index_csv);
    std::ostream& os = out.get();
    os << "image,sample_id,label,n_scans,source_name";
    for (std::size_t g = 1; g <= idx.n_groups; ++g) os << ",len_" << g;
    os << '\n';
    for (std::size_t i = 0; i < idx.n_images; ++i) {
      const auto& m = meta.metadata[i];
      os << i << ',' << m.sample_id << ',' << m.label << ',' << unsigned{m.n_scans} << ','
         << pcr::csv::text(m.source_name);
      for (std::size_t g = 1; g <= idx.n_groups; ++g) os << ',' << idx.length(g, i);
      os << '\n';
    }
  }
  return 0;
}

// Keeps extracted files inside `out`; odd names fall back to the sample id.
fs::path output_name(const pcr::SampleMeta& m) {
  const fs::path p(m.source_name);
  bool safe = !m.source_name.empty() && p.is_relative();
  for (const auto& part : p) safe = safe && part != ".." && part != ".";
  return safe ? p : fs::path(std::to_string(m.sample_id) + ".jpg");
}

struct ExtractArgs {
  std::string file, out;
  std::size_t group = 0;
  bool group_set = false;
};

int cmd_extract(const ExtractArgs& a) {
  pcr::FileSource src(a.file);
  const std::size_t G = pcr::read_index(static_cast<const pcr::RandomAccessSource&>(src)).index.n_groups;
  const std::size_t g = a.group_set ? a.group : G;
  if (g > G) pcr::fail(pcr::Errc::FidelityUnavailable, a.file + " has " + std::to_string(G) + " groups");
  pcr::FileSource seq(a.file);
  const pcr::PrefixData prefix = pcr::read_prefix(seq, {g});
  const fs::path out(a.out);
  fs::create_directories(out);
  std::ofstream labels(out / "labels.tsv", std::ios::binary);
  for (std::size_t i = 0; i < prefix.n_images(); ++i) {
    const pcr::AssembledImage img = pcr::assemble(prefix, i, g);
    const fs::path name = output_name(img.meta);
    labels << name.generic_string() << '\t' << img.meta.label << '\n';
    if (g == 0) continue;
    if (name.has_parent_path()) fs::create_directories(out / name.parent_path());
    pcr::write_file(out / name, img.jpeg_bytes);
  }
  std::cout << "extracted " << prefix.n_images() << " images at group " << g << " (" << prefix.bytes_read
            << " bytes read)\n";
  return 0;
}

struct StatsArgs {
  std::string path, out;
};

int cmd_stats(const StatsArgs& a) {
  const auto files = pcr::list_records(a.path);
  if (files.empty()) pcr::fail(pcr::Errc::Io, "no .pcr files under " + a.path);
  const pcr::SizeStats s = pcr::collect_stats(std::span<const fs::path>(files));
  Output out(a.out);
  pcr::write_stats_csv(out.get(), s);
  return 0;
}

// ---------------------------------------------------------------------------
// bench decode

struct BenchArgs {
  std::string dataset;
  std::size_t group = 0;
  bool group_set = false;
  std::size_t threads = 1;
  std::size_t min_images = 1000;
};

int cmd_bench_decode(const BenchArgs& a) {
  std::size_t g = a.group;
  if (!a.group_set) {
    const auto files = pcr::list_records(a.dataset);
    if (files.empty()) pcr::fail(pcr::Errc::Io, "no .pcr files under " + a.dataset);
    pcr::FileSource src(files.front());
    g = pcr::read_index(static_cast<const pcr::RandomAccessSource&>(src)).index.n_groups;
  }
  if (g == 0) pcr::fail(pcr::Errc::InvalidArgument, "group 0 holds no image data to decode");
  std::vector<pcr::Bytes> images;
  pcr::RecordStream stream(a.dataset, {g});
  std::uint64_t bytes = 0;
  while (auto img = stream.next()) {
    bytes += img->jpeg_bytes.size();
    images.push_back(std::move(img->jpeg_bytes));
  }
  if (images.empty()) pcr::fail(pcr::Errc::Io, "dataset holds no images");

  // Cycle over the corpus until at least `min_images` decodes were timed.
  const std::size_t total = std::max(a.min_images, images.size());
  std::atomic<std::size_t> pixels{0};
  const auto t0 = std::chrono::steady_clock::now();
  parallel_for(a.threads, a.threads, [&](std::size_t t) {
    std::size_t px = 0;
    for (std::size_t k = t; k < total; k += a.threads) {
      const pcr::Rgb8Image img = pcr::decode_rgb8(images[k % images.size()]);
      px += img.width * img.height;
    }
    pixels += px;
  });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "decoded " << total << " images at group " << g << " with " << a.threads << " thread(s) in "
            << secs << " s: " << static_cast<double>(total) / secs << " images/s, "
            << static_cast<double>(bytes) / static_cast<double>(images.size()) << " mean bytes/image\n";
  return 0;
}

// ---------------------------------------------------------------------------
// simulate / sweep

pcr::sim::SweepGrid load_grid(const std::string& path) {
  std::ifstream in(path);
  if (!in) pcr::fail(pcr::Errc::Io, "cannot read " + path);
  return pcr::sim::parse_sim_config(in, fs::path(path).parent_path());
}

struct SimArgs {
  std::string config, trace, out;
};

int cmd_simulate(const SimArgs& a) {
  const pcr::sim::SweepGrid grid = load_grid(a.config);
  const pcr::sim::SimTrace t = pcr::sim::simulate(grid.base);
  std::cout << "images/s " << pcr::csv::num(t.images_per_sec) << ", stall fraction "
            << pcr::csv::num(t.stall_fraction) << ", end " << pcr::csv::num(pcr::sim::nanos_to_seconds(t.end_time))
            << " s";
  if (grid.base.dataset_images > 0) {
    std::cout << ", epoch " << pcr::csv::num(pcr::sim::project_time_to_epoch(t, grid.base.dataset_images)) << " s";
  }
  std::cout << '\n';
  if (!a.trace.empty()) {
    Output out(a.trace);
    pcr::sim::write_trace_csv(out.get(), t);
  }
  return 0;
}

int cmd_sweep(const SimArgs& a) {
  pcr::sim::SweepGrid grid = load_grid(a.config);
  if (grid.bandwidths.empty()) {
    grid.bandwidths = {grid.base.bucket.rate * static_cast<double>(grid.base.n_nodes)};
  }
  const auto rows = pcr::sim::sweep(grid);
  Output out(a.out);
  pcr::sim::write_sweep_csv(out.get(), rows);
  bool ok = true;
  for (const auto& r : rows) {
    if (!r.error.empty()) {
      std::cerr << "cell bandwidth=" << pcr::csv::num(r.bandwidth) << " scan_group=" << r.scan_group << ": "
                << r.error << '\n';
      ok = false;
    }
  }
  return ok ? 0 : kExitData;
}

// ---------------------------------------------------------------------------
// mssim / autotune

struct MssimArgs {
  std::string dataset, out;
  std::size_t threads = default_threads();
  std::size_t max_images = 0;
};

int cmd_mssim(const MssimArgs& a) {
  const auto files = pcr::list_records(a.dataset);
  if (files.empty()) pcr::fail(pcr::Errc::Io, "no .pcr files under " + a.dataset);
  const pcr::MssimReport rep =
      pcr::report(std::span<const fs::path>(files), pcr::default_decoder(), {a.threads, a.max_images});
  for (const auto& f : rep.failures) std::cerr << "failed " << f << '\n';
  Output out(a.out);
  pcr::write_report_csv(out.get(), rep);
  std::cerr << rep.n_images << " images scored, " << rep.n_failed << " failed\n";
  return rep.n_images > 0 ? 0 : kExitData;
}

struct AutotuneArgs {
  std::string dataset, out;
  pcr::TunePolicy policy;
  std::size_t epochs = 30;
  std::size_t steps_per_epoch = 5;
  double learning_rate = 0.5;
  std::size_t feature_side = 32;
};

int cmd_autotune(const AutotuneArgs& a) {
  pcr::PcrFeatureSource source(a.dataset, pcr::FeatureSpec{a.feature_side, a.feature_side});
  const std::size_t N = source.n_images();
  const std::size_t G = source.n_groups();
  int max_label = -1;
  std::vector<int> labels(N);
  for (std::size_t i = 0; i < N; ++i) {
    labels[i] = source.label(i);
    if (labels[i] < 0) pcr::fail(pcr::Errc::InvalidArgument, "autotune needs non-negative labels");
    max_label = std::max(max_label, labels[i]);
  }
  pcr::GradModel model(static_cast<std::size_t>(max_label) + 1, source.spec().dim());
  pcr::Autotuner tuner(a.policy, G);

  std::vector<pcr::TuneDecision> decisions;
  for (std::size_t epoch = 0; epoch < a.epochs; ++epoch) {
    // The model is frozen while the tuner scores it, then trains for one
    // epoch on the group it picked.
    decisions.push_back(tuner.step(epoch, model, source));
    const std::size_t g = decisions.back().group;
    pcr::FeatureBatch batch;
    for (std::size_t i = 0; i < N; ++i) batch.push_back(source.features(i, g));
    double loss = 0;
    for (std::size_t s = 0; s < a.steps_per_epoch; ++s) loss = pcr::train_step(model, batch, labels, a.learning_rate);
    std::cerr << "epoch " << epoch << " group " << g << (decisions.back().tuned ? " (tuned)" : "") << " loss "
              << loss << '\n';
  }
  Output out(a.out);
  pcr::write_decisions_csv(out.get(), decisions, G);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Progressive Compressed Records toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  EncodeArgs enc;
  auto* encode = app.add_subcommand("encode", "Pack a directory of progressive JPEGs into .pcr records");
  encode->add_option("--input", enc.input, "Directory of JPEG files")->required()->check(CLI::ExistingDirectory);
  encode->add_option("--output", enc.output, "Directory for the .pcr files")->required();
  encode->add_option("--images-per-record", enc.per_record, "Images per record")
      ->capture_default_str()
      ->check(CLI::Range(std::size_t{1}, std::size_t{1} << 24));
  encode->add_option("--groups", enc.groups, "Scan groups per record")
      ->capture_default_str()
      ->check(CLI::Range(std::size_t{1}, pcr::kMaxGroups));
  encode->add_option("--labels", enc.labels, "Manifest of path<TAB>label lines (default: <input>/labels.tsv)")
      ->check(CLI::ExistingFile);
  encode->add_option("--transcoder", enc.transcoder,
                     "Program run as `<transcoder> in out` to make non-progressive inputs progressive "
                     "(default: $PCR_TRANSCODER)");
  encode->add_option("--threads", enc.threads, "Worker threads")->check(CLI::PositiveNumber);

  InspectArgs ins;
  auto* inspect = app.add_subcommand("inspect", "Print a record's index and group sizes");
  inspect->add_option("file", ins.file, ".pcr file")->required()->check(CLI::ExistingFile);
  inspect->add_option("--csv", ins.csv, "Write the per-group table as CSV ('-' for stdout)");
  inspect->add_option("--index-csv", ins.index_csv, "Write per-image group lengths as CSV ('-' for stdout)");

  ExtractArgs ext;
  auto* extract = app.add_subcommand("extract", "Write every image of a record at one fidelity");
  extract->add_option("file", ext.file, ".pcr file")->required()->check(CLI::ExistingFile);
  auto* ext_group = extract->add_option("--group", ext.group, "Scan group, 0..G (default: G)")
                        ->check(CLI::Range(std::size_t{0}, pcr::kMaxGroups));
  extract->add_option("--out", ext.out, "Output directory")->required();

  StatsArgs st;
  auto* stats = app.add_subcommand("stats", "Cumulative per-group mean sizes of a dataset as CSV");
  stats->add_option("path", st.path, ".pcr file or directory")->required()->check(CLI::ExistingPath);
  stats->add_option("--out", st.out, "CSV destination (default: stdout)");

  BenchArgs bn;
  auto* bench = app.add_subcommand("bench", "Benchmarks");
  bench->require_subcommand(1);
  auto* decode = bench->add_subcommand("decode", "Single-process JPEG decode rate at one fidelity");
  decode->add_option("--dataset", bn.dataset, ".pcr file or directory")->required()->check(CLI::ExistingPath);
  auto* bn_group = decode->add_option("--group", bn.group, "Scan group, 1..G (default: G)")
                       ->check(CLI::Range(std::size_t{1}, pcr::kMaxGroups));
  decode->add_option("--threads", bn.threads, "Decode threads")->capture_default_str()->check(CLI::PositiveNumber);
  decode->add_option("--min-images", bn.min_images, "Minimum decodes to time")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);

  SimArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Run one token-bucket pipeline simulation");
  simulate->add_option("--config", sim.config, "key = value config file")->required()->check(CLI::ExistingFile);
  simulate->add_option("--trace", sim.trace, "Write the per-batch trace as CSV ('-' for stdout)");

  SimArgs sw;
  auto* sweep = app.add_subcommand("sweep", "Simulate every (bandwidth, scan group) cell of a config");
  sweep->add_option("--config", sw.config, "key = value config file")->required()->check(CLI::ExistingFile);
  sweep->add_option("--out", sw.out, "CSV destination (default: stdout)");

  MssimArgs ms;
  auto* mssim = app.add_subcommand("mssim", "Per-group MS-SSIM against full fidelity as CSV");
  mssim->add_option("--dataset", ms.dataset, ".pcr file or directory")->required()->check(CLI::ExistingPath);
  mssim->add_option("--threads", ms.threads, "Worker threads")->check(CLI::PositiveNumber);
  mssim->add_option("--max-images", ms.max_images, "Score at most this many images (0 = all)")
      ->capture_default_str();
  mssim->add_option("--out", ms.out, "CSV destination (default: stdout)");

  AutotuneArgs at;
  auto* autotune = app.add_subcommand("autotune", "Pick scan groups per epoch by gradient similarity");
  autotune->add_option("--dataset", at.dataset, ".pcr file or directory")->required()->check(CLI::ExistingPath);
  autotune->add_option("--threshold", at.policy.threshold, "Minimum acceptable similarity")
      ->capture_default_str()
      ->check(CLI::Range(1e-12, 1.0));
  autotune->add_option("--warmup", at.policy.warmup_epochs, "Epochs before the first tuning")->capture_default_str();
  autotune->add_option("--interval", at.policy.tune_interval_epochs, "Epochs between tunings")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  autotune->add_option("--budget", at.policy.batch_budget, "Images per similarity trial")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  autotune->add_option("--trials", at.policy.trials, "Trials per group")->capture_default_str()->check(CLI::PositiveNumber);
  autotune->add_option("--seed", at.policy.seed, "Batch sampling seed")->capture_default_str();
  autotune->add_option("--epochs", at.epochs, "Epochs to run")->capture_default_str();
  autotune->add_option("--steps-per-epoch", at.steps_per_epoch, "Gradient steps per epoch")->capture_default_str();
  autotune->add_option("--lr", at.learning_rate, "Learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  autotune->add_option("--feature-side", at.feature_side, "Side of the square grayscale features")
      ->capture_default_str()
      ->check(CLI::Range(std::size_t{1}, std::size_t{1024}));
  autotune->add_option("--out", at.out, "CSV destination (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }
  ext.group_set = ext_group->count() > 0;
  bn.group_set = bn_group->count() > 0;

  try {
    if (*encode) return cmd_encode(enc);
    if (*inspect) return cmd_inspect(ins);
    if (*extract) return cmd_extract(ext);
    if (*stats) return cmd_stats(st);
    if (*decode) return cmd_bench_decode(bn);
    if (*simulate) return cmd_simulate(sim);
    if (*sweep) return cmd_sweep(sw);
    if (*mssim) return cmd_mssim(ms);
    if (*autotune) return cmd_autotune(at);
  } catch (const pcr::Error& e) {
    std::cerr << "pcr: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "pcr: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
