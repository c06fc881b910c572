#include "occlunet/digits/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "occlunet/util/errors.hpp"
#include "occlunet/util/parallel.hpp"
#include "occlunet/util/sha256.hpp"

namespace occlunet::digits {
namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'S', 'D', 'I', 'G'};
constexpr std::size_t kHeaderSize = 4 + 2 + 4 + 3;
constexpr int kMaxOccluders = 4;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::string histogram_str(const std::array<int, 10>& h) {
  std::string s;
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(h[i]);
  }
  return s;
}

std::array<int, 10> parse_histogram(const std::string& s) {
  std::array<int, 10> h{};
  std::istringstream in(s);
  std::string item;
  std::size_t i = 0;
  while (std::getline(in, item, ',')) {
    if (i >= h.size()) throw ConfigError("label histogram has more than 10 entries");
    h[i++] = std::stoi(item);
  }
  if (i != h.size()) throw ConfigError("label histogram has fewer than 10 entries");
  return h;
}

std::string scene_csv_header() {
  std::string h = "index,label,seed,occluders";
  for (int i = 1; i <= kMaxOccluders; ++i) {
    const auto k = std::to_string(i);
    h += ",occ" + k + "_digit,occ" + k + "_depth,occ" + k + "_x";
  }
  return h + "\n";
}

std::string scene_csv_row(int index, const SceneSpec& s) {
  std::string row = std::to_string(index) + "," + std::to_string(s.target_class) + "," +
                    std::to_string(s.seed) + "," + std::to_string(s.occluders.size());
  for (int i = 0; i < kMaxOccluders; ++i) {
    if (i < static_cast<int>(s.occluders.size())) {
      const auto& o = s.occluders[i];
      row += "," + std::to_string(o.digit) + "," + util::format_double(o.depth) + "," +
             util::format_double(o.x_offset);
    } else {
      row += ",,,";
    }
  }
  return row + "\n";
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<SceneSpec> read_scene_csv(const fs::path& path, int expected) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line + "\n" != scene_csv_header()) {
    throw CorruptionError("unexpected header in " + path.string());
  }
  std::vector<SceneSpec> scenes;
  scenes.reserve(expected);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 4 + 3 * kMaxOccluders) throw CorruptionError("malformed row in " + path.string());
    try {
      SceneSpec s;
      if (std::stoi(f[0]) != static_cast<int>(scenes.size())) throw CorruptionError("row index out of order");
      s.target_class = std::stoi(f[1]);
      s.seed = std::stoull(f[2]);
      const int count = std::stoi(f[3]);
      for (int i = 0; i < count; ++i) {
        s.occluders.push_back({std::stoi(f[4 + 3 * i]), std::stod(f[5 + 3 * i]), std::stod(f[6 + 3 * i])});
      }
      scenes.push_back(std::move(s));
    } catch (const std::logic_error&) {
      throw CorruptionError("malformed row in " + path.string());
    }
  }
  if (static_cast<int>(scenes.size()) != expected) {
    throw CorruptionError(path.string() + ": expected " + std::to_string(expected) + " rows, found " +
                          std::to_string(scenes.size()));
  }
  return scenes;
}

// Removes the registered files unless release() is called.
class PartialFiles {
 public:
  void add(fs::path p) { paths_.push_back(std::move(p)); }
  void release() { paths_.clear(); }
  ~PartialFiles() {
    std::error_code ec;
    for (const auto& p : paths_) fs::remove(p, ec);
  }

 private:
  std::vector<fs::path> paths_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

std::string split_name(SplitKind split) { return split == SplitKind::train ? "train" : "test"; }

void DatasetSpec::validate() const {
  rig.validate();
  if (occluders != "2" && occluders != "3" && occluders != "4" && occluders != "all") {
    throw ConfigError("occluders must be 2, 3, 4 or all, got '" + occluders + "'");
  }
  if (train_count <= 0 || test_count <= 0) throw ConfigError("dataset counts must be positive");
}

int DatasetSpec::occluder_count_for(int index, int count) const {
  if (occluders != "all") return std::stoi(occluders);
  const int base = count / 3, rem = count % 3;
  int start = 0;
  for (int share = 0; share < 3; ++share) {
    const int size = base + (share < rem ? 1 : 0);
    if (index < start + size) return 2 + share;
    start += size;
  }
  return 4;
}

util::KeyValue rig_to_keyvalue(const CameraRig& rig) {
  util::KeyValue kv;
  kv.set("rig.interocular", rig.interocular);
  kv.set("rig.target_depth", rig.target_depth);
  kv.set("rig.canvas_world_width", rig.canvas_world_width);
  kv.set("rig.render_resolution", rig.render_resolution);
  kv.set("rig.output_resolution", rig.output_resolution);
  kv.set("rig.channels", rig.channels);
  kv.set("rig.converged", rig.converged);
  kv.set("rig.digit_height", rig.digit_height);
  kv.set("rig.floor_drop", rig.floor_drop);
  kv.set("rig.depth_step", rig.depth_step);
  kv.set("rig.x_range_fraction", rig.x_range_fraction);
  return kv;
}

CameraRig rig_from_keyvalue(const util::KeyValue& kv) {
  CameraRig rig;
  rig.interocular = kv.get_double("rig.interocular");
  rig.target_depth = kv.get_double("rig.target_depth");
  rig.canvas_world_width = kv.get_double("rig.canvas_world_width");
  rig.render_resolution = static_cast<int>(kv.get_int("rig.render_resolution"));
  rig.output_resolution = static_cast<int>(kv.get_int("rig.output_resolution"));
  rig.channels = static_cast<int>(kv.get_int("rig.channels"));
  rig.converged = kv.get_bool("rig.converged");
  rig.digit_height = kv.get_double("rig.digit_height");
  rig.floor_drop = kv.get_double("rig.floor_drop");
  rig.depth_step = kv.get_double("rig.depth_step");
  rig.x_range_fraction = kv.get_double("rig.x_range_fraction");
  return rig;
}

util::KeyValue DatasetManifest::to_keyvalue() const {
  util::KeyValue kv = rig_to_keyvalue(spec.rig);
  kv.set("format_version", static_cast<int>(format_version));
  kv.set("occluders", spec.occluders);
  kv.set("occlusion_side", std::string(spec.side == OcclusionSide::left ? "left" : "both"));
  kv.set("train_count", spec.train_count);
  kv.set("test_count", spec.test_count);
  kv.set("seed", std::to_string(spec.seed));
  kv.set("train_sha256", train_sha256);
  kv.set("test_sha256", test_sha256);
  kv.set("train_csv_sha256", train_csv_sha256);
  kv.set("test_csv_sha256", test_csv_sha256);
  kv.set("train_label_histogram", histogram_str(train_label_histogram));
  kv.set("test_label_histogram", histogram_str(test_label_histogram));
  return kv;
}

DatasetManifest DatasetManifest::from_keyvalue(const util::KeyValue& kv) {
  DatasetManifest m;
  m.format_version = static_cast<std::uint16_t>(kv.get_int("format_version"));
  if (m.format_version != kDatasetFormatVersion) {
    throw CorruptionError("unsupported dataset format version " + std::to_string(m.format_version));
  }
  m.spec.rig = rig_from_keyvalue(kv);
  m.spec.occluders = kv.get("occluders");
  m.spec.side = kv.get("occlusion_side") == "left" ? OcclusionSide::left : OcclusionSide::both;
  m.spec.train_count = static_cast<int>(kv.get_int("train_count"));
  m.spec.test_count = static_cast<int>(kv.get_int("test_count"));
  m.spec.seed = std::stoull(kv.get("seed"));
  m.train_sha256 = kv.get("train_sha256");
  m.test_sha256 = kv.get("test_sha256");
  m.train_csv_sha256 = kv.get("train_csv_sha256");
  m.test_csv_sha256 = kv.get("test_csv_sha256");
  m.train_label_histogram = parse_histogram(kv.get("train_label_histogram"));
  m.test_label_histogram = parse_histogram(kv.get("test_label_histogram"));
  return m;
}

SceneSpec generate_scene(const DatasetSpec& spec, SplitKind split, int index) {
  const int count = split == SplitKind::train ? spec.train_count : spec.test_count;
  const std::uint64_t seed = derive_sample_seed(spec.seed, static_cast<std::uint32_t>(split),
                                                static_cast<std::uint64_t>(index));
  Pcg32 rng(seed, static_cast<std::uint64_t>(index));
  return sample_scene(rng, spec.occluder_count_for(index, count), spec.rig, spec.side, seed);
}

void write_image_file(const fs::path& path, int height, int width, int channels,
                      std::span<const std::uint8_t> images) {
  if (height <= 0 || height > 255 || width <= 0 || width > 255 || channels <= 0 || channels > 255) {
    throw ConfigError("image file: dimensions must fit in one byte");
  }
  const std::size_t per = static_cast<std::size_t>(height) * width * channels;
  if (images.size() % per != 0) throw ShapeError("image file: payload is not a whole number of images");
  std::string header(kMagic, 4);
  put_u16(header, kDatasetFormatVersion);
  put_u32(header, static_cast<std::uint32_t>(images.size() / per));
  header.push_back(static_cast<char>(height));
  header.push_back(static_cast<char>(width));
  header.push_back(static_cast<char>(channels));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(images.data()), static_cast<std::streamsize>(images.size()));
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

ImageFile read_image_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::uint8_t header[kHeaderSize];
  in.read(reinterpret_cast<char*>(header), kHeaderSize);
  if (in.gcount() != static_cast<std::streamsize>(kHeaderSize)) throw CorruptionError(path.string() + ": truncated header");
  if (!std::equal(kMagic, kMagic + 4, header)) throw CorruptionError(path.string() + ": bad magic");
  const std::uint16_t version = static_cast<std::uint16_t>(header[4] | (header[5] << 8));
  if (version != kDatasetFormatVersion) throw CorruptionError(path.string() + ": unsupported version");
  ImageFile f;
  f.count = static_cast<int>(static_cast<std::uint32_t>(header[6]) | (static_cast<std::uint32_t>(header[7]) << 8) |
                             (static_cast<std::uint32_t>(header[8]) << 16) |
                             (static_cast<std::uint32_t>(header[9]) << 24));
  f.height = header[10];
  f.width = header[11];
  f.channels = header[12];
  const std::size_t payload = static_cast<std::size_t>(f.count) * f.height * f.width * f.channels;
  f.images.resize(payload);
  in.read(reinterpret_cast<char*>(f.images.data()), static_cast<std::streamsize>(payload));
  if (static_cast<std::size_t>(in.gcount()) != payload) throw CorruptionError(path.string() + ": truncated payload");
  if (in.peek() != std::char_traits<char>::eof()) throw CorruptionError(path.string() + ": trailing bytes");
  return f;
}

DatasetManifest generate_dataset(const DatasetSpec& spec, const fs::path& out_dir) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  const auto& atlas = GlyphAtlas::embedded();
  DatasetManifest manifest;
  manifest.spec = spec;
  PartialFiles partial;

  for (SplitKind split : {SplitKind::train, SplitKind::test}) {
    const int count = split == SplitKind::train ? spec.train_count : spec.test_count;
    const int res = spec.rig.output_resolution;
    const std::size_t per = static_cast<std::size_t>(res) * res * spec.rig.channels;
    std::vector<std::uint8_t> images(per * count);
    std::vector<SceneSpec> scenes(count);
    util::parallel_for(static_cast<std::size_t>(count), [&](std::size_t i) {
      scenes[i] = generate_scene(spec, split, static_cast<int>(i));
      const auto img = render_scene(scenes[i], spec.rig, atlas);
      std::copy(img.begin(), img.end(), images.begin() + static_cast<std::ptrdiff_t>(i * per));
    });

    std::string csv = scene_csv_header();
    std::array<int, 10> hist{};
    for (int i = 0; i < count; ++i) {
      csv += scene_csv_row(i, scenes[i]);
      ++hist[scenes[i].target_class];
    }

    const auto name = split_name(split);
    const auto sdig = out_dir / (name + ".sdig");
    const auto csv_path = out_dir / (name + ".csv");
    partial.add(sdig);
    partial.add(csv_path);
    write_image_file(sdig, res, res, spec.rig.channels, images);
    write_text(csv_path, csv);
    const auto sdig_hash = util::to_hex(util::sha256_file(sdig));
    const auto csv_hash = util::to_hex(util::sha256_file(csv_path));
    if (split == SplitKind::train) {
      manifest.train_sha256 = sdig_hash;
      manifest.train_csv_sha256 = csv_hash;
      manifest.train_label_histogram = hist;
    } else {
      manifest.test_sha256 = sdig_hash;
      manifest.test_csv_sha256 = csv_hash;
      manifest.test_label_histogram = hist;
    }
  }
  const auto manifest_path = out_dir / "manifest.txt";
  partial.add(manifest_path);
  manifest.to_keyvalue().write(manifest_path);
  partial.release();
  return manifest;
}

Dataset::Dataset(DatasetManifest manifest, SplitKind split, int height, int width, int channels,
                 std::vector<std::uint8_t> images, std::vector<SceneSpec> scenes)
    : manifest_(std::move(manifest)),
      split_(split),
      height_(height),
      width_(width),
      channels_(channels),
      images_(std::move(images)),
      scenes_(std::move(scenes)) {
  if (images_.size() != image_size() * scenes_.size()) throw ShapeError("dataset: image payload size");
}

StereoSample Dataset::sample(int i) const {
  if (i < 0 || i >= size()) throw ShapeError("dataset: sample index out of range");
  return {std::span<const std::uint8_t>(images_).subspan(i * image_size(), image_size()), scenes_[i].target_class,
          &scenes_[i]};
}

nn::Tensor<float> Dataset::to_tensor(std::span<const int> indices) const {
  nn::Tensor<float> t(nn::Shape{static_cast<int>(indices.size()), channels_, height_, width_});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto img = sample(indices[k]).image;
    float* dst = t.sample(static_cast<int>(k)).data();
    for (std::size_t i = 0; i < img.size(); ++i) dst[i] = static_cast<float>(img[i]) / 255.0f;
  }
  return t;
}

std::vector<int> Dataset::labels(std::span<const int> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(label(i));
  return out;
}

std::array<int, 10> Dataset::label_histogram() const {
  std::array<int, 10> h{};
  for (const auto& s : scenes_) ++h[s.target_class];
  return h;
}

Dataset read_dataset(const fs::path& dir, SplitKind split) {
  const auto manifest = DatasetManifest::from_keyvalue(util::KeyValue::read(dir / "manifest.txt"));
  const auto name = split_name(split);
  const auto sdig = dir / (name + ".sdig");
  const auto csv_path = dir / (name + ".csv");
  const auto& expect_sdig = split == SplitKind::train ? manifest.train_sha256 : manifest.test_sha256;
  const auto& expect_csv = split == SplitKind::train ? manifest.train_csv_sha256 : manifest.test_csv_sha256;
  if (util::to_hex(util::sha256_file(sdig)) != expect_sdig) {
    throw CorruptionError(sdig.string() + ": checksum mismatch");
  }
  if (util::to_hex(util::sha256_file(csv_path)) != expect_csv) {
    throw CorruptionError(csv_path.string() + ": checksum mismatch");
  }
  auto file = read_image_file(sdig);
  const int expected = split == SplitKind::train ? manifest.spec.train_count : manifest.spec.test_count;
  if (file.count != expected) throw CorruptionError(sdig.string() + ": count disagrees with manifest");
  auto scenes = read_scene_csv(csv_path, file.count);
  return Dataset(manifest, split, file.height, file.width, file.channels, std::move(file.images), std::move(scenes));
}

}  // namespace occlunet::digits
