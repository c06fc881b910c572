#include "occlunet/rcnn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "occlunet/util/errors.hpp"
#include "occlunet/util/sha256.hpp"

namespace occlunet::rcnn {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'O', 'C', 'N', 'K'};

class Writer {
 public:
  template <typename V>
  void put(V v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(V));
  }
  template <typename V>
  void put_block(std::span<const V> values) {
    put<std::uint64_t>(values.size());
    const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
    bytes_.insert(bytes_.end(), p, p + values.size_bytes());
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::string name) : bytes_(bytes), name_(std::move(name)) {}

  template <typename V>
  V get() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  template <typename V>
  void get_block(std::span<V> dst) {
    const auto n = get<std::uint64_t>();
    if (n != dst.size()) {
      throw CorruptionError(name_ + ": block of " + std::to_string(n) + " values where " +
                            std::to_string(dst.size()) + " expected");
    }
    need(dst.size_bytes());
    std::memcpy(dst.data(), bytes_.data() + pos_, dst.size_bytes());
    pos_ += dst.size_bytes();
  }
  template <typename V>
  std::vector<V> get_vector() {
    const auto n = get<std::uint64_t>();
    need(n * sizeof(V));
    std::vector<V> out(n);
    std::memcpy(out.data(), bytes_.data() + pos_, n * sizeof(V));
    pos_ += n * sizeof(V);
    return out;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CorruptionError(name_ + ": truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::string name_;
};

void put_arch(Writer& w, const ArchSpec& a) {
  w.put<std::uint8_t>(a.lateral);
  w.put<std::uint8_t>(a.topdown);
  for (int v : {a.kernel_size, a.feature_maps, a.input_channels, a.time_steps, a.hidden_layers, a.input_size,
                a.classes}) {
    w.put<std::int32_t>(v);
  }
}

ArchSpec get_arch(Reader& r) {
  ArchSpec a;
  a.lateral = r.get<std::uint8_t>() != 0;
  a.topdown = r.get<std::uint8_t>() != 0;
  for (int* v : {&a.kernel_size, &a.feature_maps, &a.input_channels, &a.time_steps, &a.hidden_layers,
                 &a.input_size, &a.classes}) {
    *v = r.get<std::int32_t>();
  }
  return a;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  Writer w;
  for (char c : kMagic) w.put(c);
  w.put<std::uint32_t>(kCheckpointVersion);
  put_arch(w, ck.arch);
  w.put<std::int64_t>(ck.epochs_completed);

  const auto blocks = ck.params.blocks();
  w.put<std::uint64_t>(blocks.size());
  for (auto b : blocks) w.put_block(b);

  for (const auto& layer : ck.params.layers) {
    const auto& bn = layer.bn;
    w.put<std::uint64_t>(bn.running_mean.size());
    for (std::size_t t = 0; t < bn.running_mean.size(); ++t) {
      w.put_block(std::span<const float>(bn.running_mean[t]));
      w.put_block(std::span<const float>(bn.running_var[t]));
      w.put<std::uint8_t>(bn.initialized[t]);
    }
  }

  const auto& adam = ck.adam;
  w.put(adam.eta);
  w.put(adam.beta1);
  w.put(adam.beta2);
  w.put(adam.eps);
  w.put(adam.step_count);
  w.put<std::uint64_t>(adam.first_moment.size());
  for (std::size_t i = 0; i < adam.first_moment.size(); ++i) {
    w.put_block(std::span<const float>(adam.first_moment[i]));
    w.put_block(std::span<const float>(adam.second_moment[i]));
  }

  auto& bytes = w.bytes();
  const auto digest = util::sha256(bytes);
  bytes.insert(bytes.end(), digest.begin(), digest.end());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string name = path.string();
  constexpr std::size_t kDigest = std::tuple_size_v<util::Digest>;
  if (bytes.size() < sizeof(kMagic) + kDigest) throw CorruptionError(name + ": truncated");
  const std::span<const std::uint8_t> body(bytes.data(), bytes.size() - kDigest);
  const auto digest = util::sha256(body);
  if (!std::equal(digest.begin(), digest.end(), bytes.end() - kDigest)) {
    throw CorruptionError(name + ": checksum mismatch");
  }

  Reader r(body, name);
  for (char c : kMagic) {
    if (r.get<char>() != c) throw CorruptionError(name + ": not a checkpoint");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw CorruptionError(name + ": unsupported version " + std::to_string(version));

  Checkpoint ck;
  ck.arch = get_arch(r);
  try {
    ck.arch.validate();
  } catch (const ConfigError& e) {
    throw CorruptionError(name + ": invalid architecture: " + e.what());
  }
  ck.epochs_completed = r.get<std::int64_t>();

  ck.params = build<float>(ck.arch, 0);
  auto blocks = ck.params.blocks();
  if (r.get<std::uint64_t>() != blocks.size()) throw CorruptionError(name + ": parameter block count");
  for (auto b : blocks) r.get_block(b);

  for (auto& layer : ck.params.layers) {
    auto& bn = layer.bn;
    if (r.get<std::uint64_t>() != bn.running_mean.size()) throw CorruptionError(name + ": batch-norm step count");
    for (std::size_t t = 0; t < bn.running_mean.size(); ++t) {
      r.get_block(std::span<float>(bn.running_mean[t]));
      r.get_block(std::span<float>(bn.running_var[t]));
      bn.initialized[t] = r.get<std::uint8_t>();
    }
  }

  auto& adam = ck.adam;
  adam.eta = r.get<double>();
  adam.beta1 = r.get<double>();
  adam.beta2 = r.get<double>();
  adam.eps = r.get<double>();
  adam.step_count = r.get<std::int64_t>();
  const auto moments = r.get<std::uint64_t>();
  if (moments != 0 && moments != blocks.size()) throw CorruptionError(name + ": optimizer block count");
  for (std::size_t i = 0; i < moments; ++i) {
    adam.first_moment.push_back(r.get_vector<float>());
    adam.second_moment.push_back(r.get_vector<float>());
    if (adam.first_moment.back().size() != blocks[i].size() || adam.second_moment.back().size() != blocks[i].size()) {
      throw CorruptionError(name + ": optimizer block size");
    }
  }
  if (!r.done()) throw CorruptionError(name + ": trailing bytes");
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ArchSpec& expected) {
  auto ck = load_checkpoint(path);
  if (!(ck.arch == expected)) {
    throw ConfigError("checkpoint " + path.string() + " holds " + ck.arch.name() + " (" +
                      std::to_string(ck.arch.input_channels) + " channel), expected " + expected.name() + " (" +
                      std::to_string(expected.input_channels) + " channel)");
  }
  return ck;
}

}  // namespace occlunet::rcnn
