#include <doctest.h>

#include <cmath>
#include <algorithm>
#include <fstream>
#include <random>

#include "occlunet/rcnn/arch.hpp"
#include "occlunet/rcnn/checkpoint.hpp"
#include "occlunet/rcnn/network.hpp"
#include "occlunet/util/errors.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

using namespace occlunet;
using namespace occlunet::rcnn;
using nn::Shape;
using nn::Tensor;

namespace {

long long block_elements(const NetParams<double>& p) {
  long long n = 0;
  for (const auto& b : p.blocks()) n += static_cast<long long>(b.size());
  return n;
}

ArchSpec tiny_blt() {
  ArchSpec a;
  a.lateral = true;
  a.topdown = true;
  a.feature_maps = 4;
  a.input_size = 8;
  a.time_steps = 2;
  return a;
}

double loss_of(NetParams<double>& p, const ArchSpec& arch, const Tensor<double>& x, const Tensor<double>& y,
               std::vector<Tensor<double>>* grads = nullptr, UnrollState<double>* keep = nullptr) {
  auto state = forward(p, arch, x, nn::BnMode::train);
  const auto probs = state.all_probs();
  const double loss = nn::cross_entropy_time_loss<double>(probs, y, grads);
  if (keep) *keep = std::move(state);
  return loss;
}

void randomize_readout(NetParams<double>& p, std::mt19937_64& rng) {
  p.readout.weights = oracle::random_tensor(p.readout.weights.shape(), rng);
}

template <typename A, typename B>
bool same_values(const A& a, const B& b) {
  return std::ranges::equal(a, b);
}

}  // namespace

TEST_CASE("parameter counts reproduce the published table") {
  struct Row {
    ModelKind kind;
    long long mono, stereo;
  };
  const Row rows[] = {{ModelKind::b, 9898, 10186},   {ModelKind::b_f, 38218, 38794}, {ModelKind::b_k, 26794, 27594},
                      {ModelKind::bt, 19146, 19434}, {ModelKind::bl, 28394, 28682},  {ModelKind::blt, 37642, 37930}};
  for (const auto& r : rows) {
    CAPTURE(model_name(r.kind));
    CHECK(count_params(ArchSpec::preset(r.kind, 1)) == r.mono);
    CHECK(count_params(ArchSpec::preset(r.kind, 2)) == r.stereo);
    const auto a = ArchSpec::preset(r.kind, 1);
    CHECK(count_params(a, CountMode::full) == r.mono + 4LL * a.feature_maps);
  }
}

TEST_CASE("counts agree with the built parameter blocks") {
  for (ModelKind kind : all_models()) {
    for (int channels : {1, 2}) {
      const auto a = ArchSpec::preset(kind, channels);
      const auto p = build<double>(a, 1);
      CHECK(block_elements(p) == count_params(a, CountMode::full));
    }
  }
}

TEST_CASE("recurrent connections add exactly three 32-map convolutions") {
  for (int k : {3, 5}) {
    auto blt = ArchSpec::preset(ModelKind::blt, 1);
    blt.kernel_size = k;
    auto b = blt;
    b.lateral = b.topdown = false;
    const long long conv = static_cast<long long>(k) * k * 32 * 32 + 32;
    CHECK(count_params(blt) - count_params(b) == 2 * conv + conv);
  }
}

TEST_CASE("architecture presets and names") {
  CHECK(ArchSpec::preset(ModelKind::b_f, 1).feature_maps == 64);
  CHECK(ArchSpec::preset(ModelKind::b_k, 1).kernel_size == 5);
  CHECK(ArchSpec::preset(ModelKind::bl, 2).input_channels == 2);
  CHECK(ArchSpec::preset(ModelKind::blt, 1).time_steps == 4);
  CHECK(ArchSpec::preset(ModelKind::b, 1).time_steps == 1);
  for (ModelKind kind : all_models()) {
    CHECK(parse_model(model_name(kind)) == kind);
    CHECK(ArchSpec::preset(kind, 1).name() == model_name(kind));
  }
  CHECK(parse_model("bk") == ModelKind::b_k);
  CHECK(parse_model("BLT") == ModelKind::blt);
  CHECK_THROWS_AS(parse_model("bx"), ConfigError);
  ArchSpec bad = ArchSpec::preset(ModelKind::bl, 1);
  bad.time_steps = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ArchSpec::preset(ModelKind::b, 1);
  bad.kernel_size = 4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(build<float>(bad, 1), ConfigError);
}

TEST_CASE("build wires connections and initializes within the fan limit") {
  const auto a = ArchSpec::preset(ModelKind::blt, 1);
  const auto p = build<double>(a, 3);
  CHECK(p.layers[0].lateral.has_value());
  CHECK(p.layers[1].lateral.has_value());
  CHECK(p.layers[0].topdown.has_value());
  CHECK_FALSE(p.layers[1].topdown.has_value());
  CHECK(p.layers[0].topdown->kernel.shape() == Shape{32, 32, 3, 3});
  CHECK(p.layers[0].bottom_up.kernel.shape() == Shape{32, 1, 3, 3});
  CHECK(p.readout.weights.shape() == Shape{10, 32, 1, 1});

  auto check_conv = [](const nn::ConvParams<double>& c) {
    const double lim = init_limit(c.kernel.shape());
    CHECK(lim == doctest::Approx(std::sqrt(6.0 / (c.kernel.shape().c * 9 + c.kernel.shape().n * 9))));
    double max_abs = 0;
    for (double v : c.kernel.data()) max_abs = std::max(max_abs, std::abs(v));
    CHECK(max_abs <= lim);
    CHECK(max_abs > 0.5 * lim);
    for (double v : c.bias) CHECK(v == 0.0);
  };
  for (const auto& l : p.layers) {
    check_conv(l.bottom_up);
    if (l.lateral) check_conv(*l.lateral);
    if (l.topdown) check_conv(*l.topdown);
    for (double g : l.bn.gamma) CHECK(g == 1.0);
    for (double b : l.bn.beta) CHECK(b == 0.0);
  }
  for (double w : p.readout.weights.data()) CHECK(w == 0.0);
  for (double b : p.readout.bias) CHECK(b == 0.0);
  const auto bp = build<double>(ArchSpec::preset(ModelKind::b, 1), 3);
  CHECK_FALSE(bp.layers[0].lateral.has_value());
  CHECK_FALSE(bp.layers[0].topdown.has_value());

  const auto same = build<double>(a, 3);
  const auto other = build<double>(a, 4);
  CHECK(same_values(same.layers[0].lateral->kernel.data(), p.layers[0].lateral->kernel.data()));
  CHECK_FALSE(same_values(other.layers[0].lateral->kernel.data(), p.layers[0].lateral->kernel.data()));
}

TEST_CASE("unrolled shapes and probability outputs") {
  std::mt19937_64 rng(5);
  auto a = ArchSpec::preset(ModelKind::blt, 2);
  auto p = build<float>(a, 1);
  const auto x = oracle::random_tensor(Shape{3, 2, 32, 32}, rng, 0, 1).cast<float>();
  const auto s = forward(p, a, x, nn::BnMode::train);
  REQUIRE(s.time_steps() == 4);
  CHECK(s.bottom_up_1.shape() == Shape{3, 32, 32, 32});
  for (int t = 0; t < 4; ++t) {
    const auto& st = s.steps[t];
    CHECK(st.layers[0].h.shape() == Shape{3, 32, 32, 32});
    CHECK(st.pooled.shape() == Shape{3, 32, 16, 16});
    CHECK(st.layers[1].h.shape() == Shape{3, 32, 16, 16});
    CHECK(st.activation.shape() == Shape{3, 32, 1, 1});
    CHECK(st.probs.shape() == Shape{3, 10, 1, 1});
    for (int n = 0; n < 3; ++n) {
      double sum = 0;
      for (int c = 0; c < 10; ++c) {
        const float q = st.probs.at(n, c, 0, 0);
        CHECK(q > 0.0f);
        CHECK(q < 1.0f);
        sum += q;
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
  CHECK(s.predictions().size() == 3u);
  CHECK_THROWS_AS(forward(p, a, Tensor<float>(Shape{3, 1, 32, 32}), nn::BnMode::train), ShapeError);
}

TEST_CASE("an untrained network predicts the uniform distribution") {
  std::mt19937_64 rng(12);
  for (ModelKind kind : all_models()) {
    const auto a = ArchSpec::preset(kind, 1);
    auto p = build<double>(a, 2);
    const auto s = forward(p, a, oracle::random_tensor(Shape{2, 1, 32, 32}, rng, 0, 1), nn::BnMode::train);
    for (int t = 0; t < s.time_steps(); ++t) {
      for (double q : s.probs(t).data()) CHECK(q == doctest::Approx(0.1).epsilon(1e-12));
    }
  }
}

TEST_CASE("lean forward gives the same readout as the cached one") {
  std::mt19937_64 rng(6);
  auto a = ArchSpec::preset(ModelKind::blt, 1);
  auto p = build<float>(a, 2);
  p.readout.weights = oracle::random_tensor(p.readout.weights.shape(), rng).cast<float>();
  const auto x = oracle::random_tensor(Shape{4, 1, 32, 32}, rng, 0, 1).cast<float>();
  forward(p, a, x, nn::BnMode::train);
  const auto full = forward(p, a, x, nn::BnMode::eval, true);
  const auto lean = forward(p, a, x, nn::BnMode::eval, false);
  for (int t = 0; t < 4; ++t) CHECK(same_values(full.probs(t).data(), lean.probs(t).data()));
  CHECK(full.predictions() == lean.predictions());
}

TEST_CASE("zero recurrent kernels reduce BLT to B") {
  std::mt19937_64 rng(7);
  auto blt_arch = ArchSpec::preset(ModelKind::blt, 1);
  auto blt = build<double>(blt_arch, 11);
  for (auto& l : blt.layers) {
    for (auto* c : {l.lateral ? &*l.lateral : nullptr, l.topdown ? &*l.topdown : nullptr}) {
      if (!c) continue;
      std::fill(c->kernel.data().begin(), c->kernel.data().end(), 0.0);
      std::fill(c->bias.begin(), c->bias.end(), 0.0);
    }
  }
  const auto b_arch = ArchSpec::preset(ModelKind::b, 1);
  NetParams<double> b;
  for (int l = 0; l < 2; ++l) {
    b.layers[l].bottom_up = blt.layers[l].bottom_up;
    b.layers[l].bn = nn::BatchNormParams<double>::create(32, 1);
    b.layers[l].bn.gamma = blt.layers[l].bn.gamma;
    b.layers[l].bn.beta = blt.layers[l].bn.beta;
  }
  b.readout = blt.readout;
  const auto x = oracle::random_tensor(Shape{3, 1, 32, 32}, rng, 0, 1);
  const auto sb = forward(b, b_arch, x, nn::BnMode::train);
  const auto sr = forward(blt, blt_arch, x, nn::BnMode::train);
  for (int t = 0; t < 4; ++t) {
    for (std::size_t i = 0; i < sb.probs(0).size(); ++i) {
      CHECK(sr.probs(t)[i] == doctest::Approx(sb.probs(0)[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("feedforward output does not depend on the number of steps") {
  std::mt19937_64 rng(8);
  auto a = ArchSpec::preset(ModelKind::b_k, 1);
  a.time_steps = 3;
  auto p = build<double>(a, 1);
  randomize_readout(p, rng);
  const auto x = oracle::random_tensor(Shape{2, 1, 32, 32}, rng, 0, 1);
  const auto s = forward(p, a, x, nn::BnMode::train);
  for (int t = 1; t < 3; ++t) {
    for (std::size_t i = 0; i < s.probs(0).size(); ++i) CHECK(s.probs(t)[i] == s.probs(0)[i]);
  }
}

TEST_CASE("recurrent models change their output over time") {
  std::mt19937_64 rng(9);
  auto a = ArchSpec::preset(ModelKind::bl, 1);
  auto p = build<double>(a, 1);
  randomize_readout(p, rng);
  const auto x = oracle::random_tensor(Shape{2, 1, 32, 32}, rng, 0, 1);
  const auto s = forward(p, a, x, nn::BnMode::train);
  CHECK_FALSE(same_values(s.probs(3).data(), s.probs(0).data()));
}

TEST_CASE("end-to-end gradient of a tiny BLT matches finite differences") {
  std::mt19937_64 rng(10);
  const auto arch = tiny_blt();
  auto p = build<double>(arch, 5);
  // Nonzero biases and affine terms so every block has a gradient.
  for (auto block : p.blocks()) {
    for (auto& v : block) v += std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
  }
  const auto x = oracle::random_tensor(Shape{2, 1, 8, 8}, rng, 0, 1);
  const std::vector<int> labels = {3, 7};
  const auto y = nn::one_hot<double>(labels, 10);

  std::vector<Tensor<double>> grad_probs;
  UnrollState<double> state;
  loss_of(p, arch, x, y, &grad_probs, &state);
  auto grads = p.zeros_like();
  backward<double>(p, arch, state, grad_probs, grads);

  auto f = [&] { return loss_of(p, arch, x, y); };
  auto pb = p.blocks();
  auto gb = grads.blocks();
  REQUIRE(pb.size() == gb.size());
  REQUIRE(pb.size() == 16);  // kernel+bias for B,L,T and B,L; gamma+beta per layer; readout
  double worst = 0;
  for (std::size_t i = 0; i < pb.size(); ++i) {
    const auto numeric = oracle::numeric_gradient(f, pb[i]);
    const double err = oracle::max_rel_error(std::vector<double>(gb[i].begin(), gb[i].end()), numeric);
    CAPTURE(i);
    CHECK(err < 1e-4);
    worst = std::max(worst, err);
  }
  MESSAGE("worst relative gradient error " << worst);
}

TEST_CASE("gradients accumulate and float casts round-trip") {
  const auto arch = tiny_blt();
  auto p = build<double>(arch, 6);
  const auto pf = cast_params<float>(p);
  const auto back = cast_params<double>(pf);
  const auto a = p.blocks();
  const auto b = back.blocks();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j) CHECK(b[i][j] == doctest::Approx(a[i][j]).epsilon(1e-7));
  }
  auto z = p.zeros_like();
  for (const auto& blk : z.blocks())
    for (double v : blk) CHECK(v == 0.0);
  CHECK(recurrent_weight_sum(z) == 0.0);
  CHECK(std::isfinite(recurrent_weight_sum(p)));
}

TEST_CASE("checkpoint round-trip and corruption") {
  oracle::TempDir tmp("ckpt");
  Checkpoint ck;
  ck.arch = ArchSpec::preset(ModelKind::blt, 2);
  ck.params = build<float>(ck.arch, 4);
  ck.epochs_completed = 7;
  std::mt19937_64 rng(1);
  const auto x = oracle::random_tensor(Shape{2, 2, 32, 32}, rng, 0, 1).cast<float>();
  forward(ck.params, ck.arch, x, nn::BnMode::train);
  // One optimizer step so the Adam moments are populated.
  auto g = ck.params.zeros_like();
  for (auto blk : g.blocks()) std::fill(blk.begin(), blk.end(), 0.01f);
  std::vector<std::span<const float>> gc;
  for (auto blk : g.blocks()) gc.emplace_back(blk);
  nn::adam_step<float>(ck.params.blocks(), gc, ck.adam);

  const auto path = tmp / "model.ocnk";
  save_checkpoint(path, ck);
  const auto back = load_checkpoint(path, ck.arch);
  CHECK(back.arch == ck.arch);
  CHECK(back.epochs_completed == 7);
  CHECK(back.adam.step_count == 1);
  const auto a = ck.params.blocks();
  const auto b = back.params.blocks();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::equal(a[i].begin(), a[i].end(), b[i].begin(), b[i].end()));
  for (int l = 0; l < 2; ++l) {
    CHECK(back.params.layers[l].bn.running_mean == ck.params.layers[l].bn.running_mean);
    CHECK(back.params.layers[l].bn.running_var == ck.params.layers[l].bn.running_var);
    CHECK(back.params.layers[l].bn.initialized == ck.params.layers[l].bn.initialized);
  }
  auto p1 = ck.params;
  auto p2 = back.params;
  CHECK(same_values(forward(p1, ck.arch, x, nn::BnMode::eval).probs(3).data(),
                    forward(p2, ck.arch, x, nn::BnMode::eval).probs(3).data()));

  CHECK_THROWS_AS(load_checkpoint(path, ArchSpec::preset(ModelKind::bl, 2)), ConfigError);
  CHECK_THROWS_AS(load_checkpoint(tmp / "missing.ocnk"), IoError);

  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  {
    auto flipped = bytes;
    flipped[bytes.size() / 2] = static_cast<char>(flipped[bytes.size() / 2] ^ 1);
    std::ofstream(path, std::ios::binary | std::ios::trunc) << flipped;
    CHECK_THROWS_AS(load_checkpoint(path), CorruptionError);
  }
  {
    std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes.substr(0, bytes.size() - 40);
    CHECK_THROWS_AS(load_checkpoint(path), CorruptionError);
  }
  {
    std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes.substr(0, 3);
    CHECK_THROWS_AS(load_checkpoint(path), CorruptionError);
  }
}
