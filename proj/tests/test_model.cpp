#include <doctest.h>

#include <cmath>

#include "lvq/model.hpp"
#include "lvq/rng.hpp"
#include "lvq/train.hpp"

using namespace lvq;
using model::BackboneSpec;
using model::Model;
using model::TargetMode;

namespace {
Tensor random_input(std::vector<std::int64_t> shape, std::uint64_t seed) {
  Tensor x(std::move(shape));
  Rng rng(seed);
  for (auto& v : x.v) v = rng.uniform(0.0, 1.0);
  return x;
}

void perturb_bn_stats(Model& m, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& p : m.all_tensors()) {
    if (p.name.find("running_mean") != std::string::npos)
      for (auto& v : p.value->v) v = rng.normal(0.0, 0.3);
    if (p.name.find("running_var") != std::string::npos)
      for (auto& v : p.value->v) v = rng.uniform(0.5, 1.5);
  }
}

fs::path make_pretext_checkpoint(const BackboneSpec& spec, std::uint64_t seed,
                                 const std::string& tag) {
  Model m = model::build_2d(spec, TargetMode::classification, "random", {}, seed, 12);
  m.metadata["pretext_val_accuracy"] = "0.5";
  fs::path dir = fs::temp_directory_path() / ("lvq_test_ckpt_" + tag);
  fs::remove_all(dir);
  model::save_checkpoint(m, dir);
  return dir;
}
}  // namespace

TEST_CASE("head output shapes follow the target mode") {
  BackboneSpec spec = BackboneSpec::by_name("tiny");
  spec.input_size = 32;
  Model m = model::build_2d(spec, TargetMode::regression, "random", {}, 1);
  Tensor x = random_input({8, 3, 1, 32, 32}, 2);
  auto out = m.forward_eval(x);
  CHECK(out.head.shape == std::vector<std::int64_t>{8, 11, 1, 1, 1});

  Model mj = model::build_2d(spec, TargetMode::joint, "random", {}, 1);
  auto oj = mj.forward_eval(x);
  CHECK(oj.head.shape == std::vector<std::int64_t>{8, 13, 1, 1, 1});
  // phase pair normalizes under softmax
  double l0 = oj.head[11], l1 = oj.head[12];
  double e0 = std::exp(l0), e1 = std::exp(l1);
  CHECK(e0 / (e0 + e1) + e1 / (e0 + e1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("pretrained init copies the body exactly and re-draws the head") {
  BackboneSpec spec = BackboneSpec::by_name("tiny");
  fs::path ckpt = make_pretext_checkpoint(spec, 7, "body");
  Model pre = model::build_2d(spec, TargetMode::regression, "pretrained", ckpt, 99);
  Model src = model::load_checkpoint(ckpt);
  auto pv = pre.all_tensors();
  auto sv = src.all_tensors();
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (pv[i].name.rfind("head", 0) == 0) continue;
    for (std::size_t j = 0; j < sv.size(); ++j)
      if (sv[j].name == pv[i].name) CHECK(pv[i].value->v == sv[j].value->v);
  }
  // body differs from a random build with the same seed
  Model rnd = model::build_2d(spec, TargetMode::regression, "random", {}, 99);
  bool body_differs = false;
  auto rv = rnd.all_tensors();
  for (std::size_t i = 0; i < pv.size(); ++i)
    if (pv[i].name.rfind("stem", 0) == 0 && pv[i].value->v != rv[i].value->v)
      body_differs = true;
  CHECK(body_differs);
  CHECK(pre.metadata.at("pretext_val_accuracy") == "0.5");
  fs::remove_all(ckpt);
}

TEST_CASE("mismatched pretext spec is rejected") {
  fs::path ckpt = make_pretext_checkpoint(BackboneSpec::by_name("tiny"), 7, "mismatch");
  CHECK_THROWS_AS(
      model::build_2d(BackboneSpec::by_name("small"), TargetMode::regression, "pretrained", ckpt, 1),
      ShapeMismatch);
  fs::remove_all(ckpt);
}

TEST_CASE("inflation: 1/d_c rule and exact depth sums") {
  BackboneSpec spec = BackboneSpec::by_name("tiny");
  Model m2 = model::build_2d(spec, TargetMode::regression, "random", {}, 3);
  Model m3 = model::inflate_to_3d(m2, 3);

  // depth-sum exactness on every inflated tensor, error exactly zero
  auto p2 = m2.all_tensors();
  auto p3 = m3.all_tensors();
  REQUIRE(p2.size() == p3.size());
  for (std::size_t i = 0; i < p2.size(); ++i) {
    const Tensor& a = *p2[i].value;
    const Tensor& b = *p3[i].value;
    if (a.shape == b.shape) {
      CHECK(a.v == b.v);  // normalization parameters, biases, kernel-1 convs
      continue;
    }
    REQUIRE(a.ndim() == 5);
    std::int64_t out = a.dim(0), in = a.dim(1), kd = b.dim(2), hw = a.dim(3) * a.dim(4);
    for (std::int64_t o = 0; o < out; ++o)
      for (std::int64_t c = 0; c < in; ++c)
        for (std::int64_t s = 0; s < hw; ++s) {
          double sum = 0.0;
          for (std::int64_t d = 0; d < kd; ++d) sum += b[((o * in + c) * kd + d) * hw + s];
          CHECK(sum == a[(o * in + c) * hw + s]);  // exact, not approximate
        }
  }

  SUBCASE("worked example: 2x2 kernel, d_c = 3") {
    nn::Conv src(1, 1, 2, 1, 1, 0);
    src.w[0] = 1;
    src.w[1] = 2;
    src.w[2] = 3;
    src.w[3] = 4;
    Model tmp2 = model::build_2d(spec, TargetMode::regression, "random", {}, 3);
    tmp2.stem = src;  // smuggle the example kernel through the stem slot
    Model tmp3 = model::inflate_to_3d(tmp2, 3);
    for (int d = 0; d < 3; ++d)
      for (int i = 0; i < 4; ++i)
        CHECK(tmp3.stem.w[d * 4 + i] == doctest::Approx((i + 1) / 3.0).epsilon(1e-12));
  }

  SUBCASE("d_c must be odd") { CHECK_THROWS_AS(model::inflate_to_3d(m2, 2), BadInput); }
  SUBCASE("a 3D model cannot be inflated again") {
    CHECK_THROWS_AS(model::inflate_to_3d(m3, 3), UnsupportedLayer);
  }
}

TEST_CASE("inflated model emits one prediction per input slice") {
  BackboneSpec spec = BackboneSpec::by_name("tiny");
  Model m2 = model::build_2d(spec, TargetMode::regression, "random", {}, 4);
  Model m3 = model::inflate_to_3d(m2, 3);
  Tensor x = random_input({1, 3, 5, 24, 24}, 5);
  auto out = m3.forward_eval(x);
  CHECK(out.head.shape == std::vector<std::int64_t>{1, 11, 5, 1, 1});
}

TEST_CASE("constant-temporal input reproduces 2D features at interior positions") {
  BackboneSpec spec = BackboneSpec::by_name("tiny");
  Model m2 = model::build_2d(spec, TargetMode::regression, "random", {}, 6);
  perturb_bn_stats(m2, 61);
  Model m3 = model::inflate_to_3d(m2, 3);

  const int n_slices = 14;
  // temporal margin: one slice per depth-3 convolution on each side
  const int margin = 5;
  Tensor slice = random_input({1, 3, 1, 24, 24}, 62);
  Tensor stack({1, 3, n_slices, 24, 24});
  for (int c = 0; c < 3; ++c)
    for (int d = 0; d < n_slices; ++d)
      for (int i = 0; i < 24 * 24; ++i)
        stack[((0 * 3 + c) * n_slices + d) * 24 * 24 + i] = slice[(0 * 3 + c) * 24 * 24 + i];

  Tensor f2 = m2.features_eval(slice);  // (1, C, 1, h, w)
  Tensor f3 = m3.features_eval(stack);  // (1, C, n_slices, h, w)
  std::int64_t C = f2.dim(1), hw = f2.dim(3) * f2.dim(4);
  double worst = 0.0;
  for (std::int64_t c = 0; c < C; ++c)
    for (int d = margin; d < n_slices - margin; ++d)
      for (std::int64_t i = 0; i < hw; ++i) {
        double a = f2[c * hw + i];
        double b = f3[(c * n_slices + d) * hw + i];
        worst = std::max(worst, std::abs(a - b) / std::max(std::abs(a), 1e-12));
      }
  CHECK(worst < 1e-4);

  // border positions feel the temporal zero padding
  double border_diff = 0.0;
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t i = 0; i < hw; ++i)
      border_diff =
          std::max(border_diff, std::abs(f2[c * hw + i] - f3[(c * n_slices + 0) * hw + i]));
  CHECK(border_diff > 1e-4);
}

TEST_CASE("decoder restores the input resolution and normalizes per pixel") {
  BackboneSpec spec = BackboneSpec::by_name("small");  // 4 stages, 5 downsamplings
  Model m = model::build_2d(spec, TargetMode::regression, "random", {}, 8);
  model::attach_sr_decoder(m, 9);
  CHECK(m.decoder.size() == 5);

  Tensor x = random_input({1, 3, 1, 224, 224}, 10);
  auto out = m.forward_eval(x, /*want_seg=*/true);
  CHECK(out.feature_shape == std::vector<std::int64_t>{1, 128, 1, 7, 7});
  REQUIRE(out.seg.has_value());
  CHECK(out.seg->shape == std::vector<std::int64_t>{1, 3, 1, 224, 224});

  const Tensor& s = *out.seg;
  for (std::int64_t i : {std::int64_t(0), std::int64_t(224 * 111 + 57), std::int64_t(224 * 224 - 1)}) {
    double e0 = std::exp(s[0 * 224 * 224 + i]);
    double e1 = std::exp(s[1 * 224 * 224 + i]);
    double e2 = std::exp(s[2 * 224 * 224 + i]);
    double z = e0 + e1 + e2;
    CHECK(e0 / z + e1 / z + e2 / z == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("decoder channel sequence halves from the feature width") {
  BackboneSpec spec;
  spec.id = "custom512";
  spec.stem_channels = 32;
  spec.stage_channels = {64, 128, 256, 512};
  spec.stage_blocks = {1, 1, 1, 1};
  Model m = model::build_2d(spec, TargetMode::regression, "random", {}, 11);
  model::attach_sr_decoder(m, 12);
  std::vector<int> seq;
  for (const auto& st : m.decoder) seq.push_back(st.halve.out_ch);
  CHECK(seq == std::vector<int>{256, 128, 64, 32, 16});
  CHECK(m.decoder_proj.in_ch == 16);
  CHECK(m.decoder_proj.out_ch == 3);
}

TEST_CASE("too-narrow feature maps underflow the decoder") {
  BackboneSpec spec = BackboneSpec::by_name("tiny");  // feature 32, 3 halvings -> 4, ok
  Model ok = model::build_2d(spec, TargetMode::regression, "random", {}, 13);
  CHECK_NOTHROW(model::attach_sr_decoder(ok, 13));

  BackboneSpec thin;
  thin.id = "thin";
  thin.stem_channels = 8;
  thin.stage_channels = {8, 16};
  thin.stage_blocks = {1, 1};
  Model bad = model::build_2d(thin, TargetMode::regression, "random", {}, 14);
  CHECK_THROWS_AS(model::attach_sr_decoder(bad, 14), ChannelUnderflow);
}

TEST_CASE("checkpoint round trip is lossless in the stored format") {
  BackboneSpec spec = BackboneSpec::by_name("tiny");
  Model m = model::build_2d(spec, TargetMode::joint, "random", {}, 15);
  model::attach_sr_decoder(m, 16);
  fs::path dir = fs::temp_directory_path() / "lvq_test_ckpt_roundtrip";
  fs::remove_all(dir);
  model::save_checkpoint(m, dir, "scaler.txt");

  Model back = model::load_checkpoint(dir);
  fs::path dir2 = fs::temp_directory_path() / "lvq_test_ckpt_roundtrip2";
  fs::remove_all(dir2);
  model::save_checkpoint(back, dir2, "scaler.txt");
  CHECK(read_text_file(dir / "params.bin") == read_text_file(dir2 / "params.bin"));

  Model again = model::load_checkpoint(dir2);
  auto a = back.all_tensors();
  auto b = again.all_tensors();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].value->v == b[i].value->v);
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("composite-loss gradients match central finite differences") {
  BackboneSpec spec = BackboneSpec::by_name("tiny");
  Model m = model::build_2d(spec, TargetMode::joint, "random", {}, 17);
  model::attach_sr_decoder(m, 18);

  const int B = 2, S = 24;
  train::Batch batch;
  batch.B = B;
  batch.D = 1;
  batch.H = S;
  batch.W = S;
  batch.x = random_input({B, 3, 1, S, S}, 19);
  Rng rng(20);
  for (int i = 0; i < B * 11; ++i) batch.reg_targets.push_back(rng.uniform(0.0, 1.0));
  for (int i = 0; i < B; ++i) batch.phase_labels.push_back(rng.range_int(0, 1));
  for (int i = 0; i < B * S * S; ++i)
    batch.seg.push_back(static_cast<std::uint8_t>(rng.range_int(0, 2)));

  auto loss_of = [&]() {
    auto out = m.forward_train(batch.x, true);
    return train::composite_loss(out, batch, TargetMode::joint, true, 0.05, 0.1, nullptr,
                                 nullptr)
        .total;
  };

  {
    auto out = m.forward_train(batch.x, true);
    Tensor gh, gs;
    train::composite_loss(out, batch, TargetMode::joint, true, 0.05, 0.1, &gh, &gs);
    m.zero_grad();
    m.backward(gh, &gs);
  }

  auto params = m.trainable();
  std::int64_t total = 0;
  for (auto& p : params) total += p.value->numel();
  Rng pick(21);
  int checked = 0;
  double worst = 0.0;
  while (checked < 100) {
    std::int64_t flat = static_cast<std::int64_t>(pick.below(static_cast<std::uint64_t>(total)));
    std::size_t pi = 0;
    while (flat >= params[pi].value->numel()) {
      flat -= params[pi].value->numel();
      ++pi;
    }
    double* w = &params[pi].value->v[static_cast<std::size_t>(flat)];
    double analytic = params[pi].grad->v[static_cast<std::size_t>(flat)];
    double keep = *w;
    double h = 1e-5 * std::max(1.0, std::abs(keep));
    *w = keep + h;
    double up = loss_of();
    *w = keep - h;
    double dn = loss_of();
    *w = keep;
    double numeric = (up - dn) / (2 * h);
    double rel =
        std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    worst = std::max(worst, rel);
    ++checked;
  }
  CHECK(worst < 1e-3);
}
