#include <doctest.h>

#include <cmath>

#include "hesup/gradcheck.hpp"
#include "hesup/he_block.hpp"
#include "test_util.hpp"

using namespace hesup;
using testutil::rand_tensor;

TEST_CASE("build_mask marks the unique channel maximum") {
  auto f = Tensor<float>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  Rng rng(0);
  auto m = build_mask(f, 1.0f, rng);
  CHECK(m.data()[0] == 0);
  CHECK(m.data()[1] == 0);
  CHECK(m.data()[2] == 0);
  CHECK(m.data()[3] == 1);
}

TEST_CASE("build_mask marks all tied maxima") {
  auto f = Tensor<float>::from_data({1, 1, 2, 2}, {5, 5, 1, 5});
  Rng rng(0);
  auto m = build_mask(f, 1.0f, rng);
  CHECK(m.data()[0] == 1);
  CHECK(m.data()[1] == 1);
  CHECK(m.data()[2] == 0);
  CHECK(m.data()[3] == 1);
}

TEST_CASE("build_mask with apply_prob 0 is all-zero") {
  Rng gen(9);
  auto f = rand_tensor<float>({2, 3, 4, 4}, gen);
  Rng rng(1);
  auto m = build_mask(f, 0.0f, rng);
  for (float v : m.data()) CHECK(v == 0);
}

TEST_CASE("build_mask consumes one draw per (n, c) in n-major order") {
  Rng gen(4);
  auto f = rand_tensor<float>({2, 3, 2, 2}, gen);
  Rng a(42), b(42);
  auto m = build_mask(f, 0.5f, a);
  // replay the gate decisions with an identical stream
  const size_t hw = 4;
  for (size_t p = 0; p < 6; ++p) {
    const bool gated = b.uniform() < 0.5;
    float mask_sum = 0;
    for (size_t i = 0; i < hw; ++i) mask_sum += m.data()[p * hw + i];
    if (gated)
      CHECK(mask_sum >= 1);
    else
      CHECK(mask_sum == 0);
  }
  // both streams are now at the same position
  CHECK(a.bits() == b.bits());
}

TEST_CASE("build_mask equals brute-force argmax-set enumeration on 1000 random tensors") {
  Rng gen(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const size_t c = 1 + gen.below(4), h = 1 + gen.below(5), w = 1 + gen.below(5);
    auto f = rand_tensor<float>({1, c, h, w}, gen);
    Rng rng(trial);
    auto m = build_mask(f, 1.0f, rng);
    for (size_t ch = 0; ch < c; ++ch) {
      const float* plane = f.data().data() + ch * h * w;
      float mx = plane[0];
      for (size_t i = 1; i < h * w; ++i) mx = std::max(mx, plane[i]);
      for (size_t i = 0; i < h * w; ++i) {
        const float expect = plane[i] == mx ? 1.0f : 0.0f;
        REQUIRE(m.data()[ch * h * w + i] == expect);
      }
    }
  }
}

TEST_CASE("apply_mask worked example: beta 0.5 scales the masked maximum") {
  Tape<float> tape;
  auto f = Tensor<float>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  auto m = Tensor<float>::from_data({1, 1, 2, 2}, {0, 0, 0, 1});
  auto fp = apply_mask(tape, f, m, 0.5f);
  CHECK(fp.data()[0] == 1);
  CHECK(fp.data()[1] == 2);
  CHECK(fp.data()[2] == 3);
  CHECK(fp.data()[3] == 2);
  // and the pooled confidence score
  auto s = score(tape, fp);
  CHECK(s.data()[0] == doctest::Approx(2.0));
}

TEST_CASE("apply_mask with beta 1 is bitwise identity for any mask") {
  Rng gen(15);
  auto f = rand_tensor<float>({2, 3, 4, 4}, gen);
  auto m = rand_tensor<float>({2, 3, 4, 4}, gen, 0, 1);
  for (float& v : m.data()) v = v > 0.5f ? 1.0f : 0.0f;
  Tape<float> tape;
  auto fp = apply_mask(tape, f, m, 1.0f);
  for (size_t i = 0; i < f.size(); ++i) CHECK(fp.data()[i] == f.data()[i]);
}

TEST_CASE("apply_mask with beta 0 zeroes exactly the masked positions") {
  auto f = Tensor<float>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  auto m = Tensor<float>::from_data({1, 1, 2, 2}, {0, 0, 0, 1});
  Tape<float> tape;
  auto fp = apply_mask(tape, f, m, 0.0f);
  CHECK(fp.data()[0] == 1);
  CHECK(fp.data()[1] == 2);
  CHECK(fp.data()[2] == 3);
  CHECK(fp.data()[3] == 0);
}

TEST_CASE("apply_mask rejects shape mismatch") {
  Tape<float> tape;
  Tensor<float> f({1, 1, 2, 2});
  Tensor<float> m({1, 1, 3, 3});
  CHECK_THROWS_AS(apply_mask(tape, f, m, 0.5f), ShapeError);
}

TEST_CASE("apply_mask gradient: beta * G at masked positions, G elsewhere") {
  const float beta = 0.3f;
  auto f = Tensor<float>::from_data({1, 1, 2, 2}, {1, 2, 3, 4}, true);
  auto m = Tensor<float>::from_data({1, 1, 2, 2}, {0, 1, 0, 1});
  Tape<float> tape;
  auto loss = sum(tape, apply_mask(tape, f, m, beta));
  backward(loss, tape);
  CHECK(f.grad()[0] == 1.0f);
  CHECK(f.grad()[1] == beta);
  CHECK(f.grad()[2] == 1.0f);
  CHECK(f.grad()[3] == beta);
}

TEST_CASE("apply_mask gradcheck with frozen mask") {
  Rng gen(23);
  auto f = rand_tensor<double>({1, 2, 3, 3}, gen, -1, 1, true);
  Rng mask_rng(5);
  auto m = build_mask(f, 1.0, mask_rng);
  auto fn = [f, m](Tape<double>& t) mutable { return mean(t, apply_mask(t, f, m, 0.5)); };
  CHECK(gradcheck(fn, f).max_rel_error < 1e-9);
}

TEST_CASE("he_forward is a bitwise pass-through in Eval mode or when disabled") {
  Rng gen(31);
  auto f = rand_tensor<float>({2, 4, 3, 3}, gen);
  HEConfig cfg{0.5f, 1.0f, true};
  Tape<float> tape;
  Rng rng(7);
  auto out = he_forward(tape, f, cfg, Mode::Eval, rng);
  CHECK(out.id() == f.id());

  HEConfig off{0.5f, 1.0f, false};
  auto out2 = he_forward(tape, f, off, Mode::Train, rng);
  CHECK(out2.id() == f.id());
}

TEST_CASE("he_forward with beta 1 equals input bitwise in Train mode") {
  Rng gen(33);
  auto f = rand_tensor<float>({2, 4, 3, 3}, gen);
  HEConfig cfg{1.0f, 1.0f, true};
  Tape<float> tape;
  Rng rng(7);
  auto out = he_forward(tape, f, cfg, Mode::Train, rng);
  for (size_t i = 0; i < f.size(); ++i) CHECK(out.data()[i] == f.data()[i]);
}

TEST_CASE("he_forward composition matches the worked example") {
  auto f = Tensor<float>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  HEConfig cfg{0.5f, 1.0f, true};
  Tape<float> tape;
  Rng rng(7);
  auto out = he_forward(tape, f, cfg, Mode::Train, rng);
  CHECK(out.data()[0] == 1);
  CHECK(out.data()[1] == 2);
  CHECK(out.data()[2] == 3);
  CHECK(out.data()[3] == 2);
}

TEST_CASE("score of an all-zero map is all-zero") {
  Tape<float> tape;
  Tensor<float> f({2, 3, 4, 4});
  auto s = score(tape, f);
  for (float v : s.data()) CHECK(v == 0);
}

TEST_CASE("masked-channel fraction tracks apply_prob") {
  const double p = 0.35;
  Rng gen(55);
  Rng rng(99);
  size_t masked = 0, total = 0;
  while (total < 10000) {
    auto f = rand_tensor<float>({4, 25, 2, 2}, gen);  // unique maxima almost surely
    auto m = build_mask(f, static_cast<float>(p), rng);
    for (size_t ch = 0; ch < 100 && total < 10000; ++ch, ++total) {
      float s = 0;
      for (size_t i = 0; i < 4; ++i) s += m.data()[ch * 4 + i];
      if (s > 0) ++masked;
    }
  }
  const double frac = static_cast<double>(masked) / 10000.0;
  CHECK(std::abs(frac - p) <= 0.02);
}
