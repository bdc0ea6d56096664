#include <cmath>

#include "doctest.h"
#include "inceptseg/ops.hpp"
#include "oracle.hpp"

using namespace iseg;
using ops::Padding;

TEST_CASE("conv2d identity 1x1 kernel") {
  Rng rng(1, 0);
  const Tensor4 x = oracle::random_tensor(1, 4, 4, 2, rng);
  Kernel4 k(1, 1, 2, 2);
  k.at(0, 0, 0, 0) = 1.0;
  k.at(0, 0, 1, 1) = 1.0;
  const Tensor4 y = ops::conv2d(x, k, Padding::Same);
  REQUIRE(y.same_shape(x));
  for (size_t i = 0; i < x.data.size(); ++i) CHECK(y.data[i] == doctest::Approx(x.data[i]));
}

TEST_CASE("conv2d constant input, all-ones 3x3 kernel, valid padding") {
  Tensor4 x(1, 5, 5, 1, 2.0);
  Kernel4 k(3, 3, 1, 1);
  for (double& v : k.data) v = 1.0;
  const Tensor4 y = ops::conv2d(x, k, Padding::Valid);
  REQUIRE(y.h == 3);
  REQUIRE(y.w == 3);
  for (double v : y.data) CHECK(v == doctest::Approx(18.0));
}

TEST_CASE("conv2d same padding shape") {
  Tensor4 x(2, 64, 64, 1);
  Kernel4 k(3, 3, 1, 64);
  const Tensor4 y = ops::conv2d(x, k, Padding::Same);
  CHECK(y.n == 2);
  CHECK(y.h == 64);
  CHECK(y.w == 64);
  CHECK(y.c == 64);
}

TEST_CASE("conv2d channel mismatch names both shapes") {
  Tensor4 x(1, 4, 4, 2);
  Kernel4 k(3, 3, 3, 1);
  CHECK_THROWS_WITH_AS(ops::conv2d(x, k, Padding::Same),
                       doctest::Contains("(1,4,4,2)"), std::invalid_argument);
}

TEST_CASE("conv2d_backward matches finite differences (1x4x4x2, 3x3x2x3)") {
  Rng rng(7, 1);
  Tensor4 x = oracle::random_tensor(1, 4, 4, 2, rng);
  Kernel4 k = oracle::random_kernel(3, 3, 2, 3, rng);
  const Tensor4 w = oracle::random_weights(ops::conv2d(x, k, Padding::Same), rng);
  auto loss = [&] { return oracle::weighted_sum(ops::conv2d(x, k, Padding::Same), w); };

  const ops::ConvGrads g = ops::conv2d_backward(w, x, k, Padding::Same);
  CHECK(oracle::check_grad(loss, x.data.data(), g.grad_input.data.data(), x.size()) < 1e-4);
  CHECK(oracle::check_grad(loss, k.data.data(), g.grad_kernel.data.data(), k.data.size()) <
        1e-4);
  CHECK(oracle::check_grad(loss, k.bias.data(), g.grad_kernel.bias.data(), k.bias.size()) <
        1e-4);
}

TEST_CASE("conv2d_backward valid padding matches finite differences") {
  Rng rng(17, 3);
  Tensor4 x = oracle::random_tensor(2, 5, 6, 2, rng);
  Kernel4 k = oracle::random_kernel(3, 3, 2, 2, rng);
  const Tensor4 w = oracle::random_weights(ops::conv2d(x, k, Padding::Valid), rng);
  auto loss = [&] { return oracle::weighted_sum(ops::conv2d(x, k, Padding::Valid), w); };
  const ops::ConvGrads g = ops::conv2d_backward(w, x, k, Padding::Valid);
  CHECK(oracle::check_grad(loss, x.data.data(), g.grad_input.data.data(), x.size()) < 1e-4);
  CHECK(oracle::check_grad(loss, k.data.data(), g.grad_kernel.data.data(), k.data.size()) <
        1e-4);
}

TEST_CASE("conv2d_backward zero grad_out gives zero gradients") {
  Rng rng(3, 2);
  Tensor4 x = oracle::random_tensor(1, 4, 4, 2, rng);
  Kernel4 k = oracle::random_kernel(3, 3, 2, 3, rng);
  Tensor4 zero(1, 4, 4, 3);
  const ops::ConvGrads g = ops::conv2d_backward(zero, x, k, Padding::Same);
  for (double v : g.grad_input.data) CHECK(v == 0.0);
  for (double v : g.grad_kernel.data) CHECK(v == 0.0);
  for (double v : g.grad_kernel.bias) CHECK(v == 0.0);
}

TEST_CASE("conv2d_backward through 1x1 identity kernel passes grad through") {
  Rng rng(5, 4);
  Tensor4 x = oracle::random_tensor(1, 3, 3, 1, rng);
  Kernel4 k(1, 1, 1, 1);
  k.at(0, 0, 0, 0) = 1.0;
  const Tensor4 go = oracle::random_tensor(1, 3, 3, 1, rng);
  const ops::ConvGrads g = ops::conv2d_backward(go, x, k, Padding::Same);
  for (size_t i = 0; i < go.data.size(); ++i)
    CHECK(g.grad_input.data[i] == doctest::Approx(go.data[i]));
}

TEST_CASE("transposed_conv2x2 broadcast of single pixel") {
  Tensor4 x(1, 1, 1, 1);
  x.data[0] = 3.5;
  Kernel4 k(2, 2, 1, 1);
  for (double& v : k.data) v = 1.0;
  const Tensor4 y = ops::transposed_conv2x2(x, k);
  REQUIRE(y.h == 2);
  REQUIRE(y.w == 2);
  for (double v : y.data) CHECK(v == doctest::Approx(3.5));
}

TEST_CASE("transposed_conv2x2 zero input leaves broadcast bias") {
  Tensor4 x(1, 2, 2, 3);
  Kernel4 k = [] {
    Rng rng(9, 5);
    return oracle::random_kernel(2, 2, 3, 2, rng);
  }();
  const Tensor4 y = ops::transposed_conv2x2(x, k);
  for (int yy = 0; yy < y.h; ++yy)
    for (int xx = 0; xx < y.w; ++xx)
      for (int c = 0; c < y.c; ++c)
        CHECK(y.at(0, yy, xx, c) == doctest::Approx(k.bias[c]));
}

TEST_CASE("transposed_conv2x2 shape and adjoint property") {
  Rng rng(11, 6);
  Tensor4 x = oracle::random_tensor(1, 4, 4, 3, rng);
  Kernel4 k = oracle::random_kernel(2, 2, 3, 2, rng);
  const Tensor4 y = ops::transposed_conv2x2(x, k);
  CHECK(y.h == 8);
  CHECK(y.w == 8);
  CHECK(y.c == 2);
}

TEST_CASE("transposed_conv2x2_backward matches finite differences") {
  Rng rng(13, 7);
  Tensor4 x = oracle::random_tensor(1, 3, 3, 2, rng);
  Kernel4 k = oracle::random_kernel(2, 2, 2, 2, rng);
  const Tensor4 w = oracle::random_weights(ops::transposed_conv2x2(x, k), rng);
  auto loss = [&] { return oracle::weighted_sum(ops::transposed_conv2x2(x, k), w); };
  const ops::ConvGrads g = ops::transposed_conv2x2_backward(w, x, k);
  CHECK(oracle::check_grad(loss, x.data.data(), g.grad_input.data.data(), x.size()) < 1e-4);
  CHECK(oracle::check_grad(loss, k.data.data(), g.grad_kernel.data.data(), k.data.size()) <
        1e-4);
  CHECK(oracle::check_grad(loss, k.bias.data(), g.grad_kernel.bias.data(), k.bias.size()) <
        1e-4);
}

TEST_CASE("maxpool2x2 forced window and tie rule") {
  Tensor4 x(1, 2, 2, 1);
  x.at(0, 0, 0, 0) = 1;
  x.at(0, 0, 1, 0) = 2;
  x.at(0, 1, 0, 0) = 3;
  x.at(0, 1, 1, 0) = 4;
  const ops::PoolResult r = ops::maxpool2x2(x);
  CHECK(r.output.data[0] == 4.0);
  CHECK(r.argmax[0] == static_cast<int>(x.idx(0, 1, 1, 0)));

  Tensor4 c(1, 4, 4, 2, 7.0);
  const ops::PoolResult rc = ops::maxpool2x2(c);
  for (double v : rc.output.data) CHECK(v == 7.0);
  for (int yy = 0; yy < 2; ++yy)
    for (int xx = 0; xx < 2; ++xx)
      for (int ch = 0; ch < 2; ++ch)
        CHECK(rc.argmax[rc.output.idx(0, yy, xx, ch)] ==
              static_cast<int>(c.idx(0, 2 * yy, 2 * xx, ch)));
}

TEST_CASE("maxpool2x2 rejects odd spatial size") {
  Tensor4 x(1, 3, 4, 1);
  CHECK_THROWS_AS(ops::maxpool2x2(x), std::invalid_argument);
}

TEST_CASE("maxpool2x2 gradient matches finite differences") {
  Rng rng(15, 8);
  Tensor4 x = oracle::random_tensor(2, 4, 4, 2, rng);
  // keep entries distinct so the argmax winner is stable under FD nudges
  for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += 0.01 * static_cast<double>(i);
  const ops::PoolResult r0 = ops::maxpool2x2(x);
  const Tensor4 w = oracle::random_weights(r0.output, rng);
  auto loss = [&] { return oracle::weighted_sum(ops::maxpool2x2(x).output, w); };
  const Tensor4 g = ops::maxpool2x2_backward(w, r0.argmax, x.h, x.w);
  CHECK(oracle::check_grad(loss, x.data.data(), g.data.data(), x.size()) < 1e-4);
}

TEST_CASE("maxpool backward routes exactly one unit per window") {
  Rng rng(19, 9);
  Tensor4 x = oracle::random_tensor(1, 6, 6, 3, rng);
  const ops::PoolResult r = ops::maxpool2x2(x);
  Tensor4 ones(1, 3, 3, 3, 1.0);
  const Tensor4 g = ops::maxpool2x2_backward(ones, r.argmax, 6, 6);
  double total = 0.0;
  for (double v : g.data) {
    CHECK((v == 0.0 || v == 1.0));
    total += v;
  }
  CHECK(total == doctest::Approx(ones.data.size()));
}

TEST_CASE("concat/split round trip") {
  Rng rng(21, 10);
  const Tensor4 a = oracle::random_tensor(1, 4, 4, 2, rng);
  const Tensor4 b = oracle::random_tensor(1, 4, 4, 3, rng);
  const Tensor4 cat = ops::concat_channels(a, b);
  CHECK(cat.c == 5);
  const auto [a2, b2] = ops::split_channels(cat, 2);
  CHECK(a2.data == a.data);
  CHECK(b2.data == b.data);

  Tensor4 bad(1, 3, 4, 1);
  CHECK_THROWS_AS(ops::concat_channels(a, bad), std::invalid_argument);
}

TEST_CASE("elementwise basics") {
  Tensor4 z(1, 3, 3, 2);
  const Tensor4 s = ops::sigmoid(z);
  for (double v : s.data) CHECK(v == doctest::Approx(0.5));

  Rng rng(23, 11);
  const Tensor4 x = oracle::random_tensor(1, 3, 3, 2, rng);
  Tensor4 ones(1, 3, 3, 2, 1.0);
  const Tensor4 h = ops::hadamard(x, ones);
  CHECK(h.data == x.data);

  for (double v : ops::relu(x).data) CHECK(v >= 0.0);
}

TEST_CASE("activation gradients match finite differences") {
  Rng rng(25, 12);
  Tensor4 x = oracle::random_tensor(2, 3, 3, 2, rng);
  const Tensor4 w = oracle::random_weights(x, rng);

  auto tanh_loss = [&] { return oracle::weighted_sum(ops::tanh(x), w); };
  const Tensor4 gt = ops::tanh_backward(w, ops::tanh(x));
  CHECK(oracle::check_grad(tanh_loss, x.data.data(), gt.data.data(), x.size()) < 1e-4);

  auto sig_loss = [&] { return oracle::weighted_sum(ops::sigmoid(x), w); };
  const Tensor4 gs = ops::sigmoid_backward(w, ops::sigmoid(x));
  CHECK(oracle::check_grad(sig_loss, x.data.data(), gs.data.data(), x.size()) < 1e-4);

  // keep x away from the relu kink where the derivative is undefined
  for (double& v : x.data)
    if (std::fabs(v) < 0.05) v = 0.1;
  auto relu_loss = [&] { return oracle::weighted_sum(ops::relu(x), w); };
  const Tensor4 gr = ops::relu_backward(w, ops::relu(x));
  CHECK(oracle::check_grad(relu_loss, x.data.data(), gr.data.data(), x.size()) < 1e-4);
}

TEST_CASE("bilinear_resize constants, identity, and hand oracle") {
  Tensor4 c(1, 5, 7, 2, 0.37);
  const Tensor4 rc = ops::bilinear_resize(c, 11, 3);
  for (double v : rc.data) CHECK(v == doctest::Approx(0.37));

  Rng rng(27, 13);
  const Tensor4 x = oracle::random_tensor(1, 4, 4, 1, rng);
  const Tensor4 same = ops::bilinear_resize(x, 4, 4);
  CHECK(same.data == x.data);

  // 2x2 [[0,1],[2,3]] -> 4x4, half-pixel centers with edge clamp
  Tensor4 s(1, 2, 2, 1);
  s.at(0, 0, 0, 0) = 0;
  s.at(0, 0, 1, 0) = 1;
  s.at(0, 1, 0, 0) = 2;
  s.at(0, 1, 1, 0) = 3;
  const Tensor4 up = ops::bilinear_resize(s, 4, 4);
  // source coordinate of output (j): (j+0.5)*0.5-0.5 -> {-0.25,0.25,0.75,1.25} clamped
  CHECK(up.at(0, 0, 0, 0) == doctest::Approx(0.0));
  CHECK(up.at(0, 0, 3, 0) == doctest::Approx(1.0));
  CHECK(up.at(0, 3, 0, 0) == doctest::Approx(2.0));
  CHECK(up.at(0, 3, 3, 0) == doctest::Approx(3.0));
  CHECK(up.at(0, 1, 1, 0) == doctest::Approx(0.25 * 2 + 0.25));  // fy=fx=0.25
  CHECK(up.at(0, 2, 2, 0) == doctest::Approx(0.75 * 2 + 0.75));  // fy=fx=0.75
}

TEST_CASE("stacked 3x3 convolutions are receptive-field local") {
  Rng rng(29, 14);
  Tensor4 x = oracle::random_tensor(1, 12, 12, 1, rng);
  const Kernel4 k1 = oracle::random_kernel(3, 3, 1, 2, rng);
  const Kernel4 k2 = oracle::random_kernel(3, 3, 2, 1, rng);
  auto net2 = [&](const Tensor4& in) {
    return ops::conv2d(ops::conv2d(in, k1, Padding::Same), k2, Padding::Same);
  };
  const Tensor4 base = net2(x);
  Tensor4 x2 = x;
  x2.at(0, 11, 11, 0) += 10.0;  // far from probe pixel (3,3)
  const Tensor4 pert = net2(x2);
  CHECK(pert.at(0, 3, 3, 0) == base.at(0, 3, 3, 0));
  // inside the 5x5 neighborhood the output must move
  Tensor4 x3 = x;
  x3.at(0, 4, 4, 0) += 10.0;
  CHECK(net2(x3).at(0, 3, 3, 0) != base.at(0, 3, 3, 0));
}
