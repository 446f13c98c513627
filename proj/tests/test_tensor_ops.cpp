#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ivd/ops.hpp"
#include "ivd/tape.hpp"
#include "oracles.hpp"

using namespace ivd;

namespace {

DTensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  DTensor t(std::move(shape));
  fill_uniform(t, rng, lo, hi);
  return t;
}

// Fixed random scalarization weights for gradient checks.
DTensor probe_weights(const std::vector<int>& shape, Rng& rng) {
  DTensor w(shape);
  fill_uniform(w, rng, -1.0, 1.0);
  return w;
}

}  // namespace

TEST_CASE("conv2d multiply-add accounting") {
  ConvSpec spec;
  spec.in_channels = 8;
  spec.out_channels = 16;
  spec.kernel_h = spec.kernel_w = 1;

  Tape tape;
  auto x = tape.value(Tensor({1, 8, 4, 4}));
  auto w = tape.value(Tensor(spec.weight_shape()));
  tape.conv2d(x, w, -1, spec);
  CHECK(tape.macs() == 2048);

  ConvSpec grouped = spec;
  grouped.groups = 4;
  Tape tape2;
  auto x2 = tape2.value(Tensor({1, 8, 4, 4}));
  auto w2 = tape2.value(Tensor(grouped.weight_shape()));
  tape2.conv2d(x2, w2, -1, grouped);
  CHECK(tape2.macs() == 512);

  Tape empty;
  CHECK(empty.macs() == 0);
}

TEST_CASE("conv2d identity kernel") {
  ConvSpec spec;
  spec.in_channels = spec.out_channels = 3;
  spec.kernel_h = spec.kernel_w = 1;
  Tensor w(spec.weight_shape());
  for (int c = 0; c < 3; ++c) w.at(c, c, 0, 0) = 1.f;

  Rng rng(7);
  Tensor x({2, 3, 5, 4});
  fill_uniform(x, rng, -2, 2);
  Tensor y = conv2d_forward(x, w, spec);
  REQUIRE(y.shape() == x.shape());
  for (long long i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("conv2d rejects mismatched shapes with a diagnostic") {
  ConvSpec spec;
  spec.in_channels = 4;
  spec.out_channels = 2;
  Tensor x({1, 3, 4, 4});
  Tensor w(spec.weight_shape());
  CHECK_THROWS_WITH_AS(conv2d_forward(x, w, spec),
                       doctest::Contains("channel"), std::invalid_argument);

  ConvSpec bad;
  bad.in_channels = 3;
  bad.out_channels = 4;
  bad.groups = 2;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  ConvSpec dw;
  dw.in_channels = 4;
  dw.out_channels = 4;
  dw.groups = 2;
  dw.depthwise = true;
  CHECK_THROWS_AS(dw.validate(), std::invalid_argument);
}

TEST_CASE("activations") {
  Tensor x({1, 1, 1, 3}, {0.f, 7.2f, -3.f});
  Tensor sig = activation_forward(x, Act::Sigmoid);
  CHECK(sig[0] == doctest::Approx(0.5));
  Tensor r6 = activation_forward(x, Act::Relu6);
  CHECK(r6[1] == 6.0f);
  CHECK(r6[2] == 0.0f);
  Tensor th = activation_forward(x, Act::Tanh);
  CHECK(th[0] == 0.0f);

  for (long long i = 0; i < sig.numel(); ++i) {
    CHECK(sig[i] > 0.f);
    CHECK(sig[i] < 1.f);
    CHECK(r6[i] >= 0.f);
    CHECK(r6[i] <= 6.f);
  }
}

TEST_CASE("activation derivative values") {
  DTape tape;
  auto x = tape.value(DTensor({1}, {0.0}));
  auto y = tape.activation(x, Act::Sigmoid);
  auto loss = tape.weighted_sum(y, DTensor({1}, {1.0}));
  tape.backward(loss);
  CHECK(tape.grad(x)[0] == doctest::Approx(0.25).epsilon(1e-12));

  DTape tape2;
  auto x2 = tape2.value(DTensor({1}, {7.0}));
  auto y2 = tape2.activation(x2, Act::Relu6);
  auto loss2 = tape2.weighted_sum(y2, DTensor({1}, {1.0}));
  tape2.backward(loss2);
  CHECK(tape2.grad(x2)[0] == 0.0);
}

TEST_CASE("concat and slice") {
  Rng rng(3);
  Tensor a({1, 3, 2, 2});
  Tensor b({1, 5, 2, 2});
  fill_uniform(a, rng, -1, 1);
  fill_uniform(b, rng, -1, 1);
  Tensor cat = concat_channels_forward<float>({&a, &b});
  CHECK(cat.dim(1) == 8);

  Tensor single = concat_channels_forward<float>({&a});
  for (long long i = 0; i < a.numel(); ++i) CHECK(single[i] == a[i]);

  Tensor back_a = slice_channels_forward(cat, 0, 3);
  Tensor back_b = slice_channels_forward(cat, 3, 5);
  for (long long i = 0; i < a.numel(); ++i) CHECK(back_a[i] == a[i]);
  for (long long i = 0; i < b.numel(); ++i) CHECK(back_b[i] == b[i]);

  Tensor c({1, 2, 3, 2});
  CHECK_THROWS_WITH_AS((concat_channels_forward<float>({&a, &c})), doctest::Contains("dim"),
                       std::invalid_argument);
}

TEST_CASE("pooling") {
  Tensor constant = Tensor::full({1, 2, 3, 3}, 4.5f);
  auto mg = pool_forward(constant, PoolSpec{PoolKind::MaxGlobal}, nullptr);
  CHECK(mg.dim(2) == 1);
  CHECK(mg.dim(3) == 1);
  CHECK(mg[0] == 4.5f);

  Tensor grid({1, 1, 2, 2}, {1.f, 3.f, 2.f, 0.f});
  CHECK(pool_forward(grid, PoolSpec{PoolKind::MaxGlobal}, nullptr)[0] == 3.f);
  CHECK(pool_forward(grid, PoolSpec{PoolKind::AvgGlobal}, nullptr)[0] == doctest::Approx(1.5));
}

TEST_CASE("fully connected basics") {
  Tensor x({1, 4}, {1.f, 2.f, 3.f, 4.f});
  Tensor zero_w({2, 4});
  Tensor bias({2}, {5.f, -1.f});
  Tensor y = fully_connected_forward(x, zero_w, &bias);
  CHECK(y.at2(0, 0) == 5.f);
  CHECK(y.at2(0, 1) == -1.f);

  Tensor eye({4, 4});
  for (int i = 0; i < 4; ++i) eye.at2(i, i) = 1.f;
  Tensor same = fully_connected_forward(x, eye);
  for (int i = 0; i < 4; ++i) CHECK(same.at2(0, i) == x[i]);

  Tape tape;
  auto xi = tape.value(Tensor({1, 104}));
  auto wi = tape.value(Tensor({2, 104}));
  tape.fully_connected(xi, wi, -1);
  CHECK(tape.macs() == 208);

  Tensor bad_w({2, 5});
  CHECK_THROWS_WITH_AS(fully_connected_forward(x, bad_w), doctest::Contains("length"),
                       std::invalid_argument);
}

TEST_CASE("gradient requested before backward is rejected") {
  DTape tape;
  auto x = tape.value(DTensor({1}, {1.0}));
  CHECK_THROWS_AS(tape.grad(x), std::logic_error);
  CHECK_THROWS_AS(tape.backward(tape.value(DTensor({2}))), std::invalid_argument);
}

TEST_CASE("ops are pure: repeated evaluation is bit-identical") {
  Rng rng(11);
  DTensor x = random_tensor({2, 4, 6, 6}, rng);
  ConvSpec spec;
  spec.in_channels = 4;
  spec.out_channels = 6;
  spec.kernel_h = spec.kernel_w = 3;
  spec.padding = 1;
  DTensor w = random_tensor(spec.weight_shape(), rng);
  DTensor y1 = conv2d_forward(x, w, spec);
  DTensor y2 = conv2d_forward(x, w, spec);
  for (long long i = 0; i < y1.numel(); ++i) CHECK(y1[i] == y2[i]);
}

TEST_CASE("conv2d gradient matches central finite differences") {
  Rng rng(23);
  ConvSpec spec;
  spec.in_channels = 3;
  spec.out_channels = 4;
  spec.kernel_h = spec.kernel_w = 3;
  spec.stride = 2;
  spec.padding = 1;
  DTensor x = random_tensor({2, 3, 5, 5}, rng);
  DTensor w = random_tensor(spec.weight_shape(), rng, -0.5, 0.5);
  DTensor b = random_tensor({4}, rng, -0.2, 0.2);
  DTensor probe = probe_weights({2, 4, 3, 3}, rng);

  auto loss = [&](const std::vector<DTensor>& params) {
    DTape tape;
    auto xi = tape.value(params[0]);
    auto wi = tape.value(params[1]);
    auto bi = tape.value(params[2]);
    auto y = tape.conv2d(xi, wi, bi, spec);
    return tape.tensor(tape.weighted_sum(y, probe))[0];
  };
  DTape tape;
  auto xi = tape.value(x);
  auto wi = tape.value(w);
  auto bi = tape.value(b);
  auto y = tape.conv2d(xi, wi, bi, spec);
  tape.backward(tape.weighted_sum(y, probe));

  auto check = oracles::check_gradients(loss, {x, w, b},
                                        {tape.grad(xi), tape.grad(wi), tape.grad(bi)});
  INFO(check.first_divergence);
  CHECK(check.pass);
  CHECK(check.max_rel_err < 1e-4);
}

TEST_CASE("grouped conv gradient and remaining op gradients") {
  Rng rng(29);

  SUBCASE("grouped conv") {
    ConvSpec spec;
    spec.in_channels = 4;
    spec.out_channels = 6;
    spec.kernel_h = spec.kernel_w = 3;
    spec.padding = 1;
    spec.groups = 2;
    DTensor x = random_tensor({1, 4, 4, 4}, rng);
    DTensor w = random_tensor(spec.weight_shape(), rng, -0.5, 0.5);
    DTensor probe = probe_weights({1, 6, 4, 4}, rng);
    auto loss = [&](const std::vector<DTensor>& p) {
      DTape t;
      auto y = t.conv2d(t.value(p[0]), t.value(p[1]), -1, spec);
      return t.tensor(t.weighted_sum(y, probe))[0];
    };
    DTape t;
    auto xi = t.value(x), wi = t.value(w);
    t.backward(t.weighted_sum(t.conv2d(xi, wi, -1, spec), probe));
    auto check = oracles::check_gradients(loss, {x, w}, {t.grad(xi), t.grad(wi)});
    INFO(check.first_divergence);
    CHECK(check.pass);
  }

  SUBCASE("activations away from kinks") {
    for (Act kind : {Act::Sigmoid, Act::Relu6, Act::Tanh}) {
      DTensor x = random_tensor({1, 2, 3, 3}, rng, 0.2, 4.8);
      DTensor probe = probe_weights({1, 2, 3, 3}, rng);
      auto loss = [&](const std::vector<DTensor>& p) {
        DTape t;
        return t.tensor(t.weighted_sum(t.activation(t.value(p[0]), kind), probe))[0];
      };
      DTape t;
      auto xi = t.value(x);
      t.backward(t.weighted_sum(t.activation(xi, kind), probe));
      auto check = oracles::check_gradients(loss, {x}, {t.grad(xi)});
      INFO(check.first_divergence);
      CHECK(check.pass);
    }
  }

  SUBCASE("pool fc mul concat slice") {
    DTensor x = random_tensor({1, 4, 4, 4}, rng);
    DTensor w = random_tensor({3, 8}, rng);
    DTensor b = random_tensor({3}, rng);
    DTensor probe = probe_weights({1, 3}, rng);
    auto build = [&](DTape& t, const std::vector<DTensor>& p) {
      auto xi = t.value(p[0]);
      auto lo = t.slice_channels(xi, 0, 2);
      auto hi = t.slice_channels(xi, 2, 2);
      auto prod = t.mul(lo, hi);
      auto sum = t.add(prod, lo);
      auto cat = t.concat_channels({sum, t.sub(hi, lo)});
      auto pooled = t.pool(cat, PoolSpec{PoolKind::MaxWindow, 2, 2});
      auto squeezed = t.pool(pooled, PoolSpec{PoolKind::AvgGlobal});
      auto mg = t.pool(t.value(p[0]), PoolSpec{PoolKind::MaxGlobal});
      auto fused = t.concat_channels({squeezed, mg});
      return t.fully_connected(fused, t.value(p[1]), t.value(p[2]));
    };
    auto loss = [&](const std::vector<DTensor>& p) {
      DTape t;
      return t.tensor(t.weighted_sum(build(t, p), probe))[0];
    };
    DTape t;
    std::vector<DTensor> params = {x, w, b};
    auto xi = t.value(x);
    // rebuild with ids we can query
    auto lo = t.slice_channels(xi, 0, 2);
    auto hi = t.slice_channels(xi, 2, 2);
    auto prod = t.mul(lo, hi);
    auto sum = t.add(prod, lo);
    auto cat = t.concat_channels({sum, t.sub(hi, lo)});
    auto pooled = t.pool(cat, PoolSpec{PoolKind::MaxWindow, 2, 2});
    auto squeezed = t.pool(pooled, PoolSpec{PoolKind::AvgGlobal});
    auto mg = t.pool(xi, PoolSpec{PoolKind::MaxGlobal});
    auto fused = t.concat_channels({squeezed, mg});
    auto wi = t.value(w), bi = t.value(b);
    t.backward(t.weighted_sum(t.fully_connected(fused, wi, bi), probe));
    auto check =
        oracles::check_gradients(loss, params, {t.grad(xi), t.grad(wi), t.grad(bi)});
    INFO(check.first_divergence);
    CHECK(check.pass);
  }
}

TEST_CASE("grouped conv with block-diagonal weights equals dense conv") {
  Rng rng(31);
  const int groups = 4, in_c = 8, out_c = 8, hw = 5;
  ConvSpec gspec;
  gspec.in_channels = in_c;
  gspec.out_channels = out_c;
  gspec.kernel_h = gspec.kernel_w = 3;
  gspec.padding = 1;
  gspec.groups = groups;

  ConvSpec dspec = gspec;
  dspec.groups = 1;

  DTensor gw = random_tensor(gspec.weight_shape(), rng);
  DTensor dw(dspec.weight_shape());
  const int icpg = in_c / groups, ocpg = out_c / groups;
  for (int g = 0; g < groups; ++g) {
    for (int oc = 0; oc < ocpg; ++oc) {
      for (int ic = 0; ic < icpg; ++ic) {
        for (int kh = 0; kh < 3; ++kh) {
          for (int kw = 0; kw < 3; ++kw) {
            dw.at(g * ocpg + oc, g * icpg + ic, kh, kw) = gw.at(g * ocpg + oc, ic, kh, kw);
          }
        }
      }
    }
  }
  DTensor x = random_tensor({1, in_c, hw, hw}, rng);
  DTensor yg = conv2d_forward(x, gw, gspec);
  DTensor yd = conv2d_forward(x, dw, dspec);
  double max_diff = 0;
  for (long long i = 0; i < yg.numel(); ++i) {
    max_diff = std::max(max_diff, std::abs(yg[i] - yd[i]));
  }
  CHECK(max_diff < 1e-6);

  // MAC count of the grouped conv is exactly 1/groups of the dense count.
  CHECK(gspec.macs(hw, hw) * groups == dspec.macs(hw, hw));
}

TEST_CASE("fake quant kernel basics") {
  QuantParams p{0.0, 1.0};
  Tensor x({1, 1, 1, 4}, {0.f, 1.f, 0.4999f, -3.f});
  Tensor q = fake_quant_forward(x, p);
  CHECK(q[0] == 0.f);
  CHECK(q[1] == 1.f);
  Tensor q2 = fake_quant_forward(q, p);
  for (long long i = 0; i < q.numel(); ++i) CHECK(q[i] == q2[i]);

  CHECK_THROWS_AS(fake_quant_forward(x, QuantParams{1.0, 1.0}), std::invalid_argument);
}
