#include <doctest.h>

#include <cmath>

#include "awb/attention.hpp"
#include "test_util.hpp"

using namespace awb;
using awb::test::randn;
using awb::test::randu;

namespace {

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

CbamParams<double> random_cbam(RngStream& r, std::size_t c, std::size_t red, std::size_t k) {
  auto p = CbamParams<double>::zeros(c, red, k);
  p.fc1_weight = randn(r, p.fc1_weight.shape(), 0.5);
  p.fc1_bias = randn(r, p.fc1_bias.shape(), 0.1);
  p.fc2_weight = randn(r, p.fc2_weight.shape(), 0.5);
  p.fc2_bias = randn(r, p.fc2_bias.shape(), 0.1);
  p.spatial_weight = randn(r, p.spatial_weight.shape(), 0.3);
  p.spatial_bias = randn(r, p.spatial_bias.shape(), 0.1);
  return p;
}

NonLocalParams<double> random_nonlocal(RngStream& r, std::size_t c) {
  auto p = NonLocalParams<double>::zeros(c);
  for (auto* t : {&p.theta_weight, &p.theta_bias, &p.phi_weight, &p.phi_bias, &p.g_weight, &p.g_bias, &p.g_beta,
                  &p.h_weight, &p.h_bias}) {
    *t = randn(r, t->shape(), 0.5);
  }
  p.g_gamma = randu(r, p.g_gamma.shape(), 0.5, 1.5);
  p.g_stats.running_mean = randn(r, {c / 2}, 0.2);
  p.g_stats.running_var = randu(r, {c / 2}, 0.5, 1.5);
  return p;
}

// Loop-level improved CBAM.
TensorD cbam_oracle(const TensorD& f, const CbamParams<double>& p) {
  const std::size_t n = f.dim(0), c = f.dim(1), h = f.dim(2), w = f.dim(3), hid = c / p.reduction, k = p.kernel;
  auto F = [&](std::size_t s, std::size_t ch, std::size_t y, std::size_t x) { return f.at(((s * c + ch) * h + y) * w + x); };
  auto mlp = [&](const std::vector<double>& d) {
    std::vector<double> hidden(hid), out(c);
    for (std::size_t j = 0; j < hid; ++j) {
      double a = p.fc1_bias.at(j);
      for (std::size_t i = 0; i < c; ++i) a += p.fc1_weight.at(j * c + i) * d[i];
      hidden[j] = std::max(a, 0.0);
    }
    for (std::size_t i = 0; i < c; ++i) {
      double a = p.fc2_bias.at(i);
      for (std::size_t j = 0; j < hid; ++j) a += p.fc2_weight.at(i * hid + j) * hidden[j];
      out[i] = a;
    }
    return out;
  };
  TensorD out(f.shape());
  auto o = out.data_mut();
  for (std::size_t s = 0; s < n; ++s) {
    std::vector<double> avg(c, 0.0), mx(c, -1e300);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          avg[ch] += F(s, ch, y, x) / double(h * w);
          mx[ch] = std::max(mx[ch], F(s, ch, y, x));
        }
    const auto a = mlp(avg), b = mlp(mx);
    std::vector<double> k1(c * h * w), mean_map(h * w, 0.0), max_map(h * w, -1e300);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t q = 0; q < h * w; ++q) {
        const double v = sigm(a[ch] + b[ch]) * F(s, ch, q / w, q % w);
        k1[ch * h * w + q] = v;
        mean_map[q] += v / double(c);
        max_map[q] = std::max(max_map[q], v);
      }
    const long pad = long(k / 2);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double z = p.spatial_bias.at(0);
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = 0; j < k; ++j) {
            const long yy = long(y + i) - pad, xx = long(x + j) - pad;
            if (yy < 0 || xx < 0 || yy >= long(h) || xx >= long(w)) continue;
            const std::size_t q = std::size_t(yy) * w + std::size_t(xx);
            z += p.spatial_weight.at(i * k + j) * mean_map[q] + p.spatial_weight.at(k * k + i * k + j) * max_map[q];
          }
        const double ms = sigm(z);
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t q = y * w + x;
          o[((s * c + ch) * h + y) * w + x] = ms * k1[ch * h * w + q] + F(s, ch, y, x);
        }
      }
  }
  return out;
}

// Loop-level simplified non-local block with eval-mode batch norm on g.
TensorD nonlocal_oracle(const TensorD& f, const NonLocalParams<double>& p) {
  const std::size_t n = f.dim(0), c = f.dim(1), h = f.dim(2), w = f.dim(3), half = c / 2, hw = h * w;
  auto proj = [&](const TensorD& wt, const TensorD& b, std::size_t s, std::size_t o, std::size_t q) {
    double a = b.at(o);
    for (std::size_t i = 0; i < c; ++i) a += wt.at(o * c + i) * f.at((s * c + i) * hw + q);
    return a;
  };
  TensorD out(f.shape());
  auto o = out.data_mut();
  for (std::size_t s = 0; s < n; ++s) {
    std::vector<double> th(half * hw), ph(half * hw), g(half * hw);
    for (std::size_t m = 0; m < half; ++m)
      for (std::size_t q = 0; q < hw; ++q) {
        th[m * hw + q] = proj(p.theta_weight, p.theta_bias, s, m, q);
        ph[m * hw + q] = proj(p.phi_weight, p.phi_bias, s, m, q);
        const double raw = proj(p.g_weight, p.g_bias, s, m, q);
        g[m * hw + q] = p.g_gamma.at(m) * (raw - p.g_stats.running_mean.at(m)) /
                            std::sqrt(p.g_stats.running_var.at(m) + 1e-5) +
                        p.g_beta.at(m);
      }
    // y[m, p] = sum_q J[p, q] g[m, q] with J[p, q] = sum_m theta[m, p] phi[m, q] / HW
    std::vector<double> y(half * hw, 0.0);
    for (std::size_t pp = 0; pp < hw; ++pp)
      for (std::size_t q = 0; q < hw; ++q) {
        double j = 0.0;
        for (std::size_t m = 0; m < half; ++m) j += th[m * hw + pp] * ph[m * hw + q];
        j /= double(hw);
        for (std::size_t m = 0; m < half; ++m) y[m * hw + pp] += j * g[m * hw + q];
      }
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t q = 0; q < hw; ++q) {
        double a = p.h_bias.at(ch);
        for (std::size_t m = 0; m < half; ++m) a += p.h_weight.at(ch * half + m) * y[m * hw + q];
        o[(s * c + ch) * hw + q] = a + f.at((s * c + ch) * hw + q);
      }
  }
  return out;
}

}  // namespace

TEST_CASE("zero-parameter improved CBAM scales by exactly 1.25") {
  RngStream r(1, 1);
  auto p = CbamParams<float>::zeros(16, 4, 7);
  const auto f = randn<float>(r, {2, 16, 8, 4});
  const auto y = icbam_forward(f, p);
  for (std::size_t i = 0; i < f.size(); ++i) REQUIRE(y.at(i) == 1.25f * f.at(i));
}

TEST_CASE("zero input gives zero output") {
  TensorD zero(Shape{2, 8, 4, 4}, 0.0);
  RngStream r(2, 2);
  auto cb = CbamParams<double>::zeros(8, 4, 3);
  cb.fc1_weight = randn(r, cb.fc1_weight.shape());
  cb.fc2_weight = randn(r, cb.fc2_weight.shape());
  cb.spatial_weight = randn(r, cb.spatial_weight.shape());
  CHECK(awb::test::bit_equal(icbam_forward(zero, cb), zero));
  auto nl = NonLocalParams<double>::zeros(8);
  nl.theta_weight = randn(r, nl.theta_weight.shape());
  nl.phi_weight = randn(r, nl.phi_weight.shape());
  nl.g_weight = randn(r, nl.g_weight.shape());
  nl.h_weight = randn(r, nl.h_weight.shape());
  CHECK(awb::test::bit_equal(nonlocal_forward(zero, nl, false), zero));
  CHECK(awb::test::bit_equal(nonlocal_forward(zero, nl, true), zero));
}

TEST_CASE("non-local block with zero h is the identity") {
  RngStream r(3, 3);
  auto p = random_nonlocal(r, 8);
  p.h_weight = TensorD(p.h_weight.shape(), 0.0);
  p.h_bias = TensorD(p.h_bias.shape(), 0.0);
  const auto f = randn(r, {2, 8, 5, 3});
  CHECK(awb::test::bit_equal(nonlocal_forward(f, p, true), f));
  CHECK(awb::test::bit_equal(nonlocal_forward(f, p, false), f));
}

TEST_CASE("attention maps lie strictly inside (0, 1)") {
  RngStream r(4, 4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = random_cbam(r, 8, 2, 3);
    const auto f = randn(r, {2, 8, 4, 3});
    const auto mc = cbam_channel_map(f, p);
    const auto ms = cbam_spatial_map(f, p);
    CHECK(mc.shape() == Shape{2, 8, 1, 1});
    CHECK(ms.shape() == Shape{2, 1, 4, 3});
    for (auto v : mc.data()) REQUIRE((v > 0.0 && v < 1.0));
    for (auto v : ms.data()) REQUIRE((v > 0.0 && v < 1.0));
  }
}

TEST_CASE("improved CBAM matches the loop oracle") {
  RngStream r(5, 5);
  for (int trial = 0; trial < 30; ++trial) {
    const auto p = random_cbam(r, 8, 4, trial % 2 ? 3 : 7);
    const auto f = randn(r, {2, 8, 5, 4});
    CHECK(awb::test::max_abs_diff(icbam_forward(f, p), cbam_oracle(f, p)) < 1e-10);
  }
}

TEST_CASE("non-local block matches the loop oracle") {
  RngStream r(6, 6);
  for (int trial = 0; trial < 30; ++trial) {
    auto p = random_nonlocal(r, 6);
    const auto f = randn(r, {2, 6, 4, 3});
    CHECK(awb::test::max_abs_diff(nonlocal_forward(f, p, false), nonlocal_oracle(f, p)) < 1e-10);
  }
}

TEST_CASE("initialization") {
  RngStream a(7, 1), b(7, 2), a2(7, 1);
  auto m1 = AttentionModule<float>::init(AttentionKind::icbam, 32, a);
  auto m2 = AttentionModule<float>::init(AttentionKind::icbam, 32, b);
  auto m3 = AttentionModule<float>::init(AttentionKind::icbam, 32, a2);
  CHECK_FALSE(awb::test::bit_equal(m1.parameters()[0].tensor, m2.parameters()[0].tensor));
  for (std::size_t i = 0; i < m1.parameters().size(); ++i) {
    CHECK(awb::test::bit_equal(m1.parameters()[i].tensor, m3.parameters()[i].tensor));
  }
  RngStream c(8, 1);
  auto nl = AttentionModule<float>::init(AttentionKind::nonlocal, 16, c);
  const auto f = randn<float>(c, {2, 16, 4, 4});
  CHECK(awb::test::bit_equal(nl.forward(f, true), f));
  CHECK(nl.kind() == AttentionKind::nonlocal);
  auto none = AttentionModule<float>::init(AttentionKind::none, 16, c);
  CHECK(none.parameter_count() == 0);
  CHECK(awb::test::bit_equal(none.forward(f, true), f));
}

TEST_CASE("parameter counts") {
  // Shared MLP weights 2 * C * C/r, biases C/r + C, spatial conv 2 k^2 + 1.
  CHECK(icbam_parameter_count(256, 16, 7) == 256 * 16 + 16 + 16 * 256 + 256 + 7 * 7 * 2 + 1);
  CHECK(icbam_parameter_count(256, 16, 7) == 8563);
  RngStream r(9, 9);
  CHECK(AttentionModule<float>::init(AttentionKind::icbam, 256, r).parameter_count() == 8563);
  // theta, phi, g: C * C/2 + C/2 each; g's batch norm: 2 * C/2; h: C/2 * C + C.
  CHECK(nonlocal_parameter_count(64) == 3 * (64 * 32 + 32) + 2 * 32 + 32 * 64 + 64);
  CHECK(AttentionModule<float>::init(AttentionKind::nonlocal, 64, r).parameter_count() == nonlocal_parameter_count(64));
}

TEST_CASE("construction and shape errors") {
  CHECK_THROWS_AS(NonLocalParams<float>::zeros(7), std::invalid_argument);
  CHECK_THROWS_AS(CbamParams<float>::zeros(10, 4), std::invalid_argument);
  CHECK_THROWS_AS(CbamParams<float>::zeros(16, 4, 4), std::invalid_argument);
  auto p = CbamParams<float>::zeros(16, 4, 3);
  CHECK_THROWS_AS(icbam_forward(TensorF(Shape{1, 8, 4, 4}), p), std::invalid_argument);
  CHECK(parse_attention_kind(to_string(AttentionKind::icbam)) == AttentionKind::icbam);
  CHECK_THROWS_AS(parse_attention_kind("softmax"), std::invalid_argument);
}
