#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "samba/errors.hpp"
#include "samba/ops.hpp"
#include "samba/scan.hpp"
#include "samba/ssm.hpp"

using namespace samba;

namespace {

Tensor random_tensor(Shape shape, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v));
}

// Closed-form ZOH evaluation, independent of the production path: direct
// (e^z - 1)/a * b away from zero and a long-double Taylor series near it.
void zoh_closed_form(double a, double b, double dt, double& a_bar, double& b_bar) {
  const long double z = static_cast<long double>(dt) * a;
  a_bar = static_cast<double>(expl(z));
  if (fabsl(z) > 1e-3) {
    b_bar = static_cast<double>((expl(z) - 1.0L) / a * b);
  } else {
    long double series = 0.0L;  // sum z^{k-1}/k!
    long double term = 1.0L;
    for (int k = 1; k <= 12; ++k) {
      term /= k;
      series += term;
      term *= z;
    }
    b_bar = static_cast<double>(series * dt * b);
  }
}

// Materialized sum form of the recurrence: y_k = sum_{j<=k} <c_k, P_{j+1..k} b_j> x_j + d x_k.
std::vector<double> scan_sum_form(int len, int ds, const std::vector<double>& abar,
                                  const std::vector<double>& bbar,
                                  const std::vector<double>& c, double d,
                                  const std::vector<double>& x) {
  std::vector<double> y(static_cast<size_t>(len), 0.0);
  for (int k = 0; k < len; ++k) {
    double acc = d * x[static_cast<size_t>(k)];
    for (int j = 0; j <= k; ++j) {
      for (int n = 0; n < ds; ++n) {
        double prod = 1.0;
        for (int i = j + 1; i <= k; ++i) prod *= abar[static_cast<size_t>(i * ds + n)];
        acc += c[static_cast<size_t>(k * ds + n)] * prod *
               bbar[static_cast<size_t>(j * ds + n)] * x[static_cast<size_t>(j)];
      }
    }
    y[static_cast<size_t>(k)] = acc;
  }
  return y;
}

SsmLaneParams random_lane(int bs, int len, int di, int ds, uint64_t seed) {
  SsmLaneParams p;
  p.a = random_tensor({di, ds}, seed, -2.0, -0.05);
  p.d = random_tensor({di}, seed + 1, -0.5, 0.5);
  p.b_t = random_tensor({bs, len, ds}, seed + 2);
  p.c_t = random_tensor({bs, len, ds}, seed + 3);
  p.delta = random_tensor({bs, len, di}, seed + 4, 0.01, 0.2);
  return p;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape == b.shape);
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::fabs((*a.data)[i] - (*b.data)[i]));
  return m;
}

Parameter make_param(const std::string& name, Shape shape, uint64_t seed, double lo = -1.0,
                     double hi = 1.0) {
  Rng rng(seed);
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Parameter(name, std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("zoh scalar cases") {
  PrecisionGuard g(Precision::f64);

  // A = -1, delta = ln 2, B = 1 -> a_bar = 0.5, b_bar = 0.5
  Tensor a = Tensor::from({1, 1}, {-1.0});
  Tensor b = Tensor::from({1, 1, 1}, {1.0});
  Tensor dt = Tensor::from({1, 1, 1}, {std::log(2.0)});
  DiscreteLaneParams dp = zoh_discretize(a, b, dt);
  CHECK(dp.a_bar.value() == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(dp.b_bar.value() == doctest::Approx(0.5).epsilon(1e-12));

  // delta -> 0+: a_bar -> 1, b_bar -> delta * b -> 0
  Tensor tiny = Tensor::from({1, 1, 1}, {1e-12});
  dp = zoh_discretize(a, b, tiny);
  CHECK(dp.a_bar.value() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(dp.b_bar.value() == doctest::Approx(1e-12).epsilon(1e-9));

  // |delta * a| = 1e-9: b_bar agrees with delta * b within 1e-9 relative
  Tensor a9 = Tensor::from({1, 1}, {-1e-6});
  Tensor d9 = Tensor::from({1, 1, 1}, {1e-3});
  dp = zoh_discretize(a9, b, d9);
  CHECK(std::fabs(dp.b_bar.value() - 1e-3) / 1e-3 <= 1e-9);

  CHECK_THROWS_AS(zoh_discretize(a, b, Tensor::from({1, 1, 1}, {0.0})), ContractError);
  CHECK_THROWS_AS(zoh_discretize(a, b, Tensor::from({1, 1, 1}, {-0.1})), ContractError);
}

TEST_CASE("zoh matches the closed form over random lanes") {
  PrecisionGuard g(Precision::f64);
  Rng rng(2024);
  const int trials = 10000;
  // spans the tiny |delta*a| series branch as well as the ordinary range
  for (int t = 0; t < trials; ++t) {
    const double a = -std::exp(rng.uniform(std::log(1e-7), std::log(4.0)));
    const double b = rng.uniform(-2.0, 2.0);
    const double dt = std::exp(rng.uniform(std::log(1e-5), std::log(0.5)));
    Tensor ta = Tensor::from({1, 1}, {a});
    Tensor tb = Tensor::from({1, 1, 1}, {b});
    Tensor tdt = Tensor::from({1, 1, 1}, {dt});
    DiscreteLaneParams dp = zoh_discretize(ta, tb, tdt);
    double ra, rb;
    zoh_closed_form(a, b, dt, ra, rb);
    CHECK(std::fabs(dp.a_bar.value() - ra) / std::max(1e-300, std::fabs(ra)) <= 1e-9);
    const double scale_b = std::max(1e-12, std::fabs(rb));
    CHECK(std::fabs(dp.b_bar.value() - rb) / scale_b <= 1e-9);
  }
}

TEST_CASE("sequential scan examples") {
  PrecisionGuard g(Precision::f64);

  // zero input keeps the state at zero
  SsmLaneParams p = random_lane(2, 5, 3, 2, 77);
  Tensor zero = Tensor::zeros({2, 5, 3});
  CHECK(max_abs_diff(selective_scan_sequential(zero, p), zero) == 0.0);

  // L = 1 unroll: y = c * b_bar * x + d * x
  SsmLaneParams p1 = random_lane(1, 1, 1, 1, 78);
  Tensor x1 = Tensor::from({1, 1, 1}, {0.7});
  DiscreteLaneParams dp = zoh_discretize(p1.a, p1.b_t, p1.delta);
  const double expect = p1.c_t.value() * dp.b_bar.value() * 0.7 + p1.d.value() * 0.7;
  CHECK(selective_scan_sequential(x1, p1).value() == doctest::Approx(expect).epsilon(1e-12));

  // scalar lane, fixed discrete params: impulse response 1, 0.5, 0.25
  Tensor abar = Tensor::from({1, 3, 1, 1}, {0.5, 0.5, 0.5});
  Tensor bbar = Tensor::from({1, 3, 1, 1}, {1.0, 1.0, 1.0});
  Tensor c = Tensor::from({1, 3, 1}, {1.0, 1.0, 1.0});
  Tensor d = Tensor::from({1}, {0.0});
  Tensor x = Tensor::from({1, 3, 1}, {1.0, 0.0, 0.0});
  Tensor y = scan_discrete_sequential(x, DiscreteLaneParams{abar, bbar}, c, d);
  CHECK(max_abs_diff(y, Tensor::from({1, 3, 1}, {1.0, 0.5, 0.25})) < 1e-15);
}

TEST_CASE("sequential scan equals the materialized sum form") {
  PrecisionGuard g(Precision::f64);
  Rng rng(3001);
  for (int trial = 0; trial < 100; ++trial) {
    const int len = 1 + static_cast<int>(rng.next() % 16);
    const int ds = 1 + static_cast<int>(rng.next() % 4);
    SsmLaneParams p = random_lane(1, len, 1, ds, 4000 + static_cast<uint64_t>(trial));
    Tensor x = random_tensor({1, len, 1}, 5000 + static_cast<uint64_t>(trial));
    DiscreteLaneParams dp = zoh_discretize(p.a, p.b_t, p.delta);
    Tensor y = scan_discrete_sequential(x, dp, p.c_t, p.d);

    std::vector<double> ab(dp.a_bar.data->begin(), dp.a_bar.data->end());
    std::vector<double> bb(dp.b_bar.data->begin(), dp.b_bar.data->end());
    std::vector<double> cc(p.c_t.data->begin(), p.c_t.data->end());
    std::vector<double> xx(x.data->begin(), x.data->end());
    std::vector<double> ref = scan_sum_form(len, ds, ab, bb, cc, p.d.value(), xx);
    for (int k = 0; k < len; ++k)
      CHECK(std::fabs((*y.data)[k] - ref[static_cast<size_t>(k)]) <= 1e-10);
  }
}

TEST_CASE("chunked scan equals sequential") {
  PrecisionGuard g64(Precision::f64);
  SsmLaneParams p = random_lane(2, 16, 3, 4, 91);
  Tensor x = random_tensor({2, 16, 3}, 92);
  DiscreteLaneParams dp = zoh_discretize(p.a, p.b_t, p.delta);
  Tensor seq = scan_discrete_sequential(x, dp, p.c_t, p.d);

  // chunk == L collapses to the sequential code path, bit for bit
  CHECK(max_abs_diff(scan_discrete_chunked(x, dp, p.c_t, p.d, 16), seq) == 0.0);
  // degenerate and interior chunk sizes
  CHECK(max_abs_diff(scan_discrete_chunked(x, dp, p.c_t, p.d, 1), seq) <= 1e-10);
  CHECK(max_abs_diff(scan_discrete_chunked(x, dp, p.c_t, p.d, 4), seq) <= 1e-10);
  CHECK(max_abs_diff(scan_discrete_chunked(x, dp, p.c_t, p.d, 5), seq) <= 1e-10);
}

TEST_CASE("chunk invariance in 32-bit mode at L=256") {
  PrecisionGuard g(Precision::f32);
  SsmLaneParams p = random_lane(1, 256, 2, 4, 93);
  Tensor x = random_tensor({1, 256, 2}, 94);
  DiscreteLaneParams dp = zoh_discretize(p.a, p.b_t, p.delta);
  Tensor ref = scan_discrete_sequential(x, dp, p.c_t, p.d);
  double ref_scale = 0.0;
  for (int64_t i = 0; i < ref.numel(); ++i)
    ref_scale = std::max(ref_scale, std::fabs((*ref.data)[i]));
  for (int chunk : {1, 4, 16, 64, 256}) {
    Tensor y = scan_discrete_chunked(x, dp, p.c_t, p.d, chunk);
    CHECK(max_abs_diff(y, ref) <= 1e-5 * std::max(1.0, ref_scale));
  }
}

TEST_CASE("causality of the scan") {
  PrecisionGuard g(Precision::f64);
  const int len = 24;
  SsmLaneParams p = random_lane(1, len, 2, 3, 95);
  Tensor x = random_tensor({1, len, 2}, 96);
  DiscreteLaneParams dp = zoh_discretize(p.a, p.b_t, p.delta);
  Tensor base = scan_discrete_sequential(x, dp, p.c_t, p.d);

  Rng rng(97);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = static_cast<int>(rng.next() % len);
    Tensor xp = Tensor::from(x.shape, std::vector<double>(x.data->begin(), x.data->end()));
    for (int t = k; t < len; ++t)
      for (int i = 0; i < 2; ++i)
        (*xp.data)[static_cast<size_t>((t * 2) + i)] += rng.uniform(-3.0, 3.0);
    Tensor yp = scan_discrete_sequential(xp, dp, p.c_t, p.d);
    for (int t = 0; t < k; ++t)
      for (int i = 0; i < 2; ++i)
        CHECK((*yp.data)[static_cast<size_t>(t * 2 + i)] ==
              (*base.data)[static_cast<size_t>(t * 2 + i)]);
  }
}

TEST_CASE("stability bound over a long sequence") {
  PrecisionGuard g(Precision::f64);
  const int len = 16384;
  SsmLaneParams p = random_lane(1, len, 1, 2, 98);
  Tensor x = random_tensor({1, len, 1}, 99, -1.0, 1.0);
  DiscreteLaneParams dp = zoh_discretize(p.a, p.b_t, p.delta);
  Tensor y = scan_discrete_sequential(x, dp, p.c_t, p.d);

  double max_abar = 0.0, max_bbar = 0.0, max_c = 0.0;
  for (int64_t i = 0; i < dp.a_bar.numel(); ++i) {
    max_abar = std::max(max_abar, std::fabs((*dp.a_bar.data)[i]));
    max_bbar = std::max(max_bbar, std::fabs((*dp.b_bar.data)[i]));
  }
  for (int64_t i = 0; i < p.c_t.numel(); ++i)
    max_c = std::max(max_c, std::fabs((*p.c_t.data)[i]));
  REQUIRE(max_abar < 1.0);
  const double h_bound = max_bbar * 1.0 / (1.0 - max_abar);
  const double y_bound = 2 * max_c * h_bound + std::fabs(p.d.value()) * 1.0;
  for (int64_t i = 0; i < y.numel(); ++i) {
    CHECK(std::isfinite((*y.data)[i]));
    CHECK(std::fabs((*y.data)[i]) <= y_bound + 1e-9);
  }
}

TEST_CASE("fixed-parameter scan is exactly homogeneous in x") {
  PrecisionGuard g(Precision::f64);
  SsmLaneParams p = random_lane(1, 12, 2, 3, 100);
  DiscreteLaneParams dp = zoh_discretize(p.a, p.b_t, p.delta);
  Tensor x = random_tensor({1, 12, 2}, 101);
  Tensor y1 = scan_discrete_sequential(x, dp, p.c_t, p.d);
  Tensor y2 = scan_discrete_sequential(scale(x, 2.0), dp, p.c_t, p.d);
  CHECK(max_abs_diff(scale(y1, 2.0), y2) <= 1e-12);
}

TEST_CASE("scan gradients pass the finite-difference oracle") {
  PrecisionGuard g(Precision::f64);
  Parameter a = make_param("a", {2, 3}, 110, -2.0, -0.1);
  Parameter d = make_param("d", {2}, 111);
  Parameter bt = make_param("bt", {1, 4, 3}, 112);
  Parameter ct = make_param("ct", {1, 4, 3}, 113);
  Parameter dt = make_param("dt", {1, 4, 2}, 114, 0.05, 0.3);
  Parameter x = make_param("x", {1, 4, 2}, 115);
  Tensor w = random_tensor({1, 4, 2}, 116);

  double err = finite_difference_check(
      [&] {
        SsmLaneParams p{a.value, d.value, bt.value, ct.value, dt.value};
        return sum(mul(selective_scan_sequential(x.value, p), w));
      },
      {&a, &d, &bt, &ct, &dt, &x});
  CHECK(err <= 1e-5);

  // same check through the chunked path
  err = finite_difference_check(
      [&] {
        SsmLaneParams p{a.value, d.value, bt.value, ct.value, dt.value};
        return sum(mul(selective_scan_chunked(x.value, p, 2), w));
      },
      {&a, &d, &bt, &ct, &dt, &x});
  CHECK(err <= 1e-5);
}

TEST_CASE("selective_projection contracts") {
  PrecisionGuard g(Precision::f64);
  MambaBlockConfig cfg;
  cfg.dim = 4;
  cfg.d_state = 2;
  cfg.expansion = 2;
  cfg.conv_kernel = 3;
  Rng rng(117);
  MambaBlock block("blk", cfg, rng);
  const int di = cfg.d_inner();

  // zero weights: delta = softplus(bias) everywhere
  for (double& v : *block.proj_dt_low.weight.value.data) v = 0.0;
  for (double& v : *block.proj_dt.weight.value.data) v = 0.0;
  Tensor u = random_tensor({1, 3, di}, 118);
  auto proj = block.selective_projection(u);
  for (int t = 0; t < 3; ++t)
    for (int i = 0; i < di; ++i) {
      const double b = (*block.proj_dt.bias.value.data)[static_cast<size_t>(i)];
      const double expect = std::log1p(std::exp(b));
      CHECK(proj.delta.at({0, t, i}) == doctest::Approx(expect).epsilon(1e-9));
    }

  // zero input, zero biases: B = C = 0 and delta = ln 2
  for (double& v : *block.proj_dt.bias.value.data) v = 0.0;
  Tensor zu = Tensor::zeros({1, 3, di});
  proj = block.selective_projection(zu);
  for (int64_t i = 0; i < proj.b_t.numel(); ++i) {
    CHECK((*proj.b_t.data)[i] == 0.0);
    CHECK((*proj.c_t.data)[i] == 0.0);
  }
  for (int64_t i = 0; i < proj.delta.numel(); ++i)
    CHECK((*proj.delta.data)[i] == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // linearity of the B/C projections
  Rng rng2(119);
  MambaBlock fresh("blk2", cfg, rng2);
  auto p1 = fresh.selective_projection(u);
  auto p2 = fresh.selective_projection(scale(u, 2.0));
  CHECK(max_abs_diff(scale(p1.b_t, 2.0), p2.b_t) <= 1e-12);
  CHECK(max_abs_diff(scale(p1.c_t, 2.0), p2.c_t) <= 1e-12);
}

TEST_CASE("mamba block forward contracts") {
  PrecisionGuard g(Precision::f64);
  MambaBlockConfig cfg;
  cfg.dim = 4;
  cfg.d_state = 2;
  cfg.expansion = 2;
  cfg.conv_kernel = 4;
  Rng rng(120);
  MambaBlock block("blk", cfg, rng);

  Tensor x = random_tensor({2, 6, 4}, 121);
  Tensor y = block.forward(x);
  CHECK(y.shape == Shape{2, 6, 4});

  // zero every parameter except the output-projection bias
  std::vector<Parameter*> params;
  block.collect(params);
  for (Parameter* p : params)
    for (double& v : *p->value.data) v = 0.0;
  for (double& v : *block.out_proj.bias.value.data) v = 0.25;
  y = block.forward(x);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK((*y.data)[i] == doctest::Approx(0.25));

  // shape mismatch vs config
  CHECK_THROWS_AS(block.forward(random_tensor({1, 3, 5}, 122)), ShapeError);
}

TEST_CASE("mamba block gradient check") {
  PrecisionGuard g(Precision::f64);
  MambaBlockConfig cfg;
  cfg.dim = 4;
  cfg.d_state = 2;
  cfg.expansion = 2;
  cfg.conv_kernel = 2;
  cfg.dt_rank = 1;
  Rng rng(123);
  MambaBlock block("blk", cfg, rng);
  Parameter x = make_param("x", {1, 4, 4}, 124);
  Tensor w = random_tensor({1, 4, 4}, 125);

  std::vector<Parameter*> params;
  block.collect(params);
  params.push_back(&x);

  double err = finite_difference_check(
      [&] { return sum(mul(block.forward(x.value), w)); }, params);
  CHECK(err <= 1e-5);
}
