#include <cmath>
#include <random>
#include <stdexcept>

#include "doctest.h"
#include "rlempc/mlp.hpp"

using namespace rlempc;

namespace {

// Straight-line forward pass over the documented parameter layout.
std::vector<double> oracle_forward(const MlpNet& net, std::vector<double> a) {
  const auto& sz = net.layer_sizes();
  const auto p = net.parameters();
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < sz.size(); ++l) {
    const int in = sz[l], out = sz[l + 1];
    std::vector<double> z(out);
    for (int o = 0; o < out; ++o) {
      double s = p[off + out * in + o];
      for (int i = 0; i < in; ++i) s += p[off + o * in + i] * a[i];
      const bool last = l + 2 == sz.size();
      z[o] = last ? (net.output_activation() == OutputActivation::tanh ? std::tanh(s) : s) : std::max(0.0, s);
    }
    off += out * (in + 1);
    a = z;
  }
  return a;
}

// Scalar loss L = sum_o w_o * y_o so dL/dy = w.
double weighted(const std::vector<double>& y, const std::vector<double>& w) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * y[i];
  return s;
}

double max_gradient_error(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  MlpNet net({8, 16, 16, 6}, OutputActivation::tanh);
  net.initialize(rng, 0.5);
  std::normal_distribution<double> n(0, 1);
  std::vector<double> x(8), w(6);
  for (auto& v : x) v = n(rng);
  for (auto& v : w) v = n(rng);
  MlpNet::Cache cache;
  net.forward(x, cache);
  std::vector<double> g(net.parameter_count(), 0.0);
  net.backward(cache, w, g);
  double worst = 0;
  const double h = 1e-5;
  for (std::size_t i = 0; i < net.parameter_count(); ++i) {
    const double keep = net.parameters()[i];
    net.parameters()[i] = keep + h;
    const double fp = weighted(net.forward(x), w);
    net.parameters()[i] = keep - h;
    const double fm = weighted(net.forward(x), w);
    net.parameters()[i] = keep;
    const double fd = (fp - fm) / (2 * h);
    const double err = std::abs(fd - g[i]) / std::max(1e-6, std::max(std::abs(fd), std::abs(g[i])));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace

TEST_CASE("parameter count follows layer sizes") {
  MlpNet net({8, 64, 64, 6}, OutputActivation::tanh);
  CHECK(net.parameter_count() == static_cast<std::size_t>(64 * 9 + 64 * 65 + 6 * 65));
  CHECK_THROWS_AS(MlpNet({8}, OutputActivation::tanh), std::invalid_argument);
  CHECK_THROWS_AS(MlpNet({8, 0, 1}, OutputActivation::tanh), std::invalid_argument);
}

TEST_CASE("forward matches a straight-line oracle") {
  std::mt19937_64 rng(1);
  for (auto act : {OutputActivation::tanh, OutputActivation::identity}) {
    MlpNet net({14, 32, 32, 1}, act);
    net.initialize(rng, 0.3);
    std::normal_distribution<double> n(0, 1);
    for (int t = 0; t < 20; ++t) {
      std::vector<double> x(14);
      for (auto& v : x) v = n(rng);
      const auto y = net.forward(x);
      const auto r = oracle_forward(net, x);
      CHECK(std::abs(y[0] - r[0]) < 1e-12);
    }
  }
}

TEST_CASE("forward rejects the wrong input size") {
  MlpNet net({3, 4, 2}, OutputActivation::identity);
  CHECK_THROWS_AS(net.forward(std::vector<double>(2)), std::invalid_argument);
}

TEST_CASE("backward agrees with central differences on 10 random nets") {
  for (std::uint64_t s = 0; s < 10; ++s) CHECK(max_gradient_error(100 + s) < 1e-4);
}

TEST_CASE("zero upstream gives zero gradient") {
  std::mt19937_64 rng(2);
  MlpNet net({8, 16, 16, 6}, OutputActivation::tanh);
  net.initialize(rng);
  MlpNet::Cache c;
  net.forward(std::vector<double>(8, 0.3), c);
  std::vector<double> g(net.parameter_count(), 0.0);
  const auto din = net.backward(c, std::vector<double>(6, 0.0), g);
  for (double v : g) CHECK(v == 0.0);
  for (double v : din) CHECK(v == 0.0);
}

TEST_CASE("2-2-1 net in its linear region has the hand-computed gradient") {
  // W1 = [[1,2],[3,4]], b1 = [0.5,0.5], W2 = [1,-1], b2 = 0.25, x = [1,1].
  MlpNet net({2, 2, 1}, OutputActivation::identity);
  auto p = net.parameters();
  const double vals[] = {1, 2, 3, 4, 0.5, 0.5, 1, -1, 0.25};
  std::copy(std::begin(vals), std::end(vals), p.begin());
  const std::vector<double> x{1, 1};
  MlpNet::Cache c;
  const auto y = net.forward(x, c);
  // hidden = [3.5, 7.5], y = 3.5 - 7.5 + 0.25
  CHECK(y[0] == doctest::Approx(-3.75));
  std::vector<double> g(9, 0.0);
  const auto din = net.backward(c, std::vector<double>{1.0}, g);
  const double expect[] = {1, 1, -1, -1, 1, -1, 3.5, 7.5, 1};
  for (int i = 0; i < 9; ++i) CHECK(g[i] == doctest::Approx(expect[i]));
  // dy/dx = W2 W1 = [1*1 - 3, 2 - 4]
  CHECK(din[0] == doctest::Approx(-2));
  CHECK(din[1] == doctest::Approx(-2));
}

TEST_CASE("soft update limits") {
  std::mt19937_64 rng(4);
  MlpNet a({3, 5, 2}, OutputActivation::tanh), b({3, 5, 2}, OutputActivation::tanh);
  a.initialize(rng);
  b.initialize(rng);
  const std::vector<double> before(b.parameters().begin(), b.parameters().end());
  a.soft_update_into(b, 0.0);
  CHECK(std::equal(before.begin(), before.end(), b.parameters().begin()));
  a.soft_update_into(b, 1.0);
  CHECK(std::equal(a.parameters().begin(), a.parameters().end(), b.parameters().begin()));
  MlpNet c({3, 4, 2}, OutputActivation::tanh);
  CHECK_THROWS_AS(a.soft_update_into(c, 0.5), std::invalid_argument);
}

TEST_CASE("Adam decreases a quadratic") {
  std::vector<double> p{3.0, -2.0};
  AdamOptimizer opt(2, 0.1);
  for (int i = 0; i < 500; ++i) {
    std::vector<double> g{2 * p[0], 2 * p[1]};
    opt.step(p, g);
  }
  CHECK(std::abs(p[0]) < 1e-2);
  CHECK(std::abs(p[1]) < 1e-2);
}

TEST_CASE("finite input gives finite output") {
  std::mt19937_64 rng(8);
  MlpNet net({8, 64, 64, 6}, OutputActivation::tanh);
  net.initialize(rng);
  const auto y = net.forward(std::vector<double>(8, 1e6));
  for (double v : y) CHECK(std::isfinite(v));
}
