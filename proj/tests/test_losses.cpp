#include <doctest.h>

#include <cmath>
#include <limits>

#include "causerec/errors.hpp"
#include "causerec/losses.hpp"
#include "causerec/rng.hpp"

using namespace causerec;

namespace {

std::vector<Dense1> points(std::initializer_list<double> xs) {
  std::vector<Dense1> out;
  for (double x : xs) out.push_back(Dense1{x});
  return out;
}

Dense1 random_vec(Rng& rng, std::size_t d) {
  Dense1 v(d);
  for (std::size_t i = 0; i < d; ++i) v[i] = rng.uniform(-1, 1);
  return v;
}

}  // namespace

TEST_CASE("loss_co examples") {
  const Dense1 origin{0.0};
  CHECK(loss_co(origin, points({0.5}), points({2.0}), 1.0) == 0.0);
  CHECK(loss_co(origin, points({1.5}), points({-1.5}), 1.0) == 1.0);
  // Pair hinges: (1,3) -> 0, (1,1) -> 1, (0.3,3) -> 0, (0.3,1) -> 0.3.
  CHECK(std::abs(loss_co(origin, points({1.0, 0.3}), points({3.0, 1.0}), 1.0) - 1.3) < 1e-15);
  CHECK_THROWS_AS(loss_co(origin, {}, points({1.0}), 1.0), ConfigError);
}

TEST_CASE("loss_co is non-negative and vanishes past the margin") {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const Dense1 xq = random_vec(rng, 4);
    std::vector<Dense1> pos, neg;
    for (std::size_t m = 0; m < 1 + rng.uniform_index(3); ++m) pos.push_back(random_vec(rng, 4));
    for (std::size_t n = 0; n < 1 + rng.uniform_index(5); ++n) neg.push_back(random_vec(rng, 4));
    CHECK(loss_co(xq, pos, neg, 1.0) >= 0.0);

    // Positives within 0.1 of xq, negatives at distance >= 2: all hinges inactive.
    std::vector<Dense1> near, far;
    for (std::size_t m = 0; m < pos.size(); ++m) {
      Dense1 v = xq;
      v[m % 4] += 0.1 * rng.uniform01();
      near.push_back(v);
    }
    for (std::size_t n = 0; n < neg.size(); ++n) {
      Dense1 v = xq;
      v[n % 4] += (rng.uniform01() < 0.5 ? -1 : 1) * (2.0 + rng.uniform01());
      far.push_back(v);
    }
    CHECK(loss_co(xq, near, far, 1.0) == 0.0);
  }
}

TEST_CASE("loss_ii examples") {
  const Dense1 y{3.0, 4.0};
  CHECK(std::abs(loss_ii({Dense1{6.0, 8.0}}, {}, y, 0.5)) < 1e-15);
  // Unit negatives with cosine 0.4 and 0.9 against y~ = (0.6, 0.8).
  const Dense1 y_unit{0.6, 0.8};
  auto with_cos = [&](double c) {
    const double s = std::sqrt(1 - c * c);
    return Dense1{c * 0.6 - s * 0.8, c * 0.8 + s * 0.6};
  };
  CHECK(std::abs(loss_ii({}, {with_cos(0.4)}, y_unit, 0.5)) < 1e-15);
  CHECK(std::abs(loss_ii({}, {with_cos(0.9)}, y_unit, 0.5) - 0.4) < 1e-12);
  CHECK_THROWS_AS(loss_ii({Dense1{0.0, 0.0}}, {}, y, 0.5), DegenerateVectorError);
  CHECK_THROWS_AS(loss_ii({Dense1{1.0, 0.0}}, {}, Dense1{0.0, 0.0}, 0.5), DegenerateVectorError);
  CHECK_THROWS_AS(loss_ii({}, {}, y, 0.5), ConfigError);
}

TEST_CASE("loss_ii positive terms lie in [0, 2] and negative terms are non-negative") {
  Rng rng(13);
  for (int trial = 0; trial < 300; ++trial) {
    const Dense1 y = random_vec(rng, 5);
    const double p = loss_ii({random_vec(rng, 5)}, {}, y, 0.5);
    CHECK(p >= -1e-15);
    CHECK(p <= 2.0 + 1e-15);
    CHECK(loss_ii({}, {random_vec(rng, 5), random_vec(rng, 5)}, y, 0.5) >= 0.0);
  }
}

TEST_CASE("loss_total") {
  const auto b = loss_total(1.0, 0.5, 0.2, 1, 1);
  CHECK(std::abs(b.total - 1.7) < 1e-15);
  CHECK(b.matching == 1.0);
  CHECK(b.co == 0.5);
  CHECK(b.ii == 0.2);
  CHECK(loss_total(0.8, 3.0, 2.0, 0, 0).total == 0.8);
  CHECK(loss_total(0.8, 0, 0, 1, 1).total == 0.8);
  CHECK_THROWS_AS(loss_total(std::numeric_limits<double>::infinity(), 0, 0, 1, 1), DivergenceError);
  CHECK_THROWS_AS(loss_total(1, std::nan(""), 0, 1, 1), DivergenceError);
}

TEST_CASE("loss breakdown total identity holds on random components") {
  Rng rng(14);
  for (int trial = 0; trial < 500; ++trial) {
    const double m = rng.uniform(0, 5), c = rng.uniform(0, 20), i = rng.uniform(0, 10);
    const double l1 = rng.uniform(0, 2), l2 = rng.uniform(0, 2);
    const auto b = loss_total(m, c, i, l1, l2);
    CHECK(std::abs(b.total - (m + l1 * c + l2 * i)) < 1e-12);
  }
}

TEST_CASE("loss breakdown serializes as one JSON object") {
  const auto s = loss_total(1.0, 0.5, 0.25, 1, 1).to_json();
  CHECK(s.find("\"matching\":1.0") != std::string::npos);
  CHECK(s.find("\"total\":1.75") != std::string::npos);
  CHECK(s.find('\n') == std::string::npos);
}
