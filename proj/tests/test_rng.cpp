#include <cmath>
#include <set>

#include "doctest.h"
#include "nps/rng.hpp"

TEST_CASE("same seed reproduces the stream") {
  nps::Rng a(123), b(123);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("different seeds diverge") {
  nps::Rng a(1), b(2);
  int same = 0;
  for (int i = 0; i < 100; ++i)
    if (a.next_u64() == b.next_u64()) ++same;
  CHECK(same == 0);
}

TEST_CASE("uniform stays in range") {
  nps::Rng rng(7);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const double v = rng.uniform(-3.0, 5.0);
    CHECK(v >= -3.0);
    CHECK(v < 5.0);
  }
}

TEST_CASE("uniform_int covers its range") {
  nps::Rng rng(11);
  std::set<int> seen;
  for (int i = 0; i < 1000; ++i) {
    const int v = rng.uniform_int(7);
    CHECK(v >= 0);
    CHECK(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
}

TEST_CASE("normal has approximately unit variance and zero mean") {
  nps::Rng rng(42);
  const int n = 100000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sum2 += x * x;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("fork gives an independent stream without advancing the parent") {
  nps::Rng a(5);
  nps::Rng b = a.fork(1);
  nps::Rng c(5);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == c.next_u64());
  nps::Rng b2 = nps::Rng(5).fork(1);
  for (int i = 0; i < 100; ++i) CHECK(b.next_u64() == b2.next_u64());
  CHECK(nps::Rng(5).fork(1).next_u64() != nps::Rng(5).fork(2).next_u64());
}
