#include <doctest.h>

#include "oracles.hpp"

#include <udiffse/noise_nmf.hpp>

#include <cmath>

using namespace udiffse;

TEST_CASE("itakura-saito divergence") {
  Rng rng(1);
  const RMatrix V = oracle::random_positive(6, 7, rng);
  CHECK(is_divergence(V, V) == 0.0);
  for (int k = 0; k < 20; ++k) CHECK(is_divergence(V, oracle::random_positive(6, 7, rng)) >= 0.0);

  RMatrix a(1, 1), b(1, 1);
  a << 4.0;
  b << 2.0;
  CHECK(is_divergence(a, b) == doctest::Approx(2.0 - std::log(2.0) - 1.0).epsilon(1e-15));
  CHECK(is_divergence(a, b) == doctest::Approx(0.306853).epsilon(1e-6));

  a << 0.0;
  CHECK(std::isinf(is_divergence(a, b)));
  b << 0.0;
  CHECK_THROWS_AS(is_divergence(RMatrix::Ones(1, 1), b), std::invalid_argument);
  CHECK_THROWS_AS(is_divergence(RMatrix::Ones(2, 1), RMatrix::Ones(1, 2)), std::invalid_argument);
}

TEST_CASE("an exact factorisation is a fixed point") {
  Rng rng(2);
  NmfModel<double> m;
  m.W = oracle::random_positive(8, 3, rng);
  m.H = oracle::random_positive(3, 9, rng);
  const RMatrix V = m.W * m.H;
  const NmfModel<double> next = mu_update_step(m, V);
  CHECK((next.W - m.W).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((next.H - m.H).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("scalar update by hand") {
  NmfModel<double> m;
  m.W = RMatrix::Constant(1, 1, 1.0);
  m.H = RMatrix::Constant(1, 1, 2.0);
  mu_update(m, RMatrix::Constant(1, 1, 4.0));
  // H <- 2 * (4/4) / (1/2) = 4, then W <- 1 * (4/16) / (1/4) = 1
  CHECK(m.H(0, 0) == doctest::Approx(4.0).epsilon(1e-15));
  CHECK(m.W(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("updates never increase the divergence") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const RMatrix V = oracle::random_positive(16, 20, rng, 0.01, 3.0);
    NmfModel<double> m = init_nmf<double>(16, 20, 4, V.mean(), rng);
    double prev = is_divergence(V, m.variance());
    for (int k = 0; k < 100; ++k) {
      mu_update(m, V);
      const double d = is_divergence(V, m.variance());
      CHECK(d <= prev * (1 + 1e-12) + 1e-12);
      prev = d;
      CHECK((m.W.array() >= m.floor).all());
      CHECK((m.H.array() >= m.floor).all());
    }
  }
}

TEST_CASE("init and validation") {
  Rng rng(3);
  const NmfModel<double> m = init_nmf<double>(10, 12, 3, 0.5, rng);
  CHECK(m.rank() == 3);
  CHECK(m.bins() == 10);
  CHECK(m.frames() == 12);
  CHECK(m.variance().mean() == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(m.noise_variance().size() == 120);
  m.validate();
  CHECK_THROWS_AS(init_nmf<double>(0, 2, 1, 1.0, rng), std::invalid_argument);
  CHECK_THROWS_AS(init_nmf<double>(2, 2, 1, 0.0, rng), std::invalid_argument);
  NmfModel<double> bad = m;
  bad.H(0, 0) = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK_THROWS_AS(mu_update(bad, RMatrix::Ones(3, 3)), std::invalid_argument);
  const NmfModel<float> f = init_nmf<float>(4, 4, 2, 1.0f, rng);
  CHECK(f.variance().mean() == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("log-likelihood links to the divergence") {
  // -log p(x|s) = IS(|x-s|^2, WH) + const, the constant independent of W, H.
  Rng rng(4);
  const CMatrix x = oracle::random_complex(5, 6, rng), s = oracle::random_complex(5, 6, rng);
  const RMatrix P = (x - s).cwiseAbs2();
  const NmfModel<double> a = init_nmf<double>(5, 6, 2, 1.0, rng), b = init_nmf<double>(5, 6, 2, 2.0, rng);
  const double ca = -noise_log_likelihood(a, x, s) - is_divergence(P, a.variance());
  const double cb = -noise_log_likelihood(b, x, s) - is_divergence(P, b.variance());
  CHECK(ca == doctest::Approx(cb).epsilon(1e-12));
  const double direct = (std::log(M_PI) + P.array().log() + 1.0).sum();
  CHECK(ca == doctest::Approx(direct).epsilon(1e-12));
  CHECK(noise_log_likelihood(a, x, s) ==
        doctest::Approx(oracle::log_complex_gaussian(x, s, a.variance())).epsilon(1e-12));
}
