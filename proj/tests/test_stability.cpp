#include "fiberlink/stability.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

using namespace fiberlink;

namespace
{

Eigen::VectorXd gaussian(Eigen::Index n, double sigma, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, sigma);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i)
    v[i] = d(rng);
  return v;
}

Eigen::VectorXd cumsum(const Eigen::VectorXd& v)
{
  Eigen::VectorXd out(v.size() + 1);
  out[0] = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    out[i + 1] = out[i] + v[i];
  return out;
}

}  // namespace

TEST_CASE("phase to fractional frequency")
{
  SUBCASE("linear ramp")
  {
    Eigen::VectorXd x(3);
    x << 0.0, 1e-9, 2e-9;
    const auto y = phase_to_frac_freq(PhaseSeries(x, 1.0));
    REQUIRE(y.size() == 2);
    CHECK(y[0] == doctest::Approx(1e-9));
    CHECK(y[1] == doctest::Approx(1e-9));
  }
  SUBCASE("constant phase")
  {
    const auto y = phase_to_frac_freq(PhaseSeries(Eigen::VectorXd::Constant(3, 5e-8), 1.0));
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 0.0);
  }
  SUBCASE("random-walk phase gives white frequency with variance v / tau0^2")
  {
    const double tau0 = 0.5;
    const double v = 4e-24;
    const Eigen::VectorXd steps = gaussian(200000, std::sqrt(v), 11);
    const auto y = phase_to_frac_freq(PhaseSeries(cumsum(steps), tau0));
    const double mean = y.samples().mean();
    const double var = (y.samples().array() - mean).square().sum() / static_cast<double>(y.size() - 1);
    CHECK(var == doctest::Approx(v / (tau0 * tau0)).epsilon(0.02));
  }
}

TEST_CASE("allan deviation identities")
{
  const std::vector<double> taus{1.0, 2.0, 4.0};

  SUBCASE("constant y")
  {
    const auto c = allan_deviation(FracFreqSeries(Eigen::VectorXd::Constant(64, 3e-13), 1.0), taus);
    for (const auto& p : c.points)
      CHECK(p.sigma == 0.0);
  }
  SUBCASE("alternating +a, -a at tau0")
  {
    const double a = 2e-14;
    Eigen::VectorXd y(100);
    for (Eigen::Index i = 0; i < y.size(); ++i)
      y[i] = (i % 2 == 0) ? a : -a;
    const std::vector<double> t1{1.0};
    for (auto est : {Estimator::standard, Estimator::overlapping})
    {
      const auto c = allan_deviation(FracFreqSeries(y, 1.0), t1, est);
      CHECK(c.points.at(0).sigma == doctest::Approx(a * std::sqrt(2.0)));
    }
  }
  SUBCASE("tau not a multiple of tau0 is rejected")
  {
    const std::vector<double> bad{1.5};
    CHECK_THROWS_AS(allan_deviation(FracFreqSeries(Eigen::VectorXd::Zero(10), 1.0), bad), InvalidInput);
  }
  SUBCASE("taus without two averages are omitted")
  {
    const std::vector<double> t{1.0, 8.0, 16.0};
    const auto c = allan_deviation(FracFreqSeries(gaussian(20, 1.0, 3), 1.0), t);
    CHECK(c.points.size() == 2);
    REQUIRE(c.omitted_taus.size() == 1);
    CHECK(c.omitted_taus[0] == 16.0);
  }
}

TEST_CASE("allan deviation properties")
{
  const Eigen::VectorXd y = gaussian(5000, 1e-13, 5);
  const std::vector<double> taus{1.0, 2.0, 5.0, 10.0, 50.0};
  for (auto est : {Estimator::standard, Estimator::overlapping})
  {
    const auto base = allan_deviation(FracFreqSeries(y, 1.0), taus, est);
    const auto scaled = allan_deviation(FracFreqSeries(4.0 * y, 1.0), taus, est);
    const auto shifted = allan_deviation(FracFreqSeries(y.array() + 7e-12, 1.0), taus, est);
    for (std::size_t i = 0; i < base.size(); ++i)
    {
      CHECK(scaled.points[i].sigma == doctest::Approx(4.0 * base.points[i].sigma).epsilon(1e-14));
      CHECK(shifted.points[i].sigma == doctest::Approx(base.points[i].sigma).epsilon(1e-9));
    }
  }

  const std::vector<double> t1{1.0};
  const auto s = allan_deviation(FracFreqSeries(y, 1.0), t1, Estimator::standard);
  const auto o = allan_deviation(FracFreqSeries(y, 1.0), t1, Estimator::overlapping);
  CHECK(s.points[0].sigma == o.points[0].sigma);
  CHECK(s.points[0].n_pairs == o.points[0].n_pairs);
}

TEST_CASE("white FM ensemble matches sqrt(h0 / 2 tau)")
{
  const double h0 = 2e-28;
  const double tau0 = 1.0;
  const double sigma_y = std::sqrt(h0 / (2.0 * tau0));
  const std::vector<double> taus{1.0, 10.0, 100.0};
  std::vector<double> acc(taus.size(), 0.0);
  const int runs = 100;
  for (int r = 0; r < runs; ++r)
  {
    const auto c = allan_deviation(FracFreqSeries(gaussian(10000, sigma_y, 1000 + r), tau0), taus,
                                   Estimator::overlapping);
    for (std::size_t i = 0; i < taus.size(); ++i)
      acc[i] += c.points[i].sigma * c.points[i].sigma;
  }
  for (std::size_t i = 0; i < taus.size(); ++i)
  {
    const double expected = std::sqrt(h0 / (2.0 * taus[i]));
    CHECK(std::sqrt(acc[i] / runs) == doctest::Approx(expected).epsilon(0.1));
  }
}

TEST_CASE("welch psd")
{
  SUBCASE("single tone carries beta^2 / 2")
  {
    const double tau0 = 1e-3;
    const double beta = 0.01;
    const double fm = 31.25;  // exactly on a bin for 1024-sample segments
    Eigen::VectorXd x(16384);
    for (Eigen::Index i = 0; i < x.size(); ++i)
      x[i] = beta * std::sin(2.0 * kPi * fm * static_cast<double>(i) * tau0);
    const auto psd = psd_welch(PhaseSeries(x, tau0), 1024);
    const double power = psd.values.sum() * psd.bin_width;
    CHECK(power == doctest::Approx(beta * beta / 2.0).epsilon(0.02));
    Eigen::Index peak;
    psd.values.maxCoeff(&peak);
    CHECK(psd.freqs[peak] == doctest::Approx(fm));
  }
  SUBCASE("zero input")
  {
    const auto psd = psd_welch(PhaseSeries::zeros(512, 1.0), 128);
    CHECK(psd.values.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("white noise level 2 sigma^2 tau0 and Parseval")
  {
    const double tau0 = 1e-2;
    const double sigma = 1e-3;
    const Eigen::VectorXd x = gaussian(1 << 16, sigma, 21);
    const auto psd = psd_welch(PhaseSeries(x, tau0), 1024);
    const double level = psd.values.mean();
    CHECK(level == doctest::Approx(2.0 * sigma * sigma * tau0).epsilon(0.15));
    const double total = psd.values.sum() * psd.bin_width;
    const double variance = (x.array() - x.mean()).square().mean();
    CHECK(total == doctest::Approx(variance).epsilon(0.05));
  }
  SUBCASE("segment longer than the data")
  {
    CHECK_THROWS_AS(psd_welch(PhaseSeries::zeros(100, 1.0), 200), InvalidInput);
  }
  SUBCASE("hann rbw")
  {
    const auto psd = psd_welch(PhaseSeries::zeros(4096, 1e-3), 4096);
    CHECK(psd.rbw == doctest::Approx(1.5 * psd.bin_width).epsilon(1e-3));
  }
}

TEST_CASE("power-law fit")
{
  SUBCASE("exact tau^-1")
  {
    AdevCurve c;
    for (double t : {1.0, 2.0, 5.0, 10.0})
      c.points.push_back({t, 1e-14 / t, 10});
    const auto f = fit_power_law(c, 1.0, 10.0);
    CHECK(f.exponent == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(f.level == doctest::Approx(1e-14).epsilon(1e-10));
    CHECK(f.points == 4);
  }
  SUBCASE("fewer than three points")
  {
    AdevCurve c;
    c.points.push_back({1.0, 1.0, 1});
    c.points.push_back({2.0, 0.5, 1});
    CHECK_THROWS_AS(fit_power_law(c, 1.0, 10.0), InvalidInput);
  }
  SUBCASE("white FM and random-walk FM slopes")
  {
    const std::vector<double> taus{1, 2, 5, 10, 20, 50, 100};
    std::vector<double> white(taus.size(), 0.0), walk(taus.size(), 0.0);
    const int runs = 40;
    for (int r = 0; r < runs; ++r)
    {
      const Eigen::VectorXd w = gaussian(4000, 1.0, 500 + r);
      const auto cw = allan_deviation(FracFreqSeries(w, 1.0), taus, Estimator::overlapping);
      const auto cr = allan_deviation(FracFreqSeries(cumsum(w), 1.0), taus, Estimator::overlapping);
      for (std::size_t i = 0; i < taus.size(); ++i)
      {
        white[i] += cw.points[i].sigma * cw.points[i].sigma / runs;
        walk[i] += cr.points[i].sigma * cr.points[i].sigma / runs;
      }
    }
    AdevCurve a, b;
    for (std::size_t i = 0; i < taus.size(); ++i)
    {
      a.points.push_back({taus[i], std::sqrt(white[i]), 1});
      b.points.push_back({taus[i], std::sqrt(walk[i]), 1});
    }
    CHECK(fit_power_law(a, 1.0, 100.0).exponent == doctest::Approx(-0.5).epsilon(0.1));
    CHECK(std::abs(fit_power_law(b, 1.0, 100.0).exponent - 0.5) <= 0.05);
  }
}

TEST_CASE("one way from round trip")
{
  AdevCurve c;
  c.points.push_back({1.0, 1.2e-14, 100});
  c.points.push_back({10.0, 0.0, 10});
  const auto half = one_way_from_round_trip(c);
  CHECK(half.points[0].sigma == doctest::Approx(6e-15));
  CHECK(half.points[1].sigma == 0.0);
  CHECK(half.reduction == Reduction::correlated_halving);
  const auto root2 = one_way_from_round_trip(c, Reduction::independent_sqrt2);
  CHECK(root2.points[0].sigma == doctest::Approx(1.2e-14 / std::sqrt(2.0)));
}

TEST_CASE("decade grid")
{
  const auto t = decade_taus(1.0, 1000.0);
  const std::vector<double> expected{1, 2, 5, 10, 20, 50, 100, 200};
  CHECK(t == expected);
}
