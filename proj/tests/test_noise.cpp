#include "fiberlink/noise.hpp"
#include "fiberlink/stability.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace fiberlink;

namespace
{

double rms(const Eigen::VectorXd& v)
{
  return std::sqrt(v.squaredNorm() / static_cast<double>(v.size()));
}

NoiseSpec single(int alpha, double h)
{
  NoiseSpec s;
  s.powerlaw.push_back({alpha, h});
  return s;
}

double ensemble_adev(PowerLawTerm term, double tau, Eigen::Index n, int runs)
{
  const std::vector<double> taus{tau};
  double acc = 0.0;
  for (int r = 0; r < runs; ++r)
  {
    const auto x = gen_power_law_term(term, n, 1.0, Seed{static_cast<std::uint64_t>(700 + r)});
    const auto c = allan_deviation(x, taus, Estimator::overlapping);
    acc += c.points[0].sigma * c.points[0].sigma;
  }
  return std::sqrt(acc / runs);
}

}  // namespace

TEST_CASE("zero spec gives zeros")
{
  NoiseSpec s;
  s.powerlaw.push_back({0, 0.0});
  const auto x = gen_noise(s, 1000, 1.0, Seed{1});
  CHECK(x.samples().cwiseAbs().maxCoeff() == 0.0);
  CHECK(gen_diurnal(0.0, 86400.0, 0.0, 100, 1.0).samples().cwiseAbs().maxCoeff() == 0.0);
  CHECK(gen_bursts(BurstSpec{}, 100, 1.0, Seed{1}).samples().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("white FM calibration")
{
  const double h0 = 2e-28;
  CHECK(powerlaw_adev({0, h0}, 1.0, 1.0) == doctest::Approx(1e-14));
  CHECK(powerlaw_level_for_adev(0, 1e-14, 1.0, 1.0) == doctest::Approx(h0));
  CHECK(ensemble_adev({0, h0}, 1.0, 10000, 100) == doctest::Approx(1e-14).epsilon(0.1));
}

TEST_CASE("each power-law class matches its analytic Allan law")
{
  for (int alpha : {2, 1, 0, -1, -2})
  {
    CAPTURE(alpha);
    const PowerLawTerm term{alpha, 1e-26};
    for (double tau : {1.0, 16.0})
      CHECK(ensemble_adev(term, tau, 4096, 100) == doctest::Approx(powerlaw_adev(term, tau, 1.0)).epsilon(0.1));
  }
}

TEST_CASE("white PM slope")
{
  const std::vector<double> taus{1, 2, 5, 10, 20, 50, 100};
  std::vector<double> acc(taus.size(), 0.0);
  for (int r = 0; r < 30; ++r)
  {
    const auto x = gen_noise(single(2, 1e-26), 4000, 1.0, Seed{static_cast<std::uint64_t>(r)});
    const auto c = allan_deviation(x, taus, Estimator::overlapping);
    for (std::size_t i = 0; i < taus.size(); ++i)
      acc[i] += c.points[i].sigma * c.points[i].sigma;
  }
  AdevCurve mean;
  for (std::size_t i = 0; i < taus.size(); ++i)
    mean.points.push_back({taus[i], std::sqrt(acc[i] / 30.0), 1});
  CHECK(std::abs(fit_power_law(mean, 1.0, 100.0).exponent + 1.0) <= 0.05);
}

TEST_CASE("diurnal")
{
  const double a = 4e-11;
  const auto x = gen_diurnal(a, 400.0, 0.0, 401, 1.0);
  CHECK(x[100] == doctest::Approx(a));
  CHECK(x[0] == 0.0);
  CHECK_THROWS_AS(gen_diurnal(a, 0.0, 0.0, 10, 1.0), InvalidInput);
}

TEST_CASE("bursts")
{
  SUBCASE("forced event peaks at its amplitude")
  {
    const std::vector<BurstEvent> events{{20.0, 10e-12, 10.0}};
    const auto x = render_bursts(events, 100, 1.0);
    CHECK(x.samples().cwiseAbs().maxCoeff() == doctest::Approx(10e-12));
    CHECK(x[25] == doctest::Approx(10e-12));
    CHECK(x[10] == 0.0);
  }
  SUBCASE("poisson count over a day")
  {
    BurstSpec spec;
    spec.rate = 1.0 / 3600.0;
    spec.amplitude = 1e-12;
    int outside = 0;
    for (std::uint64_t s = 0; s < 50; ++s)
    {
      const auto events = draw_bursts(spec, 86400.0, Seed{s});
      for (const auto& e : events)
        REQUIRE(e.start < 86400.0);
      if (std::abs(static_cast<double>(events.size()) - 24.0) > 15.0)
        ++outside;
    }
    CHECK(outside <= 1);
  }
}

TEST_CASE("correlated pair")
{
  const NoiseSpec spec = single(0, 1e-27);
  SUBCASE("ratio 0 gives identical fibers")
  {
    const auto [a, b] = correlated_pair(spec, 0.0, 1000, 1.0, Seed{3});
    CHECK(a.samples() == b.samples());
  }
  SUBCASE("ratio 0.1 gives a tenfold quieter difference")
  {
    const std::vector<double> taus{1.0};
    double ra = 0.0;
    for (std::uint64_t s = 0; s < 20; ++s)
    {
      const auto [a, b] = correlated_pair(spec, 0.1, 10000, 1.0, Seed{s});
      const double single_fiber = allan_deviation(a, taus).points[0].sigma;
      const double diff = allan_deviation(a - b, taus).points[0].sigma;
      ra += diff / single_fiber / 20.0;
    }
    CHECK(ra == doctest::Approx(0.1).epsilon(0.1));
  }
  SUBCASE("ratio 1 with no common term is uncorrelated")
  {
    NoiseSpec none;
    const NoiseSpec wpm = single(2, 1e-26);
    const auto [a, b] = correlated_pair(none, wpm, 1.0, 20000, 1.0, Seed{9});
    const Eigen::VectorXd da = a.samples().array() - a.samples().mean();
    const Eigen::VectorXd db = b.samples().array() - b.samples().mean();
    const double rho = da.dot(db) / std::sqrt(da.squaredNorm() * db.squaredNorm());
    CHECK(std::abs(rho) <= 0.05);
  }
  SUBCASE("rms of the difference over a single fiber equals the ratio")
  {
    const NoiseSpec wpm = single(2, 1e-26);
    const auto [a, b] = correlated_pair(wpm, 0.3, 50000, 1.0, Seed{4});
    CHECK(rms(a.samples() - b.samples()) / rms(a.samples()) == doctest::Approx(0.3).epsilon(0.03));
  }
  SUBCASE("ratio outside [0, 1]")
  {
    CHECK_THROWS_AS(correlated_pair(spec, 1.5, 100, 1.0, Seed{1}), InvalidInput);
    CHECK_THROWS_AS(correlated_pair(spec, -0.1, 100, 1.0, Seed{1}), InvalidInput);
  }
}

TEST_CASE("determinism and linearity")
{
  NoiseSpec spec = single(0, 1e-27);
  spec.powerlaw.push_back({-1, 1e-30});
  spec.diurnal.amplitude = 1e-11;
  spec.bursts.rate = 1e-3;
  spec.bursts.amplitude = 1e-12;
  const Seed seed{42};
  const auto a = gen_noise(spec, 5000, 1.0, seed);
  const auto b = gen_noise(spec, 5000, 1.0, seed);
  CHECK(a.samples() == b.samples());

  const auto parts = gen_power_law_phase(spec, 5000, 1.0, derive_seed(seed, 0)) + gen_diurnal(spec.diurnal, 5000, 1.0) +
                     gen_bursts(spec.bursts, 5000, 1.0, derive_seed(seed, 1));
  CHECK(parts.samples() == a.samples());

  const auto other = gen_noise(spec, 5000, 1.0, Seed{43});
  CHECK(other.samples() != a.samples());
  CHECK(derive_seed(seed, 0) != derive_seed(seed, 1));
}

TEST_CASE("invalid specs")
{
  CHECK_THROWS_AS(single(3, 1.0).validate(), InvalidInput);
  CHECK_THROWS_AS(single(0, -1.0).validate(), InvalidInput);
  CHECK_THROWS_AS(gen_power_law_term({5, 1.0}, 100, 1.0, Seed{}), InvalidInput);
}
