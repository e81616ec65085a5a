#include "fiberlink/noise.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <random>

namespace fiberlink
{

namespace
{

std::uint64_t splitmix64(std::uint64_t z)
{
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void check_length(Eigen::Index n, double tau0)
{
  if (n < 2)
    throw InvalidInput("noise generator: n must be >= 2, got " + std::to_string(n));
  if (!(tau0 > 0.0))
    throw InvalidInput("noise generator: tau0 must be > 0");
}

Eigen::VectorXd white(Eigen::Index n, double sigma, std::mt19937_64& rng)
{
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd w(n);
  for (Eigen::Index i = 0; i < n; ++i)
    w[i] = sigma * normal(rng);
  return w;
}

/// Phase from frequency: x_0 = 0, x_{k+1} = x_k + y_k tau0.
Eigen::VectorXd integrate(const Eigen::VectorXd& y, Eigen::Index n, double tau0)
{
  Eigen::VectorXd x(n);
  x[0] = 0.0;
  for (Eigen::Index k = 1; k < n; ++k)
    x[k] = x[k - 1] + y[k - 1] * tau0;
  return x;
}

/// Gaussian series of length n whose one-sided PSD is `shape(f)` (units^2/Hz),
/// built by filtering white noise through sqrt(shape) on a padded FFT grid.
template <typename Shape>
Eigen::VectorXd spectral_shape(Eigen::Index n, double tau0, std::mt19937_64& rng, Shape shape)
{
  const auto m = static_cast<std::size_t>(std::bit_ceil(static_cast<std::uint64_t>(n)) * 2);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> w(m);
  for (auto& v : w)
    v = normal(rng);

  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spec;
  fft.fwd(spec, w);
  // Unit-variance white noise has one-sided PSD 2 tau0.
  const double df = 1.0 / (static_cast<double>(m) * tau0);
  spec[0] = 0.0;
  for (std::size_t k = 1; k <= m / 2; ++k)
  {
    const double gain = std::sqrt(shape(static_cast<double>(k) * df) / (2.0 * tau0));
    spec[k] *= gain;
    if (k != m - k)
      spec[m - k] *= gain;
  }
  std::vector<double> out;
  fft.inv(out, spec);
  return Eigen::Map<const Eigen::VectorXd>(out.data(), n);
}

}  // namespace

Seed derive_seed(Seed master, std::uint64_t index)
{
  return Seed{splitmix64(master.value ^ splitmix64(index + 0x5851f42d4c957f2dULL))};
}

void NoiseSpec::validate() const
{
  for (const auto& t : powerlaw)
  {
    if (t.alpha < -2 || t.alpha > 2)
      throw InvalidInput("NoiseSpec: unsupported alpha " + std::to_string(t.alpha) + " (allowed -2..2)");
    if (!(t.h >= 0.0) || !std::isfinite(t.h))
      throw InvalidInput("NoiseSpec: power-law level must be finite and >= 0");
  }
  if (!(diurnal.period > 0.0))
    throw InvalidInput("NoiseSpec: diurnal period must be > 0");
  if (!std::isfinite(diurnal.amplitude))
    throw InvalidInput("NoiseSpec: diurnal amplitude must be finite");
  if (!(bursts.rate >= 0.0) || !std::isfinite(bursts.rate))
    throw InvalidInput("NoiseSpec: burst rate must be finite and >= 0");
  if (!(bursts.amplitude >= 0.0))
    throw InvalidInput("NoiseSpec: burst amplitude must be >= 0");
  if (bursts.rate > 0.0 && !(bursts.duration > 0.0))
    throw InvalidInput("NoiseSpec: burst duration must be > 0");
  if (!(bursts.log_sigma >= 0.0))
    throw InvalidInput("NoiseSpec: burst log_sigma must be >= 0");
}

bool NoiseSpec::is_zero() const
{
  const bool no_powerlaw =
    std::all_of(powerlaw.begin(), powerlaw.end(), [](const PowerLawTerm& t) { return t.h == 0.0; });
  return no_powerlaw && diurnal.amplitude == 0.0 && (bursts.rate == 0.0 || bursts.amplitude == 0.0);
}

PhaseSeries gen_power_law_term(PowerLawTerm term, Eigen::Index n, double tau0, Seed seed)
{
  check_length(n, tau0);
  if (term.alpha < -2 || term.alpha > 2)
    throw InvalidInput("gen_power_law_term: unsupported alpha " + std::to_string(term.alpha));
  if (!(term.h >= 0.0))
    throw InvalidInput("gen_power_law_term: level must be >= 0");
  if (term.h == 0.0)
    return PhaseSeries::zeros(n, tau0);

  std::mt19937_64 rng(seed.value);
  const double h = term.h;
  const double two_pi = 2.0 * kPi;
  switch (term.alpha)
  {
    case 2:
      // S_x = h / (2 pi)^2, flat to the Nyquist frequency.
      return PhaseSeries(white(n, std::sqrt(h / (2.0 * two_pi * two_pi * tau0)), rng), tau0);
    case 1:
    {
      Eigen::VectorXd x = spectral_shape(n, tau0, rng, [&](double f) { return h / (two_pi * two_pi * f); });
      return PhaseSeries(std::move(x), tau0);
    }
    case 0:
      return PhaseSeries(integrate(white(n - 1, std::sqrt(h / (2.0 * tau0)), rng), n, tau0), tau0);
    case -1:
    {
      Eigen::VectorXd y = spectral_shape(n - 1, tau0, rng, [&](double f) { return h / f; });
      return PhaseSeries(integrate(y, n, tau0), tau0);
    }
    default:
    {
      // Random-walk FM: S_y ~ sigma_w^2 / (2 pi^2 tau0 f^2) at low frequency.
      Eigen::VectorXd y = white(n - 1, std::sqrt(2.0 * kPi * kPi * tau0 * h), rng);
      for (Eigen::Index i = 1; i < y.size(); ++i)
        y[i] += y[i - 1];
      return PhaseSeries(integrate(y, n, tau0), tau0);
    }
  }
}

PhaseSeries gen_power_law_phase(const NoiseSpec& spec, Eigen::Index n, double tau0, Seed seed)
{
  check_length(n, tau0);
  for (const auto& t : spec.powerlaw)
    if (t.alpha < -2 || t.alpha > 2)
      throw InvalidInput("gen_power_law_phase: unsupported alpha " + std::to_string(t.alpha));
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  for (std::size_t i = 0; i < spec.powerlaw.size(); ++i)
    x += gen_power_law_term(spec.powerlaw[i], n, tau0, derive_seed(seed, i)).samples();
  return PhaseSeries(std::move(x), tau0);
}

PhaseSeries gen_diurnal(double amplitude, double period, double phase, Eigen::Index n, double tau0)
{
  check_length(n, tau0);
  if (!(period > 0.0))
    throw InvalidInput("gen_diurnal: period must be > 0");
  Eigen::VectorXd x(n);
  for (Eigen::Index i = 0; i < n; ++i)
    x[i] = amplitude * std::sin(2.0 * kPi * static_cast<double>(i) * tau0 / period + phase);
  return PhaseSeries(std::move(x), tau0);
}

PhaseSeries gen_diurnal(const DiurnalSpec& spec, Eigen::Index n, double tau0)
{
  return gen_diurnal(spec.amplitude, spec.period, spec.phase, n, tau0);
}

std::vector<BurstEvent> draw_bursts(const BurstSpec& spec, double span, Seed seed)
{
  std::vector<BurstEvent> events;
  if (spec.rate <= 0.0 || !(span > 0.0))
    return events;
  if (!std::isfinite(spec.rate * span))
    throw InvalidInput("draw_bursts: rate * span must be finite");

  std::mt19937_64 rng(seed.value);
  std::exponential_distribution<double> gap(spec.rate);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution positive(0.5);
  double t = gap(rng);
  while (t < span)
  {
    const double magnitude = spec.amplitude * std::exp(spec.log_sigma * normal(rng));
    events.push_back({t, positive(rng) ? magnitude : -magnitude, spec.duration});
    t += gap(rng);
  }
  return events;
}

PhaseSeries render_bursts(std::span<const BurstEvent> events, Eigen::Index n, double tau0)
{
  check_length(n, tau0);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  for (const auto& e : events)
  {
    if (!(e.duration > 0.0))
      continue;
    const auto first = std::max<Eigen::Index>(0, static_cast<Eigen::Index>(std::ceil(e.start / tau0)));
    const auto last = std::min<Eigen::Index>(n - 1, static_cast<Eigen::Index>(std::floor((e.start + e.duration) / tau0)));
    for (Eigen::Index i = first; i <= last; ++i)
    {
      const double u = (static_cast<double>(i) * tau0 - e.start) / e.duration;
      x[i] += e.amplitude * 0.5 * (1.0 - std::cos(2.0 * kPi * u));
    }
  }
  return PhaseSeries(std::move(x), tau0);
}

PhaseSeries gen_bursts(const BurstSpec& spec, Eigen::Index n, double tau0, Seed seed)
{
  check_length(n, tau0);
  const auto events = draw_bursts(spec, static_cast<double>(n) * tau0, seed);
  return render_bursts(events, n, tau0);
}

PhaseSeries gen_noise(const NoiseSpec& spec, Eigen::Index n, double tau0, Seed seed)
{
  spec.validate();
  const PhaseSeries powerlaw = gen_power_law_phase(spec, n, tau0, derive_seed(seed, 0));
  const PhaseSeries diurnal = gen_diurnal(spec.diurnal, n, tau0);
  const PhaseSeries bursts = gen_bursts(spec.bursts, n, tau0, derive_seed(seed, 1));
  return powerlaw + diurnal + bursts;
}

std::pair<PhaseSeries, PhaseSeries> correlated_pair(const NoiseSpec& common, const NoiseSpec& differential,
                                                    double differential_ratio, Eigen::Index n, double tau0,
                                                    Seed seed)
{
  if (!(differential_ratio >= 0.0 && differential_ratio <= 1.0))
    throw InvalidInput("correlated_pair: differential ratio must be in [0, 1], got " +
                       std::to_string(differential_ratio));
  const double r = differential_ratio;
  const double common_gain = std::sqrt(1.0 - 0.5 * r * r);
  const double diff_gain = r / std::sqrt(2.0);

  const PhaseSeries shared = gen_noise(common, n, tau0, derive_seed(seed, 0));
  const PhaseSeries d1 = gen_noise(differential, n, tau0, derive_seed(seed, 1));
  const PhaseSeries d2 = gen_noise(differential, n, tau0, derive_seed(seed, 2));
  PhaseSeries f1(common_gain * shared.samples() + diff_gain * d1.samples(), tau0, "fiber1");
  PhaseSeries f2(common_gain * shared.samples() + diff_gain * d2.samples(), tau0, "fiber2");
  return {std::move(f1), std::move(f2)};
}

std::pair<PhaseSeries, PhaseSeries> correlated_pair(const NoiseSpec& spec, double differential_ratio,
                                                    Eigen::Index n, double tau0, Seed seed)
{
  return correlated_pair(spec, spec, differential_ratio, n, tau0, seed);
}

double powerlaw_adev(PowerLawTerm term, double tau, double tau0)
{
  const double fh = 0.5 / tau0;
  const double four_pi2 = 4.0 * kPi * kPi;
  double var = 0.0;
  switch (term.alpha)
  {
    case 2:
      var = 3.0 * term.h * fh / (four_pi2 * tau * tau);
      break;
    case 1:
      var = term.h * (1.038 + 3.0 * std::log(2.0 * kPi * fh * tau)) / (four_pi2 * tau * tau);
      break;
    case 0:
      var = term.h / (2.0 * tau);
      break;
    case -1:
      var = 2.0 * std::log(2.0) * term.h;
      break;
    case -2:
      var = 2.0 * kPi * kPi / 3.0 * term.h * tau;
      break;
    default:
      throw InvalidInput("powerlaw_adev: unsupported alpha " + std::to_string(term.alpha));
  }
  return std::sqrt(var);
}

double powerlaw_level_for_adev(int alpha, double sigma, double tau, double tau0)
{
  const double unit = powerlaw_adev({alpha, 1.0}, tau, tau0);
  return (sigma / unit) * (sigma / unit);
}

}  // namespace fiberlink
