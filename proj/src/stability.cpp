#include "fiberlink/stability.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <sstream>

namespace fiberlink
{

std::string to_string(Estimator e)
{
  return e == Estimator::standard ? "standard" : "overlapping";
}

std::string to_string(Reduction r)
{
  switch (r)
  {
    case Reduction::none:
      return "none";
    case Reduction::correlated_halving:
      return "one-way from round trip, divided by 2 (correlated passes)";
    case Reduction::independent_sqrt2:
      return "one-way from round trip, divided by sqrt(2) (independent compensators)";
  }
  return "unknown";
}

std::optional<double> AdevCurve::sigma_at(double tau) const
{
  for (const auto& p : points)
    if (std::abs(p.tau - tau) <= 1e-9 * tau)
      return p.sigma;
  return std::nullopt;
}

FracFreqSeries phase_to_frac_freq(const PhaseSeries& x)
{
  // PhaseSeries already guarantees >= 2 samples; the check guards moved-from or
  // hand-built inputs in generic code.
  if (x.size() < 2)
    throw InvalidInput("phase_to_frac_freq: need at least 2 phase samples");
  const Eigen::Index n = x.size() - 1;
  Eigen::VectorXd y = (x.samples().tail(n) - x.samples().head(n)) / x.tau0();
  return FracFreqSeries(std::move(y), x.tau0(), x.label());
}

namespace
{

Eigen::Index averaging_factor(double tau, double tau0)
{
  if (!(tau > 0.0))
    throw InvalidInput("allan_deviation: tau must be > 0");
  const double ratio = tau / tau0;
  const double m = std::round(ratio);
  if (m < 1.0 || std::abs(ratio - m) > 1e-9 * std::max(1.0, ratio))
  {
    std::ostringstream msg;
    msg << "allan_deviation: tau " << tau << " s is not an integer multiple of tau0 " << tau0 << " s";
    throw InvalidInput(msg.str());
  }
  return static_cast<Eigen::Index>(m);
}

}  // namespace

AdevCurve allan_deviation(const FracFreqSeries& y, std::span<const double> taus, Estimator estimator)
{
  std::vector<double> sorted(taus.begin(), taus.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

  AdevCurve curve;
  curve.estimator = estimator;
  curve.label = y.label();
  for (double tau : sorted)
  {
    const Eigen::Index m = averaging_factor(tau, y.tau0());
    Eigen::Index pairs = 0;
    const double var = allan_variance(y.samples(), m, estimator, pairs);
    if (pairs < 1)
    {
      curve.omitted_taus.push_back(tau);
      continue;
    }
    curve.points.push_back({static_cast<double>(m) * y.tau0(), std::sqrt(var), pairs});
  }
  return curve;
}

AdevCurve allan_deviation(const PhaseSeries& x, std::span<const double> taus, Estimator estimator)
{
  return allan_deviation(phase_to_frac_freq(x), taus, estimator);
}

std::vector<double> decade_taus(double tau0, double record_length)
{
  std::vector<double> taus;
  const double limit = record_length / 4.0;
  for (double decade = tau0; decade <= limit; decade *= 10.0)
    for (double k : {1.0, 2.0, 5.0})
      if (k * decade <= limit * (1.0 + 1e-12))
        taus.push_back(std::round(k * decade / tau0) * tau0);
  return taus;
}

PsdEstimate psd_welch(const PhaseSeries& phase, Eigen::Index segment_length, double overlap)
{
  const Eigen::Index n = phase.size();
  if (segment_length < 4)
    throw InvalidInput("psd_welch: segment length must be >= 4");
  if (segment_length > n)
    throw InvalidInput("psd_welch: segment length " + std::to_string(segment_length) +
                       " exceeds series length " + std::to_string(n));
  if (!(overlap >= 0.0 && overlap < 1.0))
    throw InvalidInput("psd_welch: overlap fraction must be in [0, 1)");

  const Eigen::Index len = segment_length;
  const double fs = 1.0 / phase.tau0();
  const Eigen::Index hop = std::max<Eigen::Index>(1, len - static_cast<Eigen::Index>(std::floor(overlap * len)));

  Eigen::VectorXd window(len);
  for (Eigen::Index i = 0; i < len; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(len));
  const double power = window.squaredNorm();

  // Least-squares line on t = 0..len-1: precompute the centered abscissa.
  const double t_mean = 0.5 * static_cast<double>(len - 1);
  Eigen::VectorXd t_centered = Eigen::VectorXd::LinSpaced(len, 0.0, static_cast<double>(len - 1)).array() - t_mean;
  const double t_norm = t_centered.squaredNorm();

  const Eigen::Index bins = len / 2;
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(bins);
  Eigen::FFT<double> fft;
  std::vector<double> buffer(static_cast<std::size_t>(len));
  std::vector<std::complex<double>> spectrum;
  Eigen::Index segments = 0;

  for (Eigen::Index start = 0; start + len <= n; start += hop)
  {
    const auto seg = phase.samples().segment(start, len);
    const double mean = seg.mean();
    const double slope = t_centered.dot(seg) / t_norm;
    for (Eigen::Index i = 0; i < len; ++i)
      buffer[static_cast<std::size_t>(i)] = (seg[i] - mean - slope * t_centered[i]) * window[i];
    fft.fwd(spectrum, buffer);
    for (Eigen::Index k = 1; k <= bins; ++k)
    {
      const double scale = (k == bins && len % 2 == 0) ? 1.0 : 2.0;
      acc[k - 1] += scale * std::norm(spectrum[static_cast<std::size_t>(k)]) / (fs * power);
    }
    ++segments;
  }

  PsdEstimate out;
  out.segments = segments;
  out.values = acc / static_cast<double>(segments);
  out.bin_width = fs / static_cast<double>(len);
  out.freqs = Eigen::VectorXd::LinSpaced(bins, 1.0, static_cast<double>(bins)) * out.bin_width;
  out.rbw = fs * power / (window.sum() * window.sum());
  return out;
}

PowerLawFit fit_power_law(const AdevCurve& curve, double tau_min, double tau_max)
{
  std::vector<double> lx;
  std::vector<double> ly;
  for (const auto& p : curve.points)
  {
    if (p.tau < tau_min * (1.0 - 1e-12) || p.tau > tau_max * (1.0 + 1e-12) || !(p.sigma > 0.0))
      continue;
    lx.push_back(std::log10(p.tau));
    ly.push_back(std::log10(p.sigma));
  }
  if (lx.size() < 3)
    throw InvalidInput("fit_power_law: need at least 3 points with sigma > 0 in [" + std::to_string(tau_min) +
                       ", " + std::to_string(tau_max) + "], got " + std::to_string(lx.size()));

  const auto k = static_cast<Eigen::Index>(lx.size());
  Eigen::MatrixXd a(k, 2);
  Eigen::VectorXd b(k);
  for (Eigen::Index i = 0; i < k; ++i)
  {
    a(i, 0) = 1.0;
    a(i, 1) = lx[static_cast<std::size_t>(i)];
    b[i] = ly[static_cast<std::size_t>(i)];
  }
  const Eigen::Vector2d coef = a.colPivHouseholderQr().solve(b);
  return {coef[1], std::pow(10.0, coef[0]), k};
}

AdevCurve one_way_from_round_trip(const AdevCurve& curve, Reduction reduction)
{
  double divisor = 1.0;
  if (reduction == Reduction::correlated_halving)
    divisor = 2.0;
  else if (reduction == Reduction::independent_sqrt2)
    divisor = std::sqrt(2.0);

  AdevCurve out = curve;
  out.reduction = reduction;
  for (auto& p : out.points)
    p.sigma /= divisor;
  return out;
}

}  // namespace fiberlink
