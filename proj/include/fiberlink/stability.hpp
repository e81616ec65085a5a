#pragma once

#include "fiberlink/series.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

namespace fiberlink
{

enum class Estimator
{
  standard,
  overlapping
};

/// How a curve was derived from a measured round trip.
enum class Reduction
{
  none,
  correlated_halving,    // one way = round trip / 2 (same noise both passes)
  independent_sqrt2      // one way = round trip / sqrt(2) (independent compensators)
};

std::string to_string(Estimator e);
std::string to_string(Reduction r);

struct AdevPoint
{
  double tau;
  double sigma;
  Eigen::Index n_pairs;
};

struct AdevCurve
{
  std::vector<AdevPoint> points;
  Estimator estimator = Estimator::standard;
  Reduction reduction = Reduction::none;
  /// Requested taus dropped because fewer than two averages were available.
  std::vector<double> omitted_taus;
  std::string label;

  bool empty() const { return points.empty(); }
  std::size_t size() const { return points.size(); }
  /// Sigma at the point whose tau matches within 1e-9 relative, if any.
  std::optional<double> sigma_at(double tau) const;
};

struct PsdEstimate
{
  Eigen::VectorXd freqs;
  Eigen::VectorXd values;
  double rbw = 0.0;        // equivalent noise bandwidth of the window, Hz
  double bin_width = 0.0;  // frequency spacing, Hz
  Eigen::Index segments = 0;
};

struct PowerLawFit
{
  double exponent;  // log-log slope mu in sigma ~ tau^mu
  double level;     // sigma extrapolated to tau = 1 s
  Eigen::Index points;
};

namespace detail
{

template <typename Scalar>
using Accumulator = std::conditional_t<(sizeof(Scalar) < sizeof(long double)), long double, Scalar>;

}  // namespace detail

/// Allan variance of fractional-frequency data at averaging factor m.
/// Returns the number of difference pairs through n_pairs; zero pairs means
/// the series is too short and the returned variance is meaningless.
template <typename Derived>
typename Derived::Scalar allan_variance(const Eigen::DenseBase<Derived>& y, Eigen::Index m, Estimator estimator,
                                        Eigen::Index& n_pairs)
{
  using Scalar = typename Derived::Scalar;
  using Acc = detail::Accumulator<Scalar>;
  const Eigen::Index n = y.size();
  n_pairs = 0;
  if (m < 1)
    return Scalar(0);

  if (m == 1 || estimator == Estimator::standard)
  {
    const Eigen::Index blocks = n / m;
    if (blocks < 2)
      return Scalar(0);
    Acc sum = 0;
    Acc previous = 0;
    for (Eigen::Index b = 0; b < blocks; ++b)
    {
      Acc block = 0;
      for (Eigen::Index i = 0; i < m; ++i)
        block += static_cast<Acc>(y(b * m + i));
      block /= static_cast<Acc>(m);
      if (b > 0)
      {
        const Acc d = block - previous;
        sum += d * d;
      }
      previous = block;
    }
    n_pairs = blocks - 1;
    return static_cast<Scalar>(sum / (Acc(2) * static_cast<Acc>(n_pairs)));
  }

  // Overlapping: every m-span start, via prefix sums of y.
  const Eigen::Index count = n - 2 * m + 1;
  if (count < 1)
    return Scalar(0);
  std::vector<Acc> prefix(static_cast<std::size_t>(n) + 1, Acc(0));
  for (Eigen::Index i = 0; i < n; ++i)
    prefix[static_cast<std::size_t>(i) + 1] = prefix[static_cast<std::size_t>(i)] + static_cast<Acc>(y(i));
  Acc sum = 0;
  for (Eigen::Index j = 0; j < count; ++j)
  {
    const auto s = static_cast<std::size_t>(j);
    const auto um = static_cast<std::size_t>(m);
    const Acc first = prefix[s + um] - prefix[s];
    const Acc second = prefix[s + 2 * um] - prefix[s + um];
    const Acc d = (second - first) / static_cast<Acc>(m);
    sum += d * d;
  }
  n_pairs = count;
  return static_cast<Scalar>(sum / (Acc(2) * static_cast<Acc>(count)));
}

/// y_n = (x_{n+1} - x_n) / tau0.
FracFreqSeries phase_to_frac_freq(const PhaseSeries& x);

/// Allan deviation at each requested tau (integer multiples of tau0).
AdevCurve allan_deviation(const FracFreqSeries& y, std::span<const double> taus,
                          Estimator estimator = Estimator::standard);

/// Convenience wrapper: converts phase to frequency first.
AdevCurve allan_deviation(const PhaseSeries& x, std::span<const double> taus,
                          Estimator estimator = Estimator::standard);

/// 1-2-5 per decade grid from tau0 up to a quarter of the record length.
std::vector<double> decade_taus(double tau0, double record_length);

/// One-sided Welch PSD of a phase record (radians), Hann window, per-segment
/// removal of mean and linear trend.
PsdEstimate psd_welch(const PhaseSeries& phase, Eigen::Index segment_length, double overlap = 0.5);

/// Least-squares line through log sigma vs log tau for points in [tau_min, tau_max].
PowerLawFit fit_power_law(const AdevCurve& curve, double tau_min, double tau_max);

/// Deduces the one-way curve from a round-trip measurement.
AdevCurve one_way_from_round_trip(const AdevCurve& curve, Reduction reduction = Reduction::correlated_halving);

}  // namespace fiberlink
