#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <utility>

namespace fiberlink
{

/// Raised when a caller passes data that violates an operation's preconditions.
class InvalidInput : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for inconsistent configurations (scenario files, counter chains).
class ConfigError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Raised when a closed-loop simulation grows without bound.
class DivergenceError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kPi = 3.14159265358979323846;

/// Uniformly sampled phase-time record x_n in seconds of time offset.
class PhaseSeries
{
public:
  PhaseSeries(Eigen::VectorXd samples, double tau0, std::string label = {})
    : samples_(std::move(samples)), tau0_(tau0), label_(std::move(label))
  {
    if (!(tau0_ > 0.0))
      throw InvalidInput("PhaseSeries: tau0 must be > 0, got " + std::to_string(tau0_));
    if (samples_.size() < 2)
      throw InvalidInput("PhaseSeries: need at least 2 samples, got " + std::to_string(samples_.size()));
    if (!samples_.allFinite())
      throw InvalidInput("PhaseSeries: samples must be finite");
  }

  static PhaseSeries zeros(Eigen::Index n, double tau0, std::string label = {})
  {
    return PhaseSeries(Eigen::VectorXd::Zero(n), tau0, std::move(label));
  }

  const Eigen::VectorXd& samples() const { return samples_; }
  double tau0() const { return tau0_; }
  const std::string& label() const { return label_; }
  Eigen::Index size() const { return samples_.size(); }
  double operator[](Eigen::Index i) const { return samples_[i]; }

  /// Time stamp of sample i.
  double time(Eigen::Index i) const { return static_cast<double>(i) * tau0_; }

  PhaseSeries relabeled(std::string label) const { return PhaseSeries(samples_, tau0_, std::move(label)); }

private:
  Eigen::VectorXd samples_;
  double tau0_;
  std::string label_;
};

/// Fractional-frequency record y_n averaged over tau0.
class FracFreqSeries
{
public:
  FracFreqSeries(Eigen::VectorXd samples, double tau0, std::string label = {})
    : samples_(std::move(samples)), tau0_(tau0), label_(std::move(label))
  {
    if (!(tau0_ > 0.0))
      throw InvalidInput("FracFreqSeries: tau0 must be > 0, got " + std::to_string(tau0_));
    if (!samples_.allFinite())
      throw InvalidInput("FracFreqSeries: samples must be finite");
  }

  const Eigen::VectorXd& samples() const { return samples_; }
  double tau0() const { return tau0_; }
  const std::string& label() const { return label_; }
  Eigen::Index size() const { return samples_.size(); }
  double operator[](Eigen::Index i) const { return samples_[i]; }

private:
  Eigen::VectorXd samples_;
  double tau0_;
  std::string label_;
};

/// Element-wise sum of two aligned phase records.
inline PhaseSeries operator+(const PhaseSeries& a, const PhaseSeries& b)
{
  if (a.size() != b.size() || a.tau0() != b.tau0())
    throw InvalidInput("PhaseSeries sum: series are not aligned");
  return PhaseSeries(a.samples() + b.samples(), a.tau0(), a.label());
}

inline PhaseSeries operator-(const PhaseSeries& a, const PhaseSeries& b)
{
  if (a.size() != b.size() || a.tau0() != b.tau0())
    throw InvalidInput("PhaseSeries difference: series are not aligned");
  return PhaseSeries(a.samples() - b.samples(), a.tau0(), a.label());
}

inline PhaseSeries operator*(double c, const PhaseSeries& a)
{
  return PhaseSeries(c * a.samples(), a.tau0(), a.label());
}

}  // namespace fiberlink
