#pragma once

#include "fiberlink/noise.hpp"
#include "fiberlink/series.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fiberlink
{

/// Frequency split into whole hertz and a fractional part in [0, 1).
/// Keeps sub-microhertz resolution at tens of terahertz.
class ExactHz
{
public:
  ExactHz() = default;
  explicit ExactHz(double hz);
  ExactHz(std::int64_t whole, double fraction);

  std::int64_t whole() const { return whole_; }
  double fraction() const { return fraction_; }
  double to_double() const { return static_cast<double>(whole_) + fraction_; }
  /// Decimal rendering with `digits` fractional digits, e.g. "29100000000000.000123".
  std::string to_string(int digits = 9) const;
  static ExactHz parse(const std::string& text);

  ExactHz& operator+=(double hz);
  friend ExactHz operator+(ExactHz a, double hz) { return a += hz; }
  friend ExactHz operator-(ExactHz a, double hz) { return a += -hz; }
  friend ExactHz operator+(const ExactHz& a, const ExactHz& b);
  /// Difference as a plain double; exact while the difference is small.
  friend double operator-(const ExactHz& a, const ExactHz& b);
  friend ExactHz operator*(const ExactHz& a, std::int64_t q);
  friend ExactHz operator/(const ExactHz& a, std::int64_t q);
  friend bool operator==(const ExactHz& a, const ExactHz& b) = default;

private:
  void normalize();
  std::int64_t whole_ = 0;
  double fraction_ = 0.0;
};

struct CombParams
{
  std::int64_t q = 29100;
  double delta = 0.0;  // net phase-lock offsets, Hz
  int sign = +1;       // f_opt = q f_r + sign * delta
  ExactHz f_rep_nominal{995e6};

  ExactHz optical_nominal() const;
  void validate() const;
};

/// f_opt = q f_r +/- delta.
ExactHz optical_from_rep_rate(const CombParams& params, const ExactHz& f_r);
/// Inverse of optical_from_rep_rate.
ExactHz rep_rate_from_optical(const CombParams& params, const ExactHz& f_opt);

/// Repetition-rate record: nominal value plus per-sample offsets in Hz.
struct RepRateSeries
{
  ExactHz nominal;
  Eigen::VectorXd offset;  // Hz
  double tau0 = 1.0;

  Eigen::Index size() const { return offset.size(); }
  ExactHz at(Eigen::Index i) const { return nominal + offset[i]; }
  FracFreqSeries fractional() const;
};

/// Ideal comb lock onto an optical standard with fractional frequency y_opt.
RepRateSeries rep_rate_lock(const FracFreqSeries& optical_fractional, const CombParams& params);

struct CounterChainConfig
{
  double lo_freq = 1e9;            // synthesized from the reference
  double if_target = 5e6;          // nominal |f_r - LO|
  double final_shift_target = 68.0;
  double filter_bandwidth = 10.0;
  double gate = 1.0;               // s
  double resolution = 1e-6;        // counter quantization, Hz
  double counter_noise = 0.0;      // white reading noise per gate, Hz rms

  void validate() const;
};

struct MeasurementRecord
{
  std::vector<Eigen::Index> gate_index;
  Eigen::VectorXd counted;           // final beat per gate, Hz
  std::vector<ExactHz> f_opt;        // reconstructed optical frequency per gate
  double gate = 1.0;
  std::string reference_label = "reference";

  Eigen::Index size() const { return counted.size(); }
  /// (f_opt - nominal) / nominal per gate.
  FracFreqSeries fractional(const ExactHz& nominal) const;
  double mean_offset(const ExactHz& nu) const;
};

/// Counts f_r against a reference-derived LO and shift synthesizer, one gate at
/// a time, and rebuilds the optical frequency from nominal synthesizer values.
MeasurementRecord count_chain(const RepRateSeries& f_r, const FracFreqSeries& reference, const CombParams& params,
                              const CounterChainConfig& cfg, Seed seed);

struct BudgetEntry
{
  std::string label;
  double sigma_at_1s = 0.0;
};

struct BudgetResult
{
  double measured = 0.0;
  std::vector<BudgetEntry> contributions;
  double residual = 0.0;
  bool clamped = false;
};

/// sqrt(max(0, measured^2 - sum sigma_i^2)).
BudgetResult stability_budget(double measured_at_1s, const std::vector<BudgetEntry>& contributions);

struct FrequencyEstimate
{
  double mean_offset;  // Hz
  double sigma;        // Hz, sample standard deviation across records
};

FrequencyEstimate absolute_freq_estimate(const std::vector<MeasurementRecord>& records, const ExactHz& nu_ref);

}  // namespace fiberlink
