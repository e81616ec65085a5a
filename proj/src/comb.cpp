#include "fiberlink/comb.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

namespace fiberlink
{

ExactHz::ExactHz(double hz)
{
  if (!std::isfinite(hz) || std::abs(hz) > 9e18)
    throw InvalidInput("ExactHz: value out of range");
  const double w = std::floor(hz);
  whole_ = static_cast<std::int64_t>(w);
  fraction_ = hz - w;
}

ExactHz::ExactHz(std::int64_t whole, double fraction) : whole_(whole), fraction_(fraction)
{
  if (!std::isfinite(fraction))
    throw InvalidInput("ExactHz: fraction must be finite");
  normalize();
}

void ExactHz::normalize()
{
  const double k = std::floor(fraction_);
  if (k != 0.0)
  {
    whole_ += static_cast<std::int64_t>(k);
    fraction_ -= k;
  }
  if (fraction_ >= 1.0)
  {
    whole_ += 1;
    fraction_ = 0.0;
  }
}

ExactHz& ExactHz::operator+=(double hz)
{
  if (!std::isfinite(hz))
    throw InvalidInput("ExactHz: cannot add a non-finite value");
  const double w = std::trunc(hz);
  whole_ += static_cast<std::int64_t>(w);
  fraction_ += hz - w;
  normalize();
  return *this;
}

ExactHz operator+(const ExactHz& a, const ExactHz& b)
{
  return ExactHz(a.whole_ + b.whole_, a.fraction_ + b.fraction_);
}

double operator-(const ExactHz& a, const ExactHz& b)
{
  return static_cast<double>(a.whole_ - b.whole_) + (a.fraction_ - b.fraction_);
}

ExactHz operator*(const ExactHz& a, std::int64_t q)
{
  std::int64_t whole = 0;
  if (__builtin_mul_overflow(a.whole_, q, &whole))
    throw InvalidInput("ExactHz: product overflows");
  return ExactHz(whole, a.fraction_ * static_cast<double>(q));
}

ExactHz operator/(const ExactHz& a, std::int64_t q)
{
  if (q <= 0)
    throw InvalidInput("ExactHz: divisor must be > 0");
  std::int64_t quot = a.whole_ / q;
  std::int64_t rem = a.whole_ % q;
  if (rem < 0)
  {
    rem += q;
    quot -= 1;
  }
  return ExactHz(quot, (static_cast<double>(rem) + a.fraction_) / static_cast<double>(q));
}

std::string ExactHz::to_string(int digits) const
{
  if (digits < 0 || digits > 15)
    throw InvalidInput("ExactHz::to_string: digits must be in [0, 15]");
  std::int64_t whole = whole_;
  double frac = fraction_;
  bool negative = false;
  if (whole < 0)
  {
    negative = true;
    whole = -whole;
    if (frac > 0.0)
    {
      whole -= 1;
      frac = 1.0 - frac;
    }
  }
  const auto scale = static_cast<std::int64_t>(std::llround(std::pow(10.0, digits)));
  std::int64_t scaled = std::llround(frac * static_cast<double>(scale));
  if (scaled >= scale)
  {
    scaled -= scale;
    whole += 1;
  }
  std::string out = (negative ? "-" : "") + std::to_string(whole);
  if (digits > 0)
  {
    char buf[32];
    std::snprintf(buf, sizeof buf, ".%0*lld", digits, static_cast<long long>(scaled));
    out += buf;
  }
  return out;
}

ExactHz ExactHz::parse(const std::string& text)
{
  try
  {
    std::size_t used = 0;
    const bool negative = !text.empty() && text[0] == '-';
    const auto dot = text.find('.');
    const std::string whole_part = text.substr(0, dot);
    std::int64_t whole = std::stoll(whole_part, &used);
    if (used != whole_part.size())
      throw InvalidInput("ExactHz::parse: malformed number '" + text + "'");
    double frac = 0.0;
    if (dot != std::string::npos)
    {
      const std::string digits = text.substr(dot + 1);
      if (digits.find_first_not_of("0123456789") != std::string::npos)
        throw InvalidInput("ExactHz::parse: malformed number '" + text + "'");
      if (!digits.empty())
        frac = std::stod("0." + digits);
    }
    return negative ? ExactHz(whole, -frac) : ExactHz(whole, frac);
  }
  catch (const std::logic_error&)
  {
    throw InvalidInput("ExactHz::parse: malformed number '" + text + "'");
  }
}

ExactHz CombParams::optical_nominal() const
{
  return optical_from_rep_rate(*this, f_rep_nominal);
}

void CombParams::validate() const
{
  if (q <= 0)
    throw InvalidInput("CombParams: q must be > 0");
  if (!(f_rep_nominal.to_double() > 0.0))
    throw InvalidInput("CombParams: nominal repetition rate must be > 0");
  if (sign != 1 && sign != -1)
    throw InvalidInput("CombParams: sign must be +1 or -1");
  if (!std::isfinite(delta))
    throw InvalidInput("CombParams: delta must be finite");
}

ExactHz optical_from_rep_rate(const CombParams& params, const ExactHz& f_r)
{
  params.validate();
  if (!(f_r.to_double() > 0.0))
    throw InvalidInput("optical_from_rep_rate: f_r must be > 0");
  return f_r * params.q + static_cast<double>(params.sign) * params.delta;
}

ExactHz rep_rate_from_optical(const CombParams& params, const ExactHz& f_opt)
{
  params.validate();
  return (f_opt - static_cast<double>(params.sign) * params.delta) / params.q;
}

FracFreqSeries RepRateSeries::fractional() const
{
  return FracFreqSeries(offset / nominal.to_double(), tau0);
}

RepRateSeries rep_rate_lock(const FracFreqSeries& optical_fractional, const CombParams& params)
{
  params.validate();
  const ExactHz f_opt_nominal = params.optical_nominal();
  const double scale = f_opt_nominal.to_double();
  RepRateSeries out{params.f_rep_nominal, Eigen::VectorXd(optical_fractional.size()), optical_fractional.tau0()};
  for (Eigen::Index i = 0; i < optical_fractional.size(); ++i)
  {
    const ExactHz f_r = rep_rate_from_optical(params, f_opt_nominal + scale * optical_fractional[i]);
    out.offset[i] = f_r - params.f_rep_nominal;
  }
  return out;
}

void CounterChainConfig::validate() const
{
  if (!(lo_freq > 0.0 && if_target > 0.0 && final_shift_target > 0.0 && filter_bandwidth > 0.0 && gate > 0.0 &&
        resolution > 0.0))
    throw InvalidInput("CounterChainConfig: frequencies, gate and resolution must be > 0");
  if (!(counter_noise >= 0.0))
    throw InvalidInput("CounterChainConfig: counter noise must be >= 0");
  if (!(filter_bandwidth < final_shift_target) || !(filter_bandwidth < if_target))
    throw InvalidInput("CounterChainConfig: filter bandwidth must be below the intermediate frequencies");
  if (!(final_shift_target < if_target))
    throw InvalidInput("CounterChainConfig: final frequency must be below the IF");
}

FracFreqSeries MeasurementRecord::fractional(const ExactHz& nominal) const
{
  Eigen::VectorXd y(size());
  for (Eigen::Index i = 0; i < size(); ++i)
    y[i] = (f_opt[static_cast<std::size_t>(i)] - nominal) / nominal.to_double();
  return FracFreqSeries(std::move(y), gate);
}

double MeasurementRecord::mean_offset(const ExactHz& nu) const
{
  if (f_opt.empty())
    throw InvalidInput("MeasurementRecord: no gates");
  long double sum = 0.0L;
  for (const ExactHz& f : f_opt)
    sum += f - nu;
  return static_cast<double>(sum / static_cast<long double>(f_opt.size()));
}

MeasurementRecord count_chain(const RepRateSeries& f_r, const FracFreqSeries& reference, const CombParams& params,
                              const CounterChainConfig& cfg, Seed seed)
{
  cfg.validate();
  params.validate();
  if (f_r.size() != reference.size() || f_r.tau0 != reference.tau0())
    throw InvalidInput("count_chain: repetition-rate and reference series are not aligned");
  const double ratio = cfg.gate / f_r.tau0;
  const auto per_gate = static_cast<Eigen::Index>(std::llround(ratio));
  if (per_gate < 1 || std::abs(ratio - static_cast<double>(per_gate)) > 1e-9 * ratio)
    throw InvalidInput("count_chain: gate must be an integer number of samples");
  const Eigen::Index gates = f_r.size() / per_gate;
  if (gates < 1)
    throw InvalidInput("count_chain: record shorter than one gate");

  // f_r below the LO gives IF = LO - f_r; above gives f_r - LO.
  const ExactHz lo_nominal(cfg.lo_freq);
  const double nominal_if = f_r.nominal - lo_nominal;
  const int side = nominal_if >= 0.0 ? 1 : -1;
  const double shift = cfg.if_target - cfg.final_shift_target;
  const double nominal_final = std::abs(nominal_if) - shift;
  if (std::abs(nominal_final - cfg.final_shift_target) > 0.5 * cfg.filter_bandwidth)
    throw ConfigError("count_chain: final beat " + std::to_string(nominal_final) + " Hz falls outside the " +
                      std::to_string(cfg.filter_bandwidth) + " Hz filter around " +
                      std::to_string(cfg.final_shift_target) + " Hz (IF " + std::to_string(std::abs(nominal_if)) +
                      " Hz, target " + std::to_string(cfg.if_target) + " Hz)");

  std::mt19937_64 rng(seed.value);
  std::normal_distribution<double> normal(0.0, 1.0);
  MeasurementRecord rec;
  rec.gate = cfg.gate;
  rec.counted.resize(gates);
  rec.f_opt.reserve(static_cast<std::size_t>(gates));
  for (Eigen::Index g = 0; g < gates; ++g)
  {
    long double beat_sum = 0.0L;
    long double timebase_sum = 0.0L;
    for (Eigen::Index k = g * per_gate; k < (g + 1) * per_gate; ++k)
    {
      const double y_ref = reference[k];
      // Mixing is exact subtraction; synthesizers inherit the reference error.
      const double if_hz = side * (nominal_if + f_r.offset[k] - cfg.lo_freq * y_ref);
      beat_sum += if_hz - shift * (1.0 + y_ref);
      timebase_sum += y_ref;
    }
    const double y_timebase = static_cast<double>(timebase_sum / per_gate);
    double counted = static_cast<double>(beat_sum / per_gate) / (1.0 + y_timebase);
    if (cfg.counter_noise > 0.0)
      counted += cfg.counter_noise * normal(rng);
    counted = std::round(counted / cfg.resolution) * cfg.resolution;

    rec.gate_index.push_back(g);
    rec.counted[g] = counted;
    const ExactHz rebuilt = lo_nominal + side * (shift + counted);
    rec.f_opt.push_back(optical_from_rep_rate(params, rebuilt));
  }
  return rec;
}

BudgetResult stability_budget(double measured_at_1s, const std::vector<BudgetEntry>& contributions)
{
  if (!(measured_at_1s >= 0.0))
    throw InvalidInput("stability_budget: measured value must be >= 0");
  long double rest = static_cast<long double>(measured_at_1s) * measured_at_1s;
  for (const auto& c : contributions)
  {
    if (!(c.sigma_at_1s >= 0.0))
      throw InvalidInput("stability_budget: contribution '" + c.label + "' must be >= 0");
    rest -= static_cast<long double>(c.sigma_at_1s) * c.sigma_at_1s;
  }
  BudgetResult r{measured_at_1s, contributions, 0.0, rest < 0.0L};
  r.residual = rest > 0.0L ? static_cast<double>(std::sqrt(rest)) : 0.0;
  return r;
}

FrequencyEstimate absolute_freq_estimate(const std::vector<MeasurementRecord>& records, const ExactHz& nu_ref)
{
  if (records.size() < 2)
    throw InvalidInput("absolute_freq_estimate: need at least 2 records, got " + std::to_string(records.size()));
  std::vector<double> means;
  means.reserve(records.size());
  for (const auto& r : records)
    means.push_back(r.mean_offset(nu_ref));
  const double n = static_cast<double>(means.size());
  const double mean = std::accumulate(means.begin(), means.end(), 0.0) / n;
  double ss = 0.0;
  for (double m : means)
    ss += (m - mean) * (m - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

}  // namespace fiberlink
