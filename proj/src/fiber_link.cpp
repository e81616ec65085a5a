#include "fiberlink/fiber_link.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace fiberlink
{

PhaseSeries to_radians(const PhaseSeries& phase_time, Carrier carrier)
{
  return PhaseSeries((2.0 * kPi * carrier.frequency) * phase_time.samples(), phase_time.tau0(), phase_time.label());
}

PhaseSeries to_phase_time(const PhaseSeries& radians, Carrier carrier)
{
  return PhaseSeries(radians.samples() / (2.0 * kPi * carrier.frequency), radians.tau0(), radians.label());
}

FiberPath::FiberPath(double length, PhaseSeries noise_record, double delay_per_km)
  : length_km(length), base_delay(length * delay_per_km), noise(std::move(noise_record))
{
  if (!(base_delay > 0.0))
    throw InvalidInput("FiberPath: base delay must be > 0 (length " + std::to_string(length) + " km)");
}

Eigen::Index FiberPath::delay_steps() const
{
  return static_cast<Eigen::Index>(std::llround(base_delay / noise.tau0()));
}

double FiberPath::static_offset() const
{
  return base_delay - static_cast<double>(delay_steps()) * noise.tau0();
}

LinkSignal propagate(const PhaseSeries& input, const FiberPath& path, Carrier carrier)
{
  if (input.tau0() != path.noise.tau0())
    throw InvalidInput("propagate: input tau0 " + std::to_string(input.tau0()) + " differs from fiber noise tau0 " +
                       std::to_string(path.noise.tau0()));
  if (input.size() != path.noise.size())
    throw InvalidInput("propagate: input and fiber noise lengths differ");
  if (path.actuator_offsets && path.actuator_offsets->size() != input.size())
    throw InvalidInput("propagate: actuator offsets length differs from input");

  const Eigen::Index n = input.size();
  const Eigen::Index d = path.delay_steps();
  const double remainder = path.static_offset();
  Eigen::VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i)
  {
    const double delayed = input[std::max<Eigen::Index>(0, i - d)];
    const double actuator = path.actuator_offsets ? (*path.actuator_offsets)[i] : 0.0;
    out[i] = ((delayed + path.noise[i]) + actuator) + remainder;
  }
  return {PhaseSeries(std::move(out), input.tau0(), input.label()), carrier, path.base_delay};
}

LinkSignal round_trip(const PhaseSeries& input, const FiberPath& path_out, const FiberPath& path_back,
                      Carrier carrier_out, Carrier carrier_back)
{
  const LinkSignal there = propagate(input, path_out, carrier_out);
  LinkSignal back = propagate(there.phase_time, path_back, carrier_back);
  back.total_delay = there.total_delay + path_back.base_delay;
  return back;
}

DetectorConfig DetectorConfig::from_db(double psd_db, double bandwidth)
{
  return DetectorConfig{std::pow(10.0, psd_db / 20.0), bandwidth};
}

double DetectorConfig::floor_db() const
{
  return 20.0 * std::log10(floor);
}

double DetectorConfig::phase_time_psd(Carrier carrier) const
{
  const double per_rad = 1.0 / (2.0 * kPi * carrier.frequency);
  return floor * floor * per_rad * per_rad;
}

void DetectorConfig::validate() const
{
  if (!(floor >= 0.0) || !std::isfinite(floor))
    throw InvalidInput("DetectorConfig: floor must be finite and >= 0");
  if (!(measurement_bandwidth > 0.0))
    throw InvalidInput("DetectorConfig: measurement bandwidth must be > 0");
}

PhaseSeries detector_noise(const DetectorConfig& cfg, Carrier carrier, Eigen::Index n, double tau0, Seed seed)
{
  cfg.validate();
  if (cfg.floor == 0.0)
    return PhaseSeries::zeros(n, tau0);
  // One-sided PSD S of white samples with variance v at interval tau0: S = 2 v tau0.
  const double sigma = std::sqrt(cfg.phase_time_psd(carrier) / (2.0 * tau0));
  std::mt19937_64 rng(seed.value);
  std::normal_distribution<double> normal(0.0, sigma);
  Eigen::VectorXd x(n);
  for (Eigen::Index i = 0; i < n; ++i)
    x[i] = normal(rng);
  return PhaseSeries(std::move(x), tau0);
}

PhaseSeries detect_phase(const PhaseSeries& a, const PhaseSeries& b, const DetectorConfig& cfg, Carrier carrier,
                         Seed seed)
{
  const PhaseSeries diff = a - b;
  if (cfg.floor == 0.0)
  {
    cfg.validate();
    return diff;
  }
  return diff + detector_noise(cfg, carrier, a.size(), a.tau0(), seed);
}

PhaseSeries measure_phase(const PhaseSeries& x, double bandwidth, double sample_interval)
{
  if (!(bandwidth > 0.0))
    throw InvalidInput("measure_phase: bandwidth must be > 0");
  const double ratio = sample_interval / x.tau0();
  const auto stride = static_cast<Eigen::Index>(std::llround(ratio));
  if (stride < 1 || std::abs(ratio - static_cast<double>(stride)) > 1e-9 * ratio)
    throw InvalidInput("measure_phase: sample interval must be an integer multiple of tau0");

  // Single-pole low-pass; noise-equivalent bandwidth of a first-order filter is (pi/2) f_c.
  const double corner = 2.0 * bandwidth / kPi;
  const double alpha = 1.0 - std::exp(-2.0 * kPi * corner * x.tau0());
  const Eigen::Index count = (x.size() - 1) / stride + 1;
  Eigen::VectorXd out(count);
  double state = x[0];
  for (Eigen::Index i = 0; i < x.size(); ++i)
  {
    state += alpha * (x[i] - state);
    if (i % stride == 0)
      out[i / stride] = state;
  }
  return PhaseSeries(std::move(out), static_cast<double>(stride) * x.tau0(), x.label());
}

std::string to_string(ActuatorKind kind)
{
  switch (kind)
  {
    case ActuatorKind::rf_phase_shifter:
      return "rf_phase_shifter";
    case ActuatorKind::piezo_stretcher:
      return "piezo_stretcher";
    case ActuatorKind::thermal_spool:
      return "thermal_spool";
  }
  return "unknown";
}

ActuatorState ActuatorState::defaults(ActuatorKind kind)
{
  ActuatorState s;
  s.kind = kind;
  switch (kind)
  {
    case ActuatorKind::rf_phase_shifter:
      s.range = 1e-6;
      s.bandwidth = 1e5;
      break;
    case ActuatorKind::piezo_stretcher:
      s.range = 2e-12;
      s.bandwidth = 5e3;
      break;
    case ActuatorKind::thermal_spool:
      s.range = 1e-9;
      s.bandwidth = 1.0;
      break;
  }
  return s;
}

void ActuatorState::validate() const
{
  if (!(range >= 0.0))
    throw InvalidInput(to_string(kind) + ": range must be >= 0");
  if (!(bandwidth > 0.0))
    throw InvalidInput(to_string(kind) + ": bandwidth must be > 0");
}

ActuatorState apply_actuator(const ActuatorState& state, double command, double dt)
{
  if (!(dt > 0.0))
    throw InvalidInput("apply_actuator: dt must be > 0");
  ActuatorState next = state;
  next.command = command;
  next.saturated = std::abs(command) > state.range;
  const double target = std::clamp(command, -state.range, state.range);
  const double alpha = 1.0 - std::exp(-2.0 * kPi * state.bandwidth * dt);
  next.output = std::clamp(state.output + alpha * (target - state.output), -state.range, state.range);
  return next;
}

void LinkModel::validate() const
{
  if (!(length_km > 0.0) || !(delay_per_km > 0.0))
    throw InvalidInput("LinkModel: length and delay per km must be > 0");
  fiber_noise.validate();
  out_of_loop.validate();
  if (!(differential_ratio >= 0.0 && differential_ratio <= 1.0))
    throw InvalidInput("LinkModel: differential ratio must be in [0, 1]");
  for (const auto* d : {&near_detector, &far_detector, &evaluation_detector, &probe_detector})
    d->validate();
  for (const auto* a : {&rf, &piezo, &thermal})
    a->validate();
}

LinkRealization realize_link(const LinkModel& model, Eigen::Index n, double dt, Seed seed)
{
  model.validate();
  auto [n1, n2] = correlated_pair(model.fiber_noise, model.differential_ratio, n, dt, derive_seed(seed, 0));
  return LinkRealization{
    FiberPath(model.length_km, std::move(n1), model.delay_per_km),
    FiberPath(model.length_km, std::move(n2), model.delay_per_km),
    gen_noise(model.out_of_loop, n, dt, derive_seed(seed, 1)),
    detector_noise(model.near_detector, model.main, n, dt, derive_seed(seed, 2)),
    detector_noise(model.far_detector, model.forward, n, dt, derive_seed(seed, 3)),
    detector_noise(model.evaluation_detector, model.main, n, dt, derive_seed(seed, 4)),
    detector_noise(model.probe_detector, model.probe, n, dt, derive_seed(seed, 5)),
  };
}

}  // namespace fiberlink
