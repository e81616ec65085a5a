#pragma once

#include "fiberlink/fiber_link.hpp"
#include "fiberlink/noise.hpp"
#include "fiberlink/series.hpp"

#include <complex>
#include <functional>
#include <string>

namespace fiberlink
{

enum class Topology
{
  rf_conjugation_near_end,
  optical_far_end
};

enum class CompensationMode
{
  series,       // far-end system relays the near-end corrected signal
  independent   // each system corrects its own fiber against a local copy
};

std::string to_string(Topology t);
std::string to_string(CompensationMode m);

/// PI filter driving an integrating correction: the PI output is the rate of
/// change of the applied delay, so the open-loop response is
/// K(s) = kp / s + ki / s^2 in front of the round-trip transport delay.
struct ControllerConfig
{
  Topology topology = Topology::rf_conjugation_near_end;
  double proportional_gain = 0.0;  // 1/s
  double integrator_gain = 0.0;    // 1/s^2
  double unity_gain_hz = 300.0;
  double corner_hz = 30.0;         // PI zero
  double crossover_hz = 0.1;       // piezo -> thermal offload, optical topology only

  /// Gains placing |K| = 1 at unity_gain_hz with the PI zero at corner_hz.
  static ControllerConfig design(Topology topology, double unity_gain_hz = 300.0, double corner_hz = 30.0,
                                 double crossover_hz = 0.1);
  /// kp = 2 pi f_u, ki = 0.
  static ControllerConfig pure_integrator(Topology topology, double unity_gain_hz);
  void validate() const;
};

struct LoopState
{
  double integrator = 0.0;   // integral of the scaled error
  double last_error = 0.0;   // scaled error of the previous step
  double last_rate = 0.0;    // PI output of the previous step
  double correction = 0.0;   // requested delay correction, s
  bool saturated = false;
  bool closed = true;
};

/// One sample of the near-end RF conjugator. The round-trip error (radians at
/// the carrier) is halved, negated and PI-filtered into the pre-correction
/// applied to the outgoing signal. Returns the commanded correction in seconds.
double rf_conjugation_step(double round_trip_error_rad, LoopState& state, const ControllerConfig& cfg, double dt,
                           Carrier carrier = Carrier(100e6));

struct OpticalState
{
  LoopState loop;
  ActuatorState piezo = ActuatorState::defaults(ActuatorKind::piezo_stretcher);
  ActuatorState thermal = ActuatorState::defaults(ActuatorKind::thermal_spool);
  double thermal_command = 0.0;

  double total_delay() const { return piezo.output + thermal.output; }
};

struct OpticalCommands
{
  double piezo;
  double thermal;
};

/// One sample of the far-end optical corrector. The fast PI path drives the
/// piezo stretcher; the thermal spool integrates the piezo position at the
/// crossover frequency so the piezo stays centered. Both actuators are updated.
OpticalCommands optical_far_end_step(double arrival_vs_return_error, OpticalState& state,
                                     const ControllerConfig& cfg, double dt);

/// Unity-gain frequency at which a pure integrator plus a transport delay
/// reaches -180 degrees: 1 / (4 delay).
double critical_frequency(double round_trip_delay);

/// Discrete open-loop gain at frequency f: controller (with actuator response)
/// times the round-trip transport delay of `delay_steps` samples.
std::complex<double> loop_gain(const ControllerConfig& cfg, double f, Eigen::Index delay_steps, double dt);

struct DelayLoopTrial
{
  bool diverged;
  double growth;  // RMS error in the last quarter over RMS in the second quarter
};

/// Impulse response of the bare delay loop (ideal actuator).
DelayLoopTrial simulate_delay_loop(const ControllerConfig& cfg, Eigen::Index delay_steps, double dt,
                                   Eigen::Index steps);

/// Bisection on the pure-integrator unity-gain frequency for the onset of divergence.
double divergence_onset(double round_trip_delay, double dt, double lo_hz, double hi_hz, int iterations = 30);

struct LoopConfig
{
  ControllerConfig near = ControllerConfig::design(Topology::rf_conjugation_near_end);
  ControllerConfig far = ControllerConfig::design(Topology::optical_far_end);
  CompensationMode mode = CompensationMode::series;
  bool enabled = true;
  double divergence_threshold = 1e-6;  // s of loop error
};

struct LoopDiagnostics
{
  Eigen::Index rf_saturated_steps = 0;
  Eigen::Index piezo_saturated_steps = 0;
  Eigen::Index thermal_saturated_steps = 0;
  double max_abs_error = 0.0;
};

struct ClosedLoopResult
{
  PhaseSeries one_way;     // delivered at the far end (plus out-of-loop segments)
  PhaseSeries round_trip;  // returned to the near end via fiber 2, as measured
  PhaseSeries probe;       // open-loop probe round trip in fiber 1, as measured
  LoopDiagnostics diagnostics;
};

/// Full-rate simulation of both correction systems on a realized link.
/// Works in error coordinates (ideal reference = 0). Throws DivergenceError
/// when a loop error exceeds the divergence threshold.
ClosedLoopResult run_closed_loop(const LinkRealization& link, const LinkModel& model, const LoopConfig& loop);
ClosedLoopResult run_closed_loop(const LinkModel& model, const LoopConfig& loop, Eigen::Index n, double dt,
                                 Seed seed);

/// Closed-loop transfer functions from each noise source to each output.
struct LoopTransfers
{
  std::complex<double> fiber1_to_one_way, fiber1_to_round_trip, fiber2_to_round_trip;
  std::complex<double> near_to_one_way, near_to_round_trip, far_to_round_trip;
  std::complex<double> fiber1_to_probe;
};

LoopTransfers loop_transfers(const LinkModel& model, const LoopConfig& loop, double f, double dt);

/// Long-term model at a coarse step (typically 1 s): slow fiber noise is
/// filtered by the closed-loop transfer functions; white phase sources are
/// replaced by their variance as seen through the loops and the phase meter.
/// `loop_dt` is the step of the full-rate loop being represented.
ClosedLoopResult run_decimated(const LinkModel& model, const LoopConfig& loop, Eigen::Index n, double step,
                               double loop_dt, Seed seed);

/// Variance per phase-meter sample of white phase noise with one-sided PSD
/// `psd` (s^2/Hz) seen through `transfer` and a first-order meter of
/// noise bandwidth `bandwidth`, integrated up to the Nyquist frequency of dt.
double metered_variance(double psd, const std::function<std::complex<double>(double)>& transfer, double bandwidth,
                        double dt);

}  // namespace fiberlink
