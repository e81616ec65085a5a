#pragma once

#include "fiberlink/noise.hpp"
#include "fiberlink/series.hpp"

#include <optional>
#include <string>

namespace fiberlink
{

inline constexpr double kDelayPerKm = 5e-6;  // s/km in standard single-mode fiber

struct Carrier
{
  double frequency = 100e6;  // Hz

  explicit Carrier(double hz) : frequency(hz)
  {
    if (!(hz > 0.0))
      throw InvalidInput("Carrier: frequency must be > 0");
  }
};

/// Phase-time (s) to radians at the given carrier: 2 pi f_c x.
PhaseSeries to_radians(const PhaseSeries& phase_time, Carrier carrier);
/// Radians at the carrier back to phase-time.
PhaseSeries to_phase_time(const PhaseSeries& radians, Carrier carrier);

/// One fiber span: static delay plus a delay-fluctuation record.
struct FiberPath
{
  double length_km;
  double base_delay;  // s
  PhaseSeries noise;  // delta tau(t), s
  std::optional<Eigen::VectorXd> actuator_offsets;  // extra delay per sample, s

  FiberPath(double length_km, PhaseSeries noise, double delay_per_km = kDelayPerKm);

  /// Whole simulation steps of the base delay (rounded to nearest).
  Eigen::Index delay_steps() const;
  /// Sub-step remainder, carried as a static phase-time offset.
  double static_offset() const;
};

/// A signal after transmission: phase-time plus the carrier it rides on.
struct LinkSignal
{
  PhaseSeries phase_time;
  Carrier carrier;
  double total_delay;  // s, sum of base delays traversed

  PhaseSeries radians() const { return to_radians(phase_time, carrier); }
};

/// out[n] = in[n - D] + delta tau[n] + actuator[n] + remainder; samples
/// before the start of the record hold the first input value.
LinkSignal propagate(const PhaseSeries& input, const FiberPath& path, Carrier carrier);

/// Out on `path_out`, back on `path_back` (which may be the same fiber).
LinkSignal round_trip(const PhaseSeries& input, const FiberPath& path_out, const FiberPath& path_back,
                      Carrier carrier_out, Carrier carrier_back);

/// Phase comparator noise: white phase floor in rad/sqrt(Hz) at the detection
/// carrier, and the noise-equivalent bandwidth of the phase meter that samples it.
struct DetectorConfig
{
  double floor = 0.0;                 // rad/sqrt(Hz)
  double measurement_bandwidth = 20.0; // Hz

  static DetectorConfig from_db(double psd_db_rad2_per_hz, double measurement_bandwidth = 20.0);
  double floor_db() const;
  /// One-sided phase-time PSD of the floor at `carrier`, s^2/Hz.
  double phase_time_psd(Carrier carrier) const;
  void validate() const;
};

/// White detector noise realization in phase-time at the given carrier.
PhaseSeries detector_noise(const DetectorConfig& cfg, Carrier carrier, Eigen::Index n, double tau0, Seed seed);

/// (a - b) plus the detector floor converted to phase-time at `carrier`.
PhaseSeries detect_phase(const PhaseSeries& a, const PhaseSeries& b, const DetectorConfig& cfg, Carrier carrier,
                         Seed seed);

/// Phase meter: first-order low-pass with the given noise-equivalent
/// bandwidth, then sampled every `sample_interval` seconds.
PhaseSeries measure_phase(const PhaseSeries& x, double bandwidth, double sample_interval);

enum class ActuatorKind
{
  rf_phase_shifter,
  piezo_stretcher,
  thermal_spool
};

std::string to_string(ActuatorKind kind);

struct ActuatorState
{
  ActuatorKind kind = ActuatorKind::rf_phase_shifter;
  double range = 1e-6;      // s of delay authority, symmetric
  double bandwidth = 1e5;   // Hz, first-order corner
  double command = 0.0;     // last requested delay, s
  double output = 0.0;      // delay currently applied, s
  bool saturated = false;

  /// Defaults: the RF shifter is effectively endless and wideband; the piezo
  /// has a few ps of authority; the 1-km spool is slow with ns of authority.
  static ActuatorState defaults(ActuatorKind kind);
  void validate() const;
};

/// First-order lag toward the clamped command; saturation is reported, not thrown.
ActuatorState apply_actuator(const ActuatorState& state, double command, double dt);

/// Dual-fiber link between two stations. Fiber 1 carries the reference out and
/// is corrected at the near end; fiber 2 brings the signal back and is
/// corrected at the far end.
struct LinkModel
{
  double length_km = 43.0;
  double delay_per_km = kDelayPerKm;
  NoiseSpec fiber_noise;          // per fiber, delay fluctuation
  double differential_ratio = 0.1;
  NoiseSpec out_of_loop;          // station segments outside both loops
  Carrier main{100e6};            // reference modulation
  Carrier forward{1e9};           // far-end round-trip modulation
  Carrier probe{270e6};           // open-loop probe in fiber 1
  DetectorConfig near_detector;
  DetectorConfig far_detector;
  DetectorConfig evaluation_detector;
  DetectorConfig probe_detector;
  ActuatorState rf = ActuatorState::defaults(ActuatorKind::rf_phase_shifter);
  ActuatorState piezo = ActuatorState::defaults(ActuatorKind::piezo_stretcher);
  ActuatorState thermal = ActuatorState::defaults(ActuatorKind::thermal_spool);

  double one_way_delay() const { return length_km * delay_per_km; }
  double round_trip_delay() const { return 2.0 * one_way_delay(); }
  void validate() const;
};

/// Noise records drawn for one run of a LinkModel.
struct LinkRealization
{
  FiberPath fiber1;
  FiberPath fiber2;
  PhaseSeries out_of_loop;
  PhaseSeries near_noise;   // phase-time
  PhaseSeries far_noise;
  PhaseSeries evaluation_noise;
  PhaseSeries probe_noise;
};

/// Sub-seeds: 0 fibers, 1 out-of-loop, 2..5 detectors.
LinkRealization realize_link(const LinkModel& model, Eigen::Index n, double dt, Seed seed);

}  // namespace fiberlink
