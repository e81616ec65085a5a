#include "fiberlink/control.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>
#include <sstream>

namespace fiberlink
{

using cd = std::complex<double>;

std::string to_string(Topology t)
{
  return t == Topology::rf_conjugation_near_end ? "rf_conjugation_near_end" : "optical_far_end";
}

std::string to_string(CompensationMode m)
{
  return m == CompensationMode::series ? "series" : "independent";
}

ControllerConfig ControllerConfig::design(Topology topology, double unity_gain_hz, double corner_hz,
                                          double crossover_hz)
{
  if (!(unity_gain_hz > 0.0))
    throw InvalidInput("ControllerConfig: unity-gain target must be > 0");
  if (!(corner_hz >= 0.0))
    throw InvalidInput("ControllerConfig: corner frequency must be >= 0");
  ControllerConfig c;
  c.topology = topology;
  c.unity_gain_hz = unity_gain_hz;
  c.corner_hz = corner_hz;
  c.crossover_hz = crossover_hz;
  const double ratio = corner_hz / unity_gain_hz;
  // |kp/(jw) + ki/(jw)^2| = kp/w sqrt(1 + (wz/w)^2) = 1 at w = w_u, with ki = kp wz.
  c.proportional_gain = 2.0 * kPi * unity_gain_hz / std::sqrt(1.0 + ratio * ratio);
  c.integrator_gain = c.proportional_gain * 2.0 * kPi * corner_hz;
  c.validate();
  return c;
}

ControllerConfig ControllerConfig::pure_integrator(Topology topology, double unity_gain_hz)
{
  return design(topology, unity_gain_hz, 0.0);
}

void ControllerConfig::validate() const
{
  if (!(proportional_gain >= 0.0) || !(integrator_gain >= 0.0))
    throw InvalidInput("ControllerConfig: gains must be >= 0");
  if (!(unity_gain_hz > 0.0))
    throw InvalidInput("ControllerConfig: unity-gain target must be > 0");
  if (topology == Topology::optical_far_end && !(crossover_hz > 0.0))
    throw InvalidInput("ControllerConfig: optical topology needs a crossover frequency > 0");
}

namespace
{

/// Tustin double integration: integral of the scaled error feeds the rate,
/// the rate is integrated into the correction.
double pi_rate_step(double scaled_error, LoopState& state, const ControllerConfig& cfg, double dt)
{
  state.integrator += 0.5 * (scaled_error + state.last_error) * dt;
  const double rate = cfg.proportional_gain * scaled_error + cfg.integrator_gain * state.integrator;
  state.correction += 0.5 * (rate + state.last_rate) * dt;
  state.last_error = scaled_error;
  state.last_rate = rate;
  return state.correction;
}

cd zinv(double f, double dt, Eigen::Index k = 1)
{
  return std::polar(1.0, -2.0 * kPi * f * dt * static_cast<double>(k));
}

/// Controller K(z) = I (kp + ki I), I Tustin integrator.
cd controller_response(const ControllerConfig& cfg, double f, double dt)
{
  const cd z1 = zinv(f, dt);
  const cd integ = 0.5 * dt * (1.0 + z1) / (1.0 - z1);
  return integ * (cfg.proportional_gain + cfg.integrator_gain * integ);
}

cd lag_response(const ActuatorState& a, double f, double dt)
{
  const double alpha = 1.0 - std::exp(-2.0 * kPi * a.bandwidth * dt);
  return alpha / (1.0 - (1.0 - alpha) * zinv(f, dt));
}

/// Piezo plus thermal offload seen as one actuator (linear, unsaturated).
cd optical_actuator_response(const ActuatorState& piezo, const ActuatorState& thermal, double crossover, double f,
                             double dt)
{
  const cd ap = lag_response(piezo, f, dt);
  const cd at = lag_response(thermal, f, dt);
  const cd z1 = zinv(f, dt);
  const cd offload = 2.0 * kPi * crossover * dt / (1.0 - z1);
  return ap * (1.0 + at * offload) / (1.0 + z1 * ap * at * offload);
}

double rms(const Eigen::Ref<const Eigen::VectorXd>& v)
{
  return v.size() == 0 ? 0.0 : std::sqrt(v.squaredNorm() / static_cast<double>(v.size()));
}

}  // namespace

double rf_conjugation_step(double round_trip_error_rad, LoopState& state, const ControllerConfig& cfg, double dt,
                           Carrier carrier)
{
  if (!state.closed)
    return state.correction;
  const double error_s = round_trip_error_rad / (2.0 * kPi * carrier.frequency);
  return pi_rate_step(-0.5 * error_s, state, cfg, dt);
}

OpticalCommands optical_far_end_step(double arrival_vs_return_error, OpticalState& state,
                                     const ControllerConfig& cfg, double dt)
{
  if (!state.loop.closed)
    return {state.piezo.command, state.thermal_command};
  const double total = pi_rate_step(-0.5 * arrival_vs_return_error, state.loop, cfg, dt);
  const double piezo_command = total - state.thermal.output;
  state.piezo = apply_actuator(state.piezo, piezo_command, dt);
  state.thermal_command += 2.0 * kPi * cfg.crossover_hz * dt * state.piezo.output;
  state.thermal = apply_actuator(state.thermal, state.thermal_command, dt);
  state.loop.saturated = state.piezo.saturated || state.thermal.saturated;
  return {piezo_command, state.thermal_command};
}

double critical_frequency(double round_trip_delay)
{
  if (!(round_trip_delay > 0.0))
    throw InvalidInput("critical_frequency: delay must be > 0");
  return 1.0 / (4.0 * round_trip_delay);
}

std::complex<double> loop_gain(const ControllerConfig& cfg, double f, Eigen::Index delay_steps, double dt)
{
  return controller_response(cfg, f, dt) * zinv(f, dt, delay_steps);
}

DelayLoopTrial simulate_delay_loop(const ControllerConfig& cfg, Eigen::Index delay_steps, double dt,
                                   Eigen::Index steps)
{
  if (delay_steps < 1)
    throw InvalidInput("simulate_delay_loop: delay must be at least one step");
  if (steps < 16)
    throw InvalidInput("simulate_delay_loop: need at least 16 steps");
  const Carrier carrier(100e6);
  const double to_rad = 2.0 * kPi * carrier.frequency;
  Eigen::VectorXd correction = Eigen::VectorXd::Zero(steps);
  Eigen::VectorXd error = Eigen::VectorXd::Zero(steps);
  LoopState state;
  const double kick = 1e-12;
  for (Eigen::Index n = 0; n < steps; ++n)
  {
    const double fed_back = n >= delay_steps ? correction[n - delay_steps] : 0.0;
    error[n] = 2.0 * fed_back + (n == 0 ? kick : 0.0);
    correction[n] = rf_conjugation_step(error[n] * to_rad, state, cfg, dt, carrier);
    if (!std::isfinite(error[n]) || std::abs(error[n]) > 1e12 * kick)
      return {true, std::numeric_limits<double>::infinity()};
  }
  const Eigen::Index q = steps / 4;
  const double early = rms(error.segment(q, q));
  const double late = rms(error.segment(3 * q, steps - 3 * q));
  if (early == 0.0)
    return {false, 0.0};
  const double growth = late / early;
  return {growth > 1.0, growth};
}

double divergence_onset(double round_trip_delay, double dt, double lo_hz, double hi_hz, int iterations)
{
  const auto delay_steps = static_cast<Eigen::Index>(std::llround(round_trip_delay / dt));
  const Eigen::Index steps = 40000;
  auto diverges = [&](double f) {
    return simulate_delay_loop(ControllerConfig::pure_integrator(Topology::rf_conjugation_near_end, f), delay_steps,
                               dt, steps)
      .diverged;
  };
  if (diverges(lo_hz) || !diverges(hi_hz))
    throw InvalidInput("divergence_onset: bracket [" + std::to_string(lo_hz) + ", " + std::to_string(hi_hz) +
                       "] Hz does not straddle the stability boundary");
  for (int i = 0; i < iterations; ++i)
  {
    const double mid = 0.5 * (lo_hz + hi_hz);
    (diverges(mid) ? hi_hz : lo_hz) = mid;
  }
  return 0.5 * (lo_hz + hi_hz);
}

ClosedLoopResult run_closed_loop(const LinkRealization& link, const LinkModel& model, const LoopConfig& loop)
{
  model.validate();
  loop.near.validate();
  loop.far.validate();
  const PhaseSeries& d1 = link.fiber1.noise;
  const PhaseSeries& d2 = link.fiber2.noise;
  const Eigen::Index n = d1.size();
  const double dt = d1.tau0();
  for (const PhaseSeries* s : {&d2, &link.out_of_loop, &link.near_noise, &link.far_noise, &link.evaluation_noise,
                               &link.probe_noise})
    if (s->size() != n || s->tau0() != dt)
      throw InvalidInput("run_closed_loop: realization records are not aligned");

  const Eigen::Index k1 = link.fiber1.delay_steps();
  const Eigen::Index k2 = link.fiber2.delay_steps();
  if (loop.enabled && (k1 < 1 || k2 < 1))
    throw InvalidInput("run_closed_loop: fiber delay must span at least one simulation step");
  const double rem1 = link.fiber1.static_offset();
  const double rem2 = link.fiber2.static_offset();
  const bool series = loop.mode == CompensationMode::series;
  auto at = [](const Eigen::VectorXd& v, Eigen::Index i) { return v[std::max<Eigen::Index>(0, i)]; };

  Eigen::VectorXd c = Eigen::VectorXd::Zero(n);      // RF pre-correction applied at the near end
  Eigen::VectorXd a1 = Eigen::VectorXd::Zero(n);     // signal delivered at the far end
  Eigen::VectorXd a2 = Eigen::VectorXd::Zero(n);     // optical correction on fiber 2
  Eigen::VectorXd in2 = Eigen::VectorXd::Zero(n);    // what the far end launches into fiber 2
  Eigen::VectorXd o2 = Eigen::VectorXd::Zero(n);     // arrival back at the near end
  Eigen::VectorXd one_way(n), rt(n), probe(n), leg1(n);

  LoopState near_state;
  OpticalState far_state;
  far_state.piezo = model.piezo;
  far_state.thermal = model.thermal;
  ActuatorState rf = model.rf;
  LoopDiagnostics diag;
  const double to_rad_main = 2.0 * kPi * model.main.frequency;

  auto check = [&](double e, Eigen::Index i, const char* which) {
    diag.max_abs_error = std::max(diag.max_abs_error, std::abs(e));
    if (!std::isfinite(e) || std::abs(e) > loop.divergence_threshold)
    {
      std::ostringstream msg;
      msg << "loop diverged: " << which << " error " << e << " s at step " << i << " (t = " << static_cast<double>(i) * dt
          << " s) exceeds " << loop.divergence_threshold << " s";
      throw DivergenceError(msg.str());
    }
  };

  for (Eigen::Index i = 0; i < n; ++i)
  {
    // Fiber 1, near-end RF conjugation.
    a1[i] = ((at(c, i - k1) + d1[i]) + 0.0) + rem1;
    if (loop.enabled)
    {
      const double returned = ((at(a1, i - k1) + d1[i]) + 0.0) + rem1 + at(c, i - 2 * k1);
      const double e1 = (returned - 2.0 * rem1) + link.near_noise[i];
      check(e1, i, "near-end");
      const double command = rf_conjugation_step(e1 * to_rad_main, near_state, loop.near, dt, model.main);
      rf = apply_actuator(rf, command, dt);
      c[i] = rf.output;
      diag.rf_saturated_steps += rf.saturated ? 1 : 0;
    }

    // Fiber 2, far-end optical correction.
    in2[i] = series ? a1[i] : 0.0;
    o2[i] = ((at(in2, i - k2) + d2[i]) + at(a2, i - k2)) + rem2;
    if (loop.enabled)
    {
      const double returned = ((at(o2, i - k2) + d2[i]) + at(a2, i - 2 * k2)) + rem2;
      const double e2 = (returned - in2[i] - 2.0 * rem2) + link.far_noise[i];
      check(e2, i, "far-end");
      optical_far_end_step(e2, far_state, loop.far, dt);
      a2[i] = far_state.total_delay();
      diag.piezo_saturated_steps += far_state.piezo.saturated ? 1 : 0;
      diag.thermal_saturated_steps += far_state.thermal.saturated ? 1 : 0;
    }

    const double delivered_back = series ? o2[i] : o2[i] + at(a1, i - k2);
    one_way[i] = a1[i] + link.out_of_loop[i];
    rt[i] = (delivered_back + link.out_of_loop[i]) + link.evaluation_noise[i];

    // The 270 MHz probe rides fiber 1 out and back without correction.
    leg1[i] = ((0.0 + d1[i]) + 0.0) + rem1;
    probe[i] = (((at(leg1, i - k1) + d1[i]) + 0.0) + rem1) + link.probe_noise[i];
  }

  return ClosedLoopResult{PhaseSeries(std::move(one_way), dt, "one_way"), PhaseSeries(std::move(rt), dt, "round_trip"),
                          PhaseSeries(std::move(probe), dt, "open_loop_probe"), diag};
}

ClosedLoopResult run_closed_loop(const LinkModel& model, const LoopConfig& loop, Eigen::Index n, double dt, Seed seed)
{
  return run_closed_loop(realize_link(model, n, dt, seed), model, loop);
}

LoopTransfers loop_transfers(const LinkModel& model, const LoopConfig& loop, double f, double dt)
{
  const auto k = static_cast<Eigen::Index>(std::llround(model.one_way_delay() / dt));
  // The double integrator is singular at DC; the limit is taken just above it.
  f = std::max(std::abs(f), 1e-9);
  const cd p = zinv(f, dt, k);
  LoopTransfers t;
  t.fiber1_to_probe = 1.0 + p;
  if (!loop.enabled)
  {
    t.fiber1_to_one_way = 1.0;
    t.near_to_one_way = 0.0;
    t.fiber1_to_round_trip = p;
    t.near_to_round_trip = 0.0;
    t.fiber2_to_round_trip = 1.0;
    t.far_to_round_trip = 0.0;
    return t;
  }
  // Correction = -G * error, error = 2 P^2 correction + ...
  const cd g1 = 0.5 * lag_response(model.rf, f, dt) * controller_response(loop.near, f, dt);
  const cd g2 = 0.5 * optical_actuator_response(model.piezo, model.thermal, loop.far.crossover_hz, f, dt) *
                controller_response(loop.far, f, dt);
  const cd one_l1 = 1.0 + 2.0 * g1 * p * p;
  const cd one_l2 = 1.0 + 2.0 * g2 * p * p;

  t.fiber1_to_one_way = 1.0 - g1 * p * (1.0 + p) / one_l1;
  t.near_to_one_way = -g1 * p / one_l1;
  const cd relay = loop.mode == CompensationMode::series ? p - p * g2 * (p * p - 1.0) / one_l2 : p;
  t.fiber1_to_round_trip = t.fiber1_to_one_way * relay;
  t.near_to_round_trip = t.near_to_one_way * relay;
  t.fiber2_to_round_trip = 1.0 - p * g2 * (1.0 + p) / one_l2;
  t.far_to_round_trip = -p * g2 / one_l2;
  return t;
}

double metered_variance(double psd, const std::function<cd(double)>& transfer, double bandwidth, double dt)
{
  if (psd == 0.0)
    return 0.0;
  const double corner = 2.0 * bandwidth / kPi;
  const double alpha = 1.0 - std::exp(-2.0 * kPi * corner * dt);
  const double nyquist = 0.5 / dt;
  const int points = 200000;
  const double df = nyquist / points;
  double sum = 0.0;
  for (int i = 0; i <= points; ++i)
  {
    const double f = df * i;
    const double meter = std::norm(alpha / (1.0 - (1.0 - alpha) * zinv(f, dt)));
    const double w = (i == 0 || i == points) ? 0.5 : 1.0;
    sum += w * std::norm(transfer(f)) * meter;
  }
  return psd * sum * df;
}

namespace
{

/// Splits white phase terms (alpha = 2) out of a spec; returns their summed level.
double take_white_pm(NoiseSpec& spec)
{
  double h = 0.0;
  std::erase_if(spec.powerlaw, [&](const PowerLawTerm& t) {
    if (t.alpha != 2)
      return false;
    h += t.h;
    return true;
  });
  return h;
}

/// Filters a record through transfer(f) using an even extension so the
/// record edges do not wrap.
Eigen::VectorXd filter_by(const Eigen::VectorXd& x, double step, const std::function<cd(double)>& transfer)
{
  const Eigen::Index n = x.size();
  const auto un = static_cast<std::size_t>(n);
  const std::size_t m = std::bit_ceil(2 * un);
  // x, reversed x, then the first value held: continuous across the wrap.
  std::vector<double> ext(m, x[0]);
  for (std::size_t i = 0; i < un; ++i)
  {
    ext[i] = x[static_cast<Eigen::Index>(i)];
    ext[2 * un - 1 - i] = x[static_cast<Eigen::Index>(i)];
  }
  Eigen::FFT<double> fft;
  std::vector<cd> spec;
  fft.fwd(spec, ext);
  const double df = 1.0 / (static_cast<double>(m) * step);
  spec[0] *= transfer(0.0).real();
  for (std::size_t k = 1; k <= m / 2; ++k)
  {
    const cd g = transfer(static_cast<double>(k) * df);
    spec[k] *= g;
    if (k != m - k)
      spec[m - k] *= std::conj(g);
    else
      spec[k] = spec[k].real();
  }
  std::vector<double> out;
  fft.inv(out, spec);
  return Eigen::Map<const Eigen::VectorXd>(out.data(), n);
}

Eigen::VectorXd white_samples(Eigen::Index n, double variance, Seed seed)
{
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
  if (variance <= 0.0)
    return w;
  std::mt19937_64 rng(seed.value);
  std::normal_distribution<double> normal(0.0, std::sqrt(variance));
  for (Eigen::Index i = 0; i < n; ++i)
    w[i] = normal(rng);
  return w;
}

}  // namespace

ClosedLoopResult run_decimated(const LinkModel& model, const LoopConfig& loop, Eigen::Index n, double step,
                               double loop_dt, Seed seed)
{
  model.validate();
  if (!(step > loop_dt))
    throw InvalidInput("run_decimated: step must be coarser than the loop step");

  NoiseSpec slow = model.fiber_noise;
  const double h_white = take_white_pm(slow);
  NoiseSpec ool_slow = model.out_of_loop;
  const double h_ool_white = take_white_pm(ool_slow);

  auto [s1, s2] = correlated_pair(slow, model.differential_ratio, n, step, derive_seed(seed, 10));
  const PhaseSeries ool = gen_noise(ool_slow, n, step, derive_seed(seed, 11));

  auto tf = [&](double f) { return loop_transfers(model, loop, f, loop_dt); };
  const Eigen::VectorXd slow_one_way = filter_by(s1.samples(), step, [&](double f) { return tf(f).fiber1_to_one_way; });
  const Eigen::VectorXd slow_rt =
    filter_by(s1.samples(), step, [&](double f) { return tf(f).fiber1_to_round_trip; }) +
    filter_by(s2.samples(), step, [&](double f) { return tf(f).fiber2_to_round_trip; });
  const Eigen::VectorXd slow_probe = filter_by(s1.samples(), step, [&](double f) { return tf(f).fiber1_to_probe; });

  // White phase sources as seen through the loops and the phase meters.
  const double four_pi2 = 4.0 * kPi * kPi;
  const double s_fiber = h_white / four_pi2;
  const double s_ool = h_ool_white / four_pi2;
  const double r = model.differential_ratio;
  const double rho = 1.0 - 0.5 * r * r;
  const double b_eval = model.evaluation_detector.measurement_bandwidth;
  const double b_probe = model.probe_detector.measurement_bandwidth;
  const double s_near = model.near_detector.phase_time_psd(model.main);
  const double s_far = model.far_detector.phase_time_psd(model.forward);
  const double s_eval = model.evaluation_detector.phase_time_psd(model.main);
  const double s_probe = model.probe_detector.phase_time_psd(model.probe);
  auto one = [](double) { return cd(1.0); };

  const double var_one_way = metered_variance(s_fiber, [&](double f) { return tf(f).fiber1_to_one_way; }, b_eval, loop_dt) +
                             metered_variance(s_near, [&](double f) { return tf(f).near_to_one_way; }, b_eval, loop_dt) +
                             metered_variance(s_ool, one, b_eval, loop_dt);
  // Correlated fibers: |T1|^2 + |T2|^2 + 2 rho Re(T1 T2*) = rho |T1 + T2|^2 + (1 - rho)(|T1|^2 + |T2|^2).
  const double var_rt =
    rho * metered_variance(s_fiber, [&](double f) { const auto t = tf(f); return t.fiber1_to_round_trip + t.fiber2_to_round_trip; }, b_eval, loop_dt) +
    (1.0 - rho) * (metered_variance(s_fiber, [&](double f) { return tf(f).fiber1_to_round_trip; }, b_eval, loop_dt) +
                   metered_variance(s_fiber, [&](double f) { return tf(f).fiber2_to_round_trip; }, b_eval, loop_dt)) +
    metered_variance(s_near, [&](double f) { return tf(f).near_to_round_trip; }, b_eval, loop_dt) +
    metered_variance(s_far, [&](double f) { return tf(f).far_to_round_trip; }, b_eval, loop_dt) +
    metered_variance(s_eval, one, b_eval, loop_dt) + metered_variance(s_ool, one, b_eval, loop_dt);
  const double var_probe = metered_variance(s_fiber, [&](double f) { return tf(f).fiber1_to_probe; }, b_probe, loop_dt) +
                           metered_variance(s_probe, one, b_probe, loop_dt);

  Eigen::VectorXd one_way = slow_one_way + white_samples(n, var_one_way, derive_seed(seed, 12)) + ool.samples();
  Eigen::VectorXd rt = slow_rt + white_samples(n, var_rt, derive_seed(seed, 13)) + ool.samples();
  Eigen::VectorXd probe = slow_probe + white_samples(n, var_probe, derive_seed(seed, 14));
  return ClosedLoopResult{PhaseSeries(std::move(one_way), step, "one_way"), PhaseSeries(std::move(rt), step, "round_trip"),
                          PhaseSeries(std::move(probe), step, "open_loop_probe"), {}};
}

}  // namespace fiberlink
