#include "fiberlink/comb.hpp"
#include "fiberlink/control.hpp"
#include "fiberlink/csv.hpp"
#include "fiberlink/scenario.hpp"
#include "fiberlink/stability.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace fiberlink;
using nlohmann::json;
namespace fs = std::filesystem;

namespace
{

int failures = 0;

void report(int id, const char* name, bool ok, const std::string& detail)
{
  std::printf("%s [%2d] %s: %s\n", ok ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  if (!ok)
    ++failures;
}

std::string fmt(const char* f, auto... args)
{
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void guarded(int id, const char* name, const std::function<void()>& body)
{
  try
  {
    body();
  }
  catch (const std::exception& e)
  {
    report(id, name, false, std::string("exception: ") + e.what());
  }
}

std::string slurp(const fs::path& p)
{
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// RMS over an ensemble of Allan deviations at each tau.
std::vector<double> ensemble_adev(PowerLawTerm term, Eigen::Index n, int runs, const std::vector<double>& taus,
                                  std::uint64_t base)
{
  std::vector<double> acc(taus.size(), 0.0);
  for (int r = 0; r < runs; ++r)
  {
    const auto x = gen_power_law_term(term, n, 1.0, Seed{base + static_cast<std::uint64_t>(r)});
    const auto c = allan_deviation(x, taus, Estimator::overlapping);
    for (std::size_t i = 0; i < taus.size(); ++i)
      acc[i] += c.points[i].sigma * c.points[i].sigma;
  }
  for (auto& a : acc)
    a = std::sqrt(a / runs);
  return acc;
}

void estimator_calibration()
{
  const auto t0 = std::chrono::steady_clock::now();
  const double h0 = powerlaw_level_for_adev(0, 1e-14, 1.0, 1.0);
  const double got = ensemble_adev({0, h0}, 10001, 100, {1.0}, 1000)[0];
  const double elapsed = seconds_since(t0);
  const bool ok = std::abs(got / 1e-14 - 1.0) <= 0.10 && elapsed < 60.0;
  report(1, "estimator calibration", ok,
         fmt("h0=%.3g sigma(1s)=%.4g vs 1e-14 +/-10%% (ratio %.4f), %.2f s vs < 60 s", h0, got, got / 1e-14,
             elapsed));
}

void slope_laws()
{
  const std::vector<double> taus{1, 2, 4, 8, 16, 32, 64, 128, 256};
  struct Case
  {
    const char* name;
    int alpha;
    double expected;
  };
  bool ok = true;
  std::string detail;
  for (const Case c : {Case{"white PM", 2, -1.0}, Case{"white FM", 0, -0.5}, Case{"random-walk FM", -2, 0.5}})
  {
    const auto sig = ensemble_adev({c.alpha, 1e-26}, 4097, 60, taus, 5000);
    AdevCurve curve;
    for (std::size_t i = 0; i < taus.size(); ++i)
      curve.points.push_back({taus[i], sig[i], 1});
    const double mu = fit_power_law(curve, taus.front(), taus.back()).exponent;
    ok = ok && std::abs(mu - c.expected) <= 0.05;
    detail += fmt("%s %.3f vs %.1f; ", c.name, mu, c.expected);
  }
  report(2, "slope laws", ok, detail + "tolerance +/-0.05");
}

void round_trip_halving()
{
  const double dt = 1e-4;
  const Eigen::Index n = 2000001;
  NoiseSpec spec;
  spec.powerlaw = {{0, 1e-28}, {-2, 1e-32}};
  const auto [f1, f2] = correlated_pair(spec, 0.0, n, dt, Seed{31});
  FiberPath out(43.0, f1);
  FiberPath back(43.0, f2);
  const auto zero = PhaseSeries::zeros(n, dt);
  const auto one_way = propagate(zero, out, Carrier(100e6)).phase_time;
  const auto rt = round_trip(zero, out, back, Carrier(100e6), Carrier(100e6)).phase_time;
  const std::vector<double> taus{1, 2, 5, 10, 20, 50, 100};
  const auto ow_curve = allan_deviation(measure_phase(one_way, 20.0, 1.0), taus, Estimator::overlapping);
  const auto rt_curve = allan_deviation(measure_phase(rt, 20.0, 1.0), taus, Estimator::overlapping);
  const auto halved = one_way_from_round_trip(rt_curve, Reduction::correlated_halving);
  double worst = 0.0;
  for (std::size_t i = 0; i < taus.size(); ++i)
    worst = std::max(worst, std::abs(halved.points[i].sigma / ow_curve.points[i].sigma - 1.0));
  report(3, "round-trip halving", worst <= 0.05,
         fmt("max |halved round trip / one way - 1| = %.4f over tau 1..100 s vs <= 0.05", worst));
}

void correlated_pair_target()
{
  const Scenario s = scenario_from_json(json::object());
  const std::vector<double> taus{1.0};
  double sum = 0.0;
  const int runs = 10;
  for (int k = 0; k < runs; ++k)
  {
    const auto [a, b] = correlated_pair(s.link.fiber_noise, 0.1, 20001, 1.0, Seed{static_cast<std::uint64_t>(40 + k)});
    sum += allan_deviation(a - b, taus).points[0].sigma / allan_deviation(a, taus).points[0].sigma;
  }
  const double ratio = sum / runs;
  report(4, "correlated-pair target", std::abs(ratio / 0.1 - 1.0) <= 0.3,
         fmt("Allan(difference)/Allan(single) at 1 s = %.4f vs 0.1 +/-30%%", ratio));
}

void closed_loop_short_term()
{
  const Scenario s = scenario_from_json({{"preset", "fig1"}, {"seed", 1}});
  const double dt = s.simulation.full_rate_step;
  const auto r = run_closed_loop(s.link, s.loop, s.simulation.full_rate_samples(), dt, Seed{101});
  const std::vector<double> taus{1.0};
  const auto measured = measure_phase(r.round_trip, s.link.evaluation_detector.measurement_bandwidth, 1.0);
  const double sigma = allan_deviation(measured, taus, Estimator::overlapping).points[0].sigma;
  const auto psd = psd_welch(to_radians(r.round_trip, s.link.main), 65536);
  double sum = 0.0;
  int count = 0;
  for (Eigen::Index i = 0; i < psd.freqs.size(); ++i)
    if (psd.freqs[i] >= 0.8 && psd.freqs[i] <= 1.25)
    {
      sum += psd.values[i];
      ++count;
    }
  const double db = 10.0 * std::log10(sum / count);
  const bool ok = sigma >= 0.6e-14 && sigma <= 2.4e-14 && std::abs(db + 120.0) <= 3.0;
  report(5, "closed-loop short term", ok,
         fmt("sigma(1s)=%.3g vs 1.2e-14 within x2; S_phi(1 Hz)=%.2f dB rad^2/Hz vs -120 +/-3 (%.0f s at %.0e s)", sigma,
             db, static_cast<double>(s.simulation.full_rate_samples()) * dt, dt));
}

void closed_loop_long_term()
{
  const auto t0 = std::chrono::steady_clock::now();
  const Scenario s = scenario_from_json(json::object());
  const Eigen::Index n = 2 * 86400 + 1;
  const auto r = run_decimated(s.link, s.loop, n, 1.0, s.simulation.full_rate_step, Seed{202});
  const std::vector<double> taus{40000.0, 86400.0};
  const auto closed = allan_deviation(r.round_trip, taus, Estimator::overlapping);
  const auto open = allan_deviation(r.probe, taus, Estimator::overlapping);
  const double elapsed = seconds_since(t0);
  const auto c4 = closed.sigma_at(40000.0);
  const auto o4 = open.sigma_at(40000.0);
  const auto cday = closed.sigma_at(86400.0);
  if (!c4 || !o4 || !cday)
  {
    report(6, "closed-loop long term", false, "missing tau in a 2-day record");
    return;
  }
  const double ratio = *o4 / *c4;
  const bool ok = ratio >= 100.0 && *cday <= 5e-17 && elapsed < 300.0;
  report(6, "closed-loop long term", ok,
         fmt("open/closed at 4e4 s = %.1f vs >= 100; closed at 86400 s = %.3g vs <= 5e-17; %.1f s vs < 300 s", ratio,
             *cday, elapsed));
}

void delay_limited_bandwidth()
{
  const double dt = 1e-4;
  const double fc = critical_frequency(0.4e-3);
  const auto slow = simulate_delay_loop(ControllerConfig::pure_integrator(Topology::rf_conjugation_near_end, 300.0),
                                        4, dt, 40000);
  const auto fast = simulate_delay_loop(ControllerConfig::pure_integrator(Topology::rf_conjugation_near_end, 700.0),
                                        4, dt, 40000);
  const double onset = divergence_onset(0.4e-3, dt, 300.0, 1000.0);
  const bool ok = std::abs(fc - 625.0) <= 1e-9 && !slow.diverged && fast.diverged &&
                  std::abs(onset / 625.0 - 1.0) <= 0.1;
  report(7, "delay-limited bandwidth", ok,
         fmt("critical=%.3f Hz vs 625; 300 Hz growth %.3g (%s); 700 Hz growth %.3g (%s); onset %.1f Hz vs 625 +/-10%%",
             fc, slow.growth, slow.diverged ? "diverged" : "converged", fast.growth,
             fast.diverged ? "diverged" : "converged", onset));
}

void comb_arithmetic()
{
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> frac(0.0, 1.0);
  std::uniform_int_distribution<std::int64_t> hz(-5000000, 5000000);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i)
  {
    CombParams p;
    p.sign = (i % 2 == 0) ? 1 : -1;
    p.delta = 1e3 * frac(rng) * 3e4;
    const ExactHz f_opt(29100000000000LL + hz(rng), frac(rng));
    const ExactHz back = optical_from_rep_rate(p, rep_rate_from_optical(p, f_opt));
    worst = std::max(worst, std::abs(back - f_opt));
  }
  report(8, "comb arithmetic", worst <= 1e-6,
         fmt("max |f_opt -> f_r -> f_opt error| = %.3g Hz (relative %.2g) vs <= 1e-6 Hz", worst, worst / 2.91e13));
}

json run_in_process(const json& j, const fs::path& dir)
{
  fs::remove_all(dir);
  const RunReport r = run(scenario_from_json(j), dir);
  if (r.status != RunStatus::ok)
    throw std::runtime_error("scenario run failed: " + r.error);
  return r.results;
}

void chain_transfer()
{
  const json j = {{"preset", "fig4"},
                  {"name", "chain"},
                  {"seed", 9},
                  {"simulation", {{"decimated", {{"duration_s", 0.0}}}}},
                  {"comb",
                   {{"optical_standard", {{"powerlaw", {{{"alpha", 0}, {"adev_1s", 3e-14}}}}}},
                    {"reference", {{"powerlaw", {{{"alpha", 0}, {"adev_1s", 8e-15}}}}}},
                    {"link_residual", {{"powerlaw", {{{"alpha", 0}, {"adev_1s", 8e-15}}}}}}}}};
  const json res = run_in_process(j, "acceptance_out/chain");
  const double recovered = res["comb"]["budget"]["without_standard"]["measured"].get<double>();
  const double expected = std::sqrt(3e-14 * 3e-14 + 2 * 8e-15 * 8e-15);
  const double ratio = recovered / expected;
  report(9, "chain stability transfer", std::abs(ratio - 1.0) <= 0.15,
         fmt("recovered sigma(1s)=%.4g vs sqrt(sum sigma_i^2)=%.4g +/-15%% (ratio %.4f)", recovered, expected, ratio));
}

void budget_arithmetic()
{
  const auto two = stability_budget(3e-14, {{"reference", 8e-15}, {"link", 8e-15}});
  const long double oracle = std::sqrt(3e-14L * 3e-14L - 2.0L * 8e-15L * 8e-15L);
  const double rel = std::abs(two.residual - static_cast<double>(oracle)) / static_cast<double>(oracle);
  const auto three = stability_budget(3e-14, {{"laser", 3e-14}, {"reference", 8e-15}, {"link", 8e-15}});
  const bool ok = rel <= 4.0 * 2.2e-16 && std::abs(two.residual - 2.77e-14) <= 0.01e-14 && !two.clamped &&
                  three.residual == 0.0 && three.clamped;
  report(10, "budget arithmetic", ok,
         fmt("residual=%.6g vs 2.77e-14 (quadrature oracle %.6Lg, rel err %.2g <= 4 ulp); with laser term %.3g, "
             "clamped=%s",
             two.residual, oracle, rel, three.residual, three.clamped ? "yes" : "no"));
}

void estimator_statistics()
{
  const CombParams p;
  const CounterChainConfig cfg;
  const ExactHz nu = p.optical_nominal();
  const Eigen::Index gates = 1000;
  const int records = 10;
  std::mt19937_64 rng(11);
  std::normal_distribution<double> draw(3.9, 10.0);
  std::vector<MeasurementRecord> recs;
  for (int k = 0; k < records; ++k)
  {
    const double offset_hz = draw(rng);
    const auto y = phase_to_frac_freq(
      gen_power_law_term({0, powerlaw_level_for_adev(0, 3e-14, 1.0, 1.0)}, gates + 1, 1.0, Seed{300u + k}));
    const FracFreqSeries y_opt(y.samples().array() + offset_hz / nu.to_double(), 1.0);
    const auto fr = rep_rate_lock(y_opt, p);
    recs.push_back(count_chain(fr, FracFreqSeries(Eigen::VectorXd::Zero(gates), 1.0), p, cfg, Seed{400u + k}));
  }
  const FrequencyEstimate est = absolute_freq_estimate(recs, nu);
  const double se_mean = 10.0 / std::sqrt(static_cast<double>(records));
  const double se_sigma = 10.0 / std::sqrt(2.0 * (records - 1));
  const bool ok = std::abs(est.mean_offset - 3.9) <= 3.0 * se_mean && std::abs(est.sigma - 10.0) <= 3.0 * se_sigma;
  report(11, "estimator statistics", ok,
         fmt("nu - nu_ref = %.2f +/- %.2f Hz from %d records; |mean-3.9| <= %.2f, |sigma-10| <= %.2f", est.mean_offset,
             est.sigma, records, 3.0 * se_mean, 3.0 * se_sigma));
}

void determinism()
{
  const json j = {{"name", "det"},
                  {"seed", 12345},
                  {"simulation", {{"full_rate", {{"duration_s", 10.0}}}, {"decimated", {{"duration_s", 3000.0}}}}},
                  {"analysis", {{"taus_s", {1, 2, 5, 10, 100, 500}}, {"psd_segment", 4096}, {"write_phase", true}}},
                  {"references", {{"fountain", {{"powerlaw", {{{"alpha", 0}, {"adev_1s", 1.6e-14}}}}}}}},
                  {"comb", {{"enabled", true}, {"duration_s", 600.0}}}};
  const Scenario s = scenario_from_json(j);
  fs::remove_all("acceptance_out/det_a");
  fs::remove_all("acceptance_out/det_b");
  const RunReport a = run(s, "acceptance_out/det_a");
  const RunReport b = run(s, "acceptance_out/det_b");
  int compared = 0, differing = 0;
  for (const auto& p : a.manifest)
  {
    if (p.extension() != ".csv")
      continue;
    ++compared;
    if (slurp(p) != slurp(fs::path("acceptance_out/det_b") / p.filename()))
      ++differing;
  }
  const bool ok = a.status == RunStatus::ok && b.status == RunStatus::ok && compared >= 8 && differing == 0 &&
                  a.manifest.size() == b.manifest.size();
  report(12, "determinism", ok, fmt("%d CSVs compared byte for byte, %d differ", compared, differing));
}

}  // namespace

int main()
{
  guarded(1, "estimator calibration", estimator_calibration);
  guarded(2, "slope laws", slope_laws);
  guarded(3, "round-trip halving", round_trip_halving);
  guarded(4, "correlated-pair target", correlated_pair_target);
  guarded(5, "closed-loop short term", closed_loop_short_term);
  guarded(6, "closed-loop long term", closed_loop_long_term);
  guarded(7, "delay-limited bandwidth", delay_limited_bandwidth);
  guarded(8, "comb arithmetic", comb_arithmetic);
  guarded(9, "chain stability transfer", chain_transfer);
  guarded(10, "budget arithmetic", budget_arithmetic);
  guarded(11, "estimator statistics", estimator_statistics);
  guarded(12, "determinism", determinism);
  std::printf("%d of 12 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
