#include "fiberlink/scenario.hpp"

#include "fiberlink/csv.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace fiberlink
{

using nlohmann::json;

namespace
{

std::string join_errors(const std::vector<std::string>& errors)
{
  std::string s = "invalid scenario (" + std::to_string(errors.size()) + " problem" + (errors.size() == 1 ? "" : "s") +
                  "):";
  for (const auto& e : errors)
    s += "\n  - " + e;
  return s;
}

json noise_json(std::vector<json> powerlaw, double diurnal = 0.0, double burst_rate = 0.0, double burst_amp = 0.0)
{
  return {{"powerlaw", powerlaw},
          {"diurnal", {{"amplitude_s", diurnal}, {"period_s", 86400.0}, {"phase_rad", 0.0}}},
          {"bursts", {{"rate_per_s", burst_rate}, {"amplitude_s", burst_amp}, {"log_sigma", 0.5}, {"duration_s", 60.0}}}};
}

json detector_json(double db)
{
  return {{"floor_db", db}, {"bandwidth_hz", 20.0}};
}

json defaults_json()
{
  const double four_pi2 = 4.0 * kPi * kPi;
  return {
    {"name", "scenario"},
    {"preset", ""},
    {"seed", 0},
    {"link",
     {{"length_km", 43.0},
      {"delay_per_km_s", kDelayPerKm},
      {"differential_ratio", 0.1},
      {"fiber_noise", noise_json({{{"alpha", 2}, {"h", four_pi2 * 3.75e-30}}, {{"alpha", 0}, {"h", 1.8e-29}}}, 4e-11,
                                 2.0 / 86400.0, 5e-12)},
      {"out_of_loop", noise_json({{{"alpha", 0}, {"h", 1.25e-29}}})},
      {"carriers_hz", {{"main", 100e6}, {"forward", 1e9}, {"probe", 270e6}}},
      {"detectors",
       {{"near", detector_json(-122.34)},
        {"far", detector_json(-102.34)},
        {"evaluation", detector_json(-122.34)},
        {"probe", detector_json(-120.0)}}},
      {"actuators",
       {{"rf", {{"range_s", 1e-6}, {"bandwidth_hz", 1e5}}},
        {"piezo", {{"range_s", 2e-12}, {"bandwidth_hz", 5e3}}},
        {"thermal", {{"range_s", 1e-9}, {"bandwidth_hz", 1.0}}}}}}},
    {"control",
     {{"enabled", true},
      {"mode", "series"},
      {"divergence_threshold_s", 1e-6},
      {"near", {{"unity_gain_hz", 300.0}, {"corner_hz", 30.0}}},
      {"far", {{"unity_gain_hz", 300.0}, {"corner_hz", 30.0}, {"crossover_hz", 0.1}}}}},
    {"simulation",
     {{"full_rate", {{"duration_s", 0.0}, {"step_s", 1e-4}}}, {"decimated", {{"duration_s", 86400.0}, {"step_s", 1.0}}}}},
    {"analysis",
     {{"taus_s", "auto"},
      {"estimator", "overlapping"},
      {"psd_segment", 0},
      {"write_phase", false},
      {"one_way_reduction", "independent_sqrt2"}}},
    {"references", json::object()},
    {"comb",
     {{"enabled", false},
      {"q", 29100},
      {"delta_hz", 0.0},
      {"sign", 1},
      {"f_rep_nominal_hz", 995e6},
      {"lo_hz", 1e9},
      {"if_hz", 5e6},
      {"final_hz", 68.0},
      {"filter_bandwidth_hz", 10.0},
      {"gate_s", 1.0},
      {"resolution_hz", 1e-6},
      {"counter_noise_hz", 0.0},
      {"duration_s", 4000.0},
      {"optical_standard", {{"powerlaw", {{{"alpha", 0}, {"adev_1s", 3e-14}}}}}},
      {"reference", {{"powerlaw", {{{"alpha", 0}, {"adev_1s", 8e-15}}}}}},
      {"link_residual", "simulated"},
      {"records", 1},
      {"record_offset_hz", 0.0},
      {"record_offset_sigma_hz", 0.0},
      {"nu_ref_hz", "auto"}}},
  };
}

/// Paths whose values are calibration assumptions rather than measured inputs.
const std::vector<std::string> kCalibrationPrefixes = {
  "/link/fiber_noise", "/link/out_of_loop",      "/link/detectors",   "/link/actuators",
  "/link/differential_ratio", "/references", "/comb/optical_standard", "/comb/reference",
  "/comb/link_residual", "/comb/record_offset_hz", "/comb/record_offset_sigma_hz"};

/// Subtrees checked by their own parser instead of the generic key walk.
bool free_form(const std::string& path)
{
  static const std::set<std::string> paths = {"/link/fiber_noise", "/link/out_of_loop", "/references",
                                              "/comb/optical_standard", "/comb/reference", "/comb/link_residual",
                                              "/analysis/taus_s", "/comb/nu_ref_hz"};
  return paths.count(path) > 0;
}

void check_unknown_keys(const json& user, const json& reference, const std::string& path,
                        std::vector<std::string>& errors)
{
  if (!user.is_object() || !reference.is_object())
    return;
  for (const auto& [key, value] : user.items())
  {
    const std::string child = path + "/" + key;
    if (path.empty() && (key == "assumed" || key == "derived"))
      continue;
    if (!reference.contains(key))
    {
      errors.push_back(child + ": unknown key");
      continue;
    }
    if (!free_form(child))
      check_unknown_keys(value, reference.at(key), child, errors);
  }
}

class Reader
{
public:
  Reader(const json& doc, std::vector<std::string>& errors, std::string prefix = {})
    : doc_(doc), errors_(errors), prefix_(std::move(prefix))
  {
  }

  const json* find(const std::string& path) const
  {
    const json::json_pointer ptr(path);
    if (!doc_.contains(ptr))
    {
      errors_.push_back(prefix_ + path + ": missing");
      return nullptr;
    }
    return &doc_.at(ptr);
  }

  double number(const std::string& path) const
  {
    const json* j = find(path);
    if (!j)
      return std::nan("");
    if (!j->is_number())
    {
      errors_.push_back(prefix_ + path + ": expected a number, got " + j->dump());
      return std::nan("");
    }
    return j->get<double>();
  }

  double positive(const std::string& path, const char* unit) const
  {
    const double v = number(path);
    if (std::isfinite(v) && !(v > 0.0))
      errors_.push_back(prefix_ + path + ": must be > 0 " + unit + ", got " + fmt(v));
    return v;
  }

  double non_negative(const std::string& path, const char* unit) const
  {
    const double v = number(path);
    if (std::isfinite(v) && !(v >= 0.0))
      errors_.push_back(prefix_ + path + ": must be >= 0 " + unit + ", got " + fmt(v));
    return v;
  }

  std::int64_t integer(const std::string& path) const
  {
    const json* j = find(path);
    if (!j)
      return 0;
    if (!j->is_number_integer())
    {
      errors_.push_back(prefix_ + path + ": expected an integer, got " + j->dump());
      return 0;
    }
    return j->get<std::int64_t>();
  }

  bool boolean(const std::string& path) const
  {
    const json* j = find(path);
    if (!j)
      return false;
    if (!j->is_boolean())
    {
      errors_.push_back(prefix_ + path + ": expected true or false, got " + j->dump());
      return false;
    }
    return j->get<bool>();
  }

  std::string string(const std::string& path) const
  {
    const json* j = find(path);
    if (!j)
      return {};
    if (!j->is_string())
    {
      errors_.push_back(prefix_ + path + ": expected a string, got " + j->dump());
      return {};
    }
    return j->get<std::string>();
  }

  void error(const std::string& message) const { errors_.push_back(message); }

  static std::string fmt(double v)
  {
    std::ostringstream s;
    s << v;
    return s.str();
  }

private:
  const json& doc_;
  std::vector<std::string>& errors_;
  std::string prefix_;
};

NoiseSpec parse_noise(const json& j, const std::string& path, double tau0_for_adev, std::vector<std::string>& errors)
{
  NoiseSpec spec;
  if (!j.is_object())
  {
    errors.push_back(path + ": expected a noise object");
    return spec;
  }
  for (const auto& [key, value] : j.items())
    if (key != "powerlaw" && key != "diurnal" && key != "bursts")
      errors.push_back(path + "/" + key + ": unknown key");
  const Reader r(j, errors, path);
  auto sub = [&](const std::string& p) { return path + p; };
  if (j.contains("powerlaw"))
  {
    const json& list = j.at("powerlaw");
    if (!list.is_array())
      errors.push_back(sub("/powerlaw") + ": expected an array");
    else
      for (std::size_t i = 0; i < list.size(); ++i)
      {
        const json& t = list[i];
        const std::string tp = sub("/powerlaw/" + std::to_string(i));
        if (!t.is_object() || !t.contains("alpha") || !t.at("alpha").is_number_integer())
        {
          errors.push_back(tp + ": needs an integer alpha");
          continue;
        }
        const int alpha = t.at("alpha").get<int>();
        if (alpha < -2 || alpha > 2)
        {
          errors.push_back(tp + "/alpha: must be in [-2, 2], got " + std::to_string(alpha));
          continue;
        }
        for (const auto& [key, value] : t.items())
          if (key != "alpha" && key != "h" && key != "adev_1s")
            errors.push_back(tp + "/" + key + ": unknown key");
        const bool has_h = t.contains("h");
        const bool has_adev = t.contains("adev_1s");
        if (has_h == has_adev)
        {
          errors.push_back(tp + ": give exactly one of h or adev_1s");
          continue;
        }
        const json& v = has_h ? t.at("h") : t.at("adev_1s");
        if (!v.is_number() || !(v.get<double>() >= 0.0))
        {
          errors.push_back(tp + (has_h ? "/h" : "/adev_1s") + ": must be a number >= 0");
          continue;
        }
        const double level = has_h ? v.get<double>() : powerlaw_level_for_adev(alpha, v.get<double>(), 1.0, tau0_for_adev);
        spec.powerlaw.push_back({alpha, level});
      }
  }
  if (j.contains("diurnal"))
  {
    const json& d = j.at("diurnal");
    for (const auto& [key, value] : d.items())
      if (key != "amplitude_s" && key != "period_s" && key != "phase_rad")
        errors.push_back(sub("/diurnal/" + key) + ": unknown key");
    if (d.contains("amplitude_s"))
      spec.diurnal.amplitude = r.non_negative("/diurnal/amplitude_s", "s");
    if (d.contains("period_s"))
      spec.diurnal.period = r.positive("/diurnal/period_s", "s");
    if (d.contains("phase_rad"))
      spec.diurnal.phase = r.number("/diurnal/phase_rad");
  }
  if (j.contains("bursts"))
  {
    const json& b = j.at("bursts");
    for (const auto& [key, value] : b.items())
      if (key != "rate_per_s" && key != "amplitude_s" && key != "log_sigma" && key != "duration_s")
        errors.push_back(sub("/bursts/" + key) + ": unknown key");
    if (b.contains("rate_per_s"))
      spec.bursts.rate = r.non_negative("/bursts/rate_per_s", "1/s");
    if (b.contains("amplitude_s"))
      spec.bursts.amplitude = r.non_negative("/bursts/amplitude_s", "s");
    if (b.contains("log_sigma"))
      spec.bursts.log_sigma = r.non_negative("/bursts/log_sigma", "");
    if (b.contains("duration_s"))
      spec.bursts.duration = r.positive("/bursts/duration_s", "s");
  }
  try
  {
    spec.validate();
  }
  catch (const InvalidInput& e)
  {
    errors.push_back(path + ": " + e.what());
  }
  return spec;
}

DetectorConfig parse_detector(const Reader& r, const std::string& path)
{
  const double db = r.number(path + "/floor_db");
  const double bw = r.positive(path + "/bandwidth_hz", "Hz");
  DetectorConfig d;
  d.floor = std::isfinite(db) ? std::pow(10.0, db / 20.0) : 0.0;
  d.measurement_bandwidth = std::isfinite(bw) && bw > 0.0 ? bw : 20.0;
  return d;
}

ActuatorState parse_actuator(const Reader& r, const std::string& path, ActuatorKind kind)
{
  ActuatorState a = ActuatorState::defaults(kind);
  const double range = r.non_negative(path + "/range_s", "s");
  const double bw = r.positive(path + "/bandwidth_hz", "Hz");
  if (std::isfinite(range) && range >= 0.0)
    a.range = range;
  if (std::isfinite(bw) && bw > 0.0)
    a.bandwidth = bw;
  return a;
}

ControllerConfig parse_controller(const Reader& r, const std::string& path, Topology topology)
{
  const double fu = r.positive(path + "/unity_gain_hz", "Hz");
  const double fz = r.non_negative(path + "/corner_hz", "Hz");
  double crossover = 0.1;
  if (topology == Topology::optical_far_end)
    crossover = r.positive(path + "/crossover_hz", "Hz");
  if (!(fu > 0.0) || !(fz >= 0.0) || !(crossover > 0.0))
    return ControllerConfig::design(topology);
  if (fz >= fu)
    r.error(path + "/corner_hz: must be below unity_gain_hz (" + Reader::fmt(fz) + " >= " + Reader::fmt(fu) + ")");
  return ControllerConfig::design(topology, fu, fz, crossover);
}

bool is_multiple(double tau, double step)
{
  const double ratio = tau / step;
  return std::abs(ratio - std::round(ratio)) <= 1e-9 * std::max(1.0, ratio) && std::round(ratio) >= 1.0;
}

Scenario build(const json& user)
{
  std::vector<std::string> errors;
  if (!user.is_object())
    throw ScenarioError({"scenario: top level must be a JSON object"});

  json resolved = defaults_json();
  std::string preset;
  if (user.contains("preset"))
  {
    if (!user.at("preset").is_string())
      errors.push_back("/preset: expected a string");
    else
    {
      preset = user.at("preset").get<std::string>();
      if (!preset.empty())
      {
        try
        {
          resolved.merge_patch(preset_json(preset));
        }
        catch (const InvalidInput& e)
        {
          errors.push_back(std::string("/preset: ") + e.what());
        }
      }
    }
  }
  check_unknown_keys(user, defaults_json(), "", errors);
  json user_clean = user;
  user_clean.erase("assumed");
  user_clean.erase("derived");
  resolved.merge_patch(user_clean);

  Scenario s;
  s.preset = preset;
  const Reader r(resolved, errors);
  s.name = r.string("/name");
  if (s.name.empty() || s.name.find_first_of("/\\ ") != std::string::npos)
    errors.push_back("/name: must be a non-empty file-name prefix without spaces or slashes, got '" + s.name + "'");
  const std::int64_t seed = r.integer("/seed");
  if (seed < 0)
    errors.push_back("/seed: must be >= 0, got " + std::to_string(seed));
  s.seed = Seed{static_cast<std::uint64_t>(std::max<std::int64_t>(0, seed))};

  // Link.
  LinkModel& m = s.link;
  m.length_km = r.positive("/link/length_km", "km");
  m.delay_per_km = r.positive("/link/delay_per_km_s", "s/km");
  m.differential_ratio = r.number("/link/differential_ratio");
  if (std::isfinite(m.differential_ratio) && !(m.differential_ratio >= 0.0 && m.differential_ratio <= 1.0))
    errors.push_back("/link/differential_ratio: must be in [0, 1], got " + Reader::fmt(m.differential_ratio));
  const double full_step_hint = 1.0;
  if (const json* j = r.find("/link/fiber_noise"))
    m.fiber_noise = parse_noise(*j, "/link/fiber_noise", full_step_hint, errors);
  if (const json* j = r.find("/link/out_of_loop"))
    m.out_of_loop = parse_noise(*j, "/link/out_of_loop", full_step_hint, errors);
  auto carrier = [&](const char* key, double fallback) {
    const double v = r.positive(std::string("/link/carriers_hz/") + key, "Hz");
    return Carrier(std::isfinite(v) && v > 0.0 ? v : fallback);
  };
  m.main = carrier("main", 100e6);
  m.forward = carrier("forward", 1e9);
  m.probe = carrier("probe", 270e6);
  m.near_detector = parse_detector(r, "/link/detectors/near");
  m.far_detector = parse_detector(r, "/link/detectors/far");
  m.evaluation_detector = parse_detector(r, "/link/detectors/evaluation");
  m.probe_detector = parse_detector(r, "/link/detectors/probe");
  m.rf = parse_actuator(r, "/link/actuators/rf", ActuatorKind::rf_phase_shifter);
  m.piezo = parse_actuator(r, "/link/actuators/piezo", ActuatorKind::piezo_stretcher);
  m.thermal = parse_actuator(r, "/link/actuators/thermal", ActuatorKind::thermal_spool);

  // Control.
  s.loop.enabled = r.boolean("/control/enabled");
  const std::string mode = r.string("/control/mode");
  if (mode == "series")
    s.loop.mode = CompensationMode::series;
  else if (mode == "independent")
    s.loop.mode = CompensationMode::independent;
  else
    errors.push_back("/control/mode: expected 'series' or 'independent', got '" + mode + "'");
  s.loop.divergence_threshold = r.positive("/control/divergence_threshold_s", "s");
  s.loop.near = parse_controller(r, "/control/near", Topology::rf_conjugation_near_end);
  s.loop.far = parse_controller(r, "/control/far", Topology::optical_far_end);

  // Simulation.
  SimulationSpec& sim = s.simulation;
  sim.full_rate_duration = r.non_negative("/simulation/full_rate/duration_s", "s");
  sim.full_rate_step = r.positive("/simulation/full_rate/step_s", "s");
  sim.decimated_duration = r.non_negative("/simulation/decimated/duration_s", "s");
  sim.decimated_step = r.positive("/simulation/decimated/step_s", "s");
  const bool sim_ok = std::isfinite(sim.full_rate_duration) && std::isfinite(sim.full_rate_step) &&
                      sim.full_rate_step > 0.0 && std::isfinite(sim.decimated_duration) &&
                      std::isfinite(sim.decimated_step) && sim.decimated_step > 0.0;
  if (sim_ok && std::isfinite(m.length_km * m.delay_per_km))
  {
    const double one_way = m.length_km * m.delay_per_km;
    if (sim.full_rate_duration > 0.0)
    {
      if (s.loop.enabled && std::llround(one_way / sim.full_rate_step) < 1)
        errors.push_back("/simulation/full_rate/step_s: " + Reader::fmt(sim.full_rate_step) +
                         " s is longer than twice the one-way delay " + Reader::fmt(one_way) + " s");
      if (sim.full_rate_duration < 8.0)
        errors.push_back("/simulation/full_rate/duration_s: need at least 8 s to form 1 s phase samples, got " +
                         Reader::fmt(sim.full_rate_duration));
      if (!is_multiple(1.0, sim.full_rate_step))
        errors.push_back("/simulation/full_rate/step_s: 1 s must be an integer multiple of the step");
      if (sim.full_rate_duration / sim.full_rate_step > 2e7)
        errors.push_back("/simulation/full_rate: " + Reader::fmt(sim.full_rate_duration / sim.full_rate_step) +
                         " steps exceeds the 2e7 limit; use the decimated run for long records");
    }
    if (sim.decimated_duration > 0.0)
    {
      if (!(sim.decimated_step > sim.full_rate_step))
        errors.push_back("/simulation/decimated/step_s: must be coarser than the full-rate step");
      if (sim.decimated_duration < 2.0 * sim.decimated_step)
        errors.push_back("/simulation/decimated/duration_s: shorter than two steps");
    }
  }

  // Analysis.
  AnalysisSpec& an = s.analysis;
  if (const json* t = r.find("/analysis/taus_s"))
  {
    if (t->is_string() && t->get<std::string>() == "auto")
      an.taus.clear();
    else if (t->is_array())
    {
      for (std::size_t i = 0; i < t->size(); ++i)
      {
        const json& v = (*t)[i];
        if (!v.is_number() || !(v.get<double>() > 0.0))
          errors.push_back("/analysis/taus_s/" + std::to_string(i) + ": must be a number > 0");
        else
          an.taus.push_back(v.get<double>());
      }
      std::sort(an.taus.begin(), an.taus.end());
    }
    else
      errors.push_back("/analysis/taus_s: expected \"auto\" or an array of seconds");
  }
  const std::string est = r.string("/analysis/estimator");
  if (est == "standard")
    an.estimator = Estimator::standard;
  else if (est == "overlapping")
    an.estimator = Estimator::overlapping;
  else
    errors.push_back("/analysis/estimator: expected 'standard' or 'overlapping', got '" + est + "'");
  an.psd_segment = r.integer("/analysis/psd_segment");
  if (an.psd_segment != 0 && an.psd_segment < 16)
    errors.push_back("/analysis/psd_segment: must be 0 (off) or >= 16 samples, got " + std::to_string(an.psd_segment));
  if (an.psd_segment > 0 && sim_ok && sim.full_rate_duration > 0.0 &&
      static_cast<double>(an.psd_segment) * sim.full_rate_step > sim.full_rate_duration)
    errors.push_back("/analysis/psd_segment: segment of " + std::to_string(an.psd_segment) +
                     " samples is longer than the full-rate run");
  an.write_phase = r.boolean("/analysis/write_phase");
  const std::string red = r.string("/analysis/one_way_reduction");
  if (red == "correlated_halving")
    an.one_way_reduction = Reduction::correlated_halving;
  else if (red == "independent_sqrt2")
    an.one_way_reduction = Reduction::independent_sqrt2;
  else
    errors.push_back("/analysis/one_way_reduction: expected 'correlated_halving' or 'independent_sqrt2', got '" + red +
                     "'");

  // Reference oscillator models.
  if (const json* refs = r.find("/references"))
  {
    if (!refs->is_object())
      errors.push_back("/references: expected an object of named noise models");
    else
      for (const auto& [name, spec] : refs->items())
      {
        if (name.empty() || name.find_first_of("/\\ ") != std::string::npos)
          errors.push_back("/references/" + name + ": name must be usable in a file name");
        s.references.push_back({name, parse_noise(spec, "/references/" + name, sim.decimated_step, errors)});
      }
    if (!s.references.empty() && sim_ok && !(sim.decimated_duration > 0.0))
      errors.push_back("/references: reference models need the decimated run (simulation/decimated/duration_s > 0)");
  }

  // Comb and counting chain.
  CombSpec& c = s.comb;
  c.enabled = r.boolean("/comb/enabled");
  if (c.enabled)
  {
    c.params.q = r.integer("/comb/q");
    if (c.params.q <= 0)
      errors.push_back("/comb/q: must be a positive integer, got " + std::to_string(c.params.q));
    c.params.delta = r.number("/comb/delta_hz");
    c.params.sign = static_cast<int>(r.integer("/comb/sign"));
    if (c.params.sign != 1 && c.params.sign != -1)
      errors.push_back("/comb/sign: must be +1 or -1, got " + std::to_string(c.params.sign));
    const double frep = r.positive("/comb/f_rep_nominal_hz", "Hz");
    if (std::isfinite(frep) && frep > 0.0)
      c.params.f_rep_nominal = ExactHz(frep);
    CounterChainConfig& k = c.counter;
    k.lo_freq = r.positive("/comb/lo_hz", "Hz");
    k.if_target = r.positive("/comb/if_hz", "Hz");
    k.final_shift_target = r.positive("/comb/final_hz", "Hz");
    k.filter_bandwidth = r.positive("/comb/filter_bandwidth_hz", "Hz");
    k.gate = r.positive("/comb/gate_s", "s");
    k.resolution = r.positive("/comb/resolution_hz", "Hz");
    k.counter_noise = r.non_negative("/comb/counter_noise_hz", "Hz");
    try
    {
      k.validate();
      const double nominal_if = std::abs(frep - k.lo_freq);
      const double final_beat = nominal_if - (k.if_target - k.final_shift_target);
      if (std::abs(final_beat - k.final_shift_target) > 0.5 * k.filter_bandwidth)
        errors.push_back("/comb/if_hz: |f_rep - LO| = " + Reader::fmt(nominal_if) + " Hz puts the final beat at " +
                         Reader::fmt(final_beat) + " Hz, outside the " + Reader::fmt(k.filter_bandwidth) +
                         " Hz filter around " + Reader::fmt(k.final_shift_target) + " Hz");
    }
    catch (const InvalidInput& e)
    {
      if (std::isfinite(k.lo_freq + k.if_target + k.final_shift_target + k.filter_bandwidth + k.gate + k.resolution))
        errors.push_back(std::string("/comb: ") + e.what());
    }
    c.duration = r.positive("/comb/duration_s", "s");
    const double gate = k.gate > 0.0 ? k.gate : 1.0;
    if (std::isfinite(c.duration) && c.duration > 0.0 && c.duration < 2.0 * gate)
      errors.push_back("/comb/duration_s: shorter than two gates");
    if (const json* j = r.find("/comb/optical_standard"))
      c.optical_standard = parse_noise(*j, "/comb/optical_standard", gate, errors);
    if (const json* j = r.find("/comb/reference"))
      c.reference = parse_noise(*j, "/comb/reference", gate, errors);
    if (const json* j = r.find("/comb/link_residual"))
    {
      if (j->is_string())
      {
        c.link_simulated = j->get<std::string>() == "simulated";
        if (!c.link_simulated)
          errors.push_back("/comb/link_residual: expected \"simulated\" or a noise object");
        else if (sim_ok && std::isfinite(c.duration))
        {
          if (!(sim.decimated_duration > 0.0))
            errors.push_back("/comb/link_residual: \"simulated\" needs the decimated run");
          else if (std::abs(sim.decimated_step - gate) > 1e-12 * gate)
            errors.push_back("/comb/link_residual: \"simulated\" needs decimated step_s equal to gate_s (" +
                             Reader::fmt(sim.decimated_step) + " vs " + Reader::fmt(gate) + ")");
          else if (sim.decimated_duration < c.duration)
            errors.push_back("/comb/link_residual: decimated run of " + Reader::fmt(sim.decimated_duration) +
                             " s is shorter than the counting duration " + Reader::fmt(c.duration) + " s");
        }
      }
      else
      {
        c.link_simulated = false;
        c.link_residual = parse_noise(*j, "/comb/link_residual", gate, errors);
      }
    }
    c.records = r.integer("/comb/records");
    if (c.records < 1)
      errors.push_back("/comb/records: must be >= 1, got " + std::to_string(c.records));
    else if (std::isfinite(c.duration) && c.duration > 0.0 &&
             std::llround(c.duration / gate) / c.records < 2)
      errors.push_back("/comb/records: " + std::to_string(c.records) + " records leave fewer than 2 gates each");
    c.record_offset = r.number("/comb/record_offset_hz");
    c.record_offset_sigma = r.non_negative("/comb/record_offset_sigma_hz", "Hz");
    if (const json* j = r.find("/comb/nu_ref_hz"))
    {
      try
      {
        if (j->is_string() && j->get<std::string>() == "auto")
          c.nu_ref = c.params.q > 0 ? c.params.optical_nominal() : ExactHz(0.0);
        else if (j->is_string())
          c.nu_ref = ExactHz::parse(j->get<std::string>());
        else if (j->is_number())
          c.nu_ref = ExactHz(j->get<double>());
        else
          errors.push_back("/comb/nu_ref_hz: expected \"auto\", a decimal string or a number");
      }
      catch (const InvalidInput& e)
      {
        errors.push_back(std::string("/comb/nu_ref_hz: ") + e.what());
      }
    }
  }

  // Requested taus against the record they are drawn from.
  if (sim_ok && !an.taus.empty())
  {
    double longest = std::max(sim.full_rate_duration, sim.decimated_duration);
    const char* which = sim.decimated_duration >= sim.full_rate_duration ? "decimated" : "full-rate";
    if (c.enabled && std::isfinite(c.duration) && c.duration > longest)
    {
      longest = c.duration;
      which = "comb counting";
    }
    const double largest = an.taus.back();
    if (longest > 0.0 && largest * 4.0 > longest)
      errors.push_back("/analysis/taus_s: largest tau " + Reader::fmt(largest) + " s needs a run of at least " +
                       Reader::fmt(4.0 * largest) + " s, but the " + which + " run is " + Reader::fmt(longest) + " s");
    for (double tau : an.taus)
    {
      if (sim.decimated_duration > 0.0 && !is_multiple(tau, sim.decimated_step))
        errors.push_back("/analysis/taus_s: tau " + Reader::fmt(tau) + " s is not a multiple of the decimated step " +
                         Reader::fmt(sim.decimated_step) + " s");
      if (c.enabled && c.counter.gate > 0.0 && !is_multiple(tau, c.counter.gate))
        errors.push_back("/analysis/taus_s: tau " + Reader::fmt(tau) + " s is not a multiple of the gate " +
                         Reader::fmt(c.counter.gate) + " s");
    }
  }
  if (sim_ok && !(sim.full_rate_duration > 0.0) && !(sim.decimated_duration > 0.0) && !c.enabled)
    errors.push_back("/simulation: nothing to run (both durations are 0 and the comb is disabled)");

  if (!errors.empty())
    throw ScenarioError(std::move(errors));

  // Resolved echo: every value, calibration assumptions flagged, derived quantities.
  resolved["preset"] = preset;
  json assumed = json::object();
  const json flat_user = user_clean.flatten();
  const json flat_resolved = resolved.flatten();
  for (const auto& [path, value] : flat_resolved.items())
  {
    const bool calibration = std::any_of(kCalibrationPrefixes.begin(), kCalibrationPrefixes.end(),
                                         [&](const std::string& p) { return path.rfind(p, 0) == 0; });
    if (calibration && !flat_user.contains(path))
      assumed[path] = value;
  }
  json derived = {{"one_way_delay_s", m.one_way_delay()},
                  {"round_trip_delay_s", m.round_trip_delay()},
                  {"full_rate_samples", sim.full_rate_samples()},
                  {"decimated_samples", sim.decimated_samples()}};
  if (sim.full_rate_step > 0.0)
    derived["delay_steps_per_leg"] = std::llround(m.one_way_delay() / sim.full_rate_step);
  if (c.enabled)
  {
    derived["optical_nominal_hz"] = c.params.optical_nominal().to_string(6);
    derived["nu_ref_hz"] = c.nu_ref.to_string(6);
    derived["counting_gates"] = std::llround(c.duration / c.counter.gate);
  }
  s.resolved = resolved;
  s.resolved["assumed"] = assumed;
  s.resolved["derived"] = derived;
  return s;
}

std::string line_column(const std::string& text, std::size_t byte)
{
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i)
  {
    if (text[i] == '\n')
    {
      ++line;
      col = 1;
    }
    else
      ++col;
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col > 1 ? col - 1 : col);
}

json preset_fig1()
{
  return {
    {"name", "fig1"},
    {"simulation", {{"full_rate", {{"duration_s", 200.0}}}, {"decimated", {{"duration_s", 4.0 * 86400.0}}}}},
    {"analysis",
     {{"taus_s", {1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000, 10000, 20000, 40000, 86400}},
      {"psd_segment", 65536}}},
    {"references",
     {{"reference", {{"powerlaw", {{{"alpha", 2}, {"adev_1s", 9e-15}}, {{"alpha", -1}, {"adev_1s", 1e-15}}}}}},
      {"fountain", {{"powerlaw", {{{"alpha", 0}, {"adev_1s", 1.6e-14}}}}}}}},
  };
}

json preset_fig4()
{
  return {
    {"name", "fig4"},
    {"simulation", {{"decimated", {{"duration_s", 4000.0}}}}},
    {"analysis", {{"taus_s", {1, 2, 5, 10, 20, 50, 100, 200, 500, 1000}}}},
    {"comb", {{"enabled", true}, {"duration_s", 4000.0}, {"link_residual", "simulated"}}},
  };
}

json preset_budget()
{
  return {
    {"name", "budget"},
    {"simulation", {{"decimated", {{"duration_s", 0.0}}}}},
    {"analysis", {{"taus_s", {1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000}}}},
    {"comb",
     {{"enabled", true},
      {"duration_s", 10000.0},
      {"link_residual", {{"powerlaw", {{{"alpha", 0}, {"adev_1s", 8e-15}}}}}},
      {"records", 10},
      {"record_offset_hz", 3.9},
      {"record_offset_sigma_hz", 10.0}}},
  };
}

}  // namespace

ScenarioError::ScenarioError(std::vector<std::string> errors) : InvalidInput(join_errors(errors)), errors_(std::move(errors))
{
}

Eigen::Index SimulationSpec::full_rate_samples() const
{
  return full_rate_duration > 0.0 ? static_cast<Eigen::Index>(std::llround(full_rate_duration / full_rate_step)) : 0;
}

Eigen::Index SimulationSpec::decimated_samples() const
{
  return decimated_duration > 0.0 ? static_cast<Eigen::Index>(std::llround(decimated_duration / decimated_step)) + 1 : 0;
}

json preset_json(const std::string& name)
{
  if (name == "fig1")
    return preset_fig1();
  if (name == "fig4")
    return preset_fig4();
  if (name == "budget")
    return preset_budget();
  throw InvalidInput("unknown preset '" + name + "' (known: fig1, fig4, budget)");
}

std::vector<std::string> preset_names()
{
  return {"fig1", "fig4", "budget"};
}

Scenario scenario_from_json(const json& user)
{
  return build(user);
}

Scenario parse_scenario(const std::string& text, const std::string& source)
{
  json user;
  try
  {
    user = json::parse(text);
  }
  catch (const json::parse_error& e)
  {
    std::string what = e.what();
    if (const auto colon = what.rfind(": "); colon != std::string::npos)
      what = what.substr(colon + 2);
    throw ScenarioError({source + ": parse error at " + line_column(text, e.byte) + ": " + what});
  }
  return build(user);
}

Scenario load_scenario(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ScenarioError({path.string() + ": cannot open file"});
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str(), path.string());
}

Scenario with_seed(Scenario scenario, Seed seed)
{
  json doc = scenario.resolved;
  doc["seed"] = seed.value;
  json assumed = doc.value("assumed", json::object());
  Scenario out = build(doc);
  // Keep the original record of which values were assumed.
  out.resolved["assumed"] = assumed;
  return out;
}

std::string to_string(RunStatus s)
{
  switch (s)
  {
    case RunStatus::ok:
      return "ok";
    case RunStatus::diverged:
      return "diverged";
    case RunStatus::io_error:
      return "io_error";
  }
  return "unknown";
}

json RunReport::to_json() const
{
  json manifest_json = json::array();
  for (const auto& p : manifest)
    manifest_json.push_back(p.string());
  return {{"status", fiberlink::to_string(status)}, {"error", error},       {"seed", seed.value},
          {"version", kVersion},                    {"scenario", scenario}, {"manifest", manifest_json},
          {"warnings", warnings},                   {"results", results},   {"wall_time_s", wall_time}};
}

namespace
{

std::vector<double> taus_for(const AnalysisSpec& an, double tau0, double span)
{
  std::vector<double> out;
  if (an.taus.empty())
    return decade_taus(tau0, span);
  for (double t : an.taus)
    if (t * 4.0 <= span + 1e-9 * span && is_multiple(t, tau0))
      out.push_back(t);
  return out;
}

double span_of(const PhaseSeries& x)
{
  return static_cast<double>(x.size() - 1) * x.tau0();
}

MeasurementRecord slice(const MeasurementRecord& rec, Eigen::Index begin, Eigen::Index count)
{
  MeasurementRecord out;
  out.gate = rec.gate;
  out.reference_label = rec.reference_label;
  out.counted = rec.counted.segment(begin, count);
  out.gate_index.assign(rec.gate_index.begin() + begin, rec.gate_index.begin() + begin + count);
  out.f_opt.assign(rec.f_opt.begin() + begin, rec.f_opt.begin() + begin + count);
  return out;
}

json curve_summary(const AdevCurve& c)
{
  json j = json::object();
  for (const auto& p : c.points)
    j[Reader::fmt(p.tau)] = p.sigma;
  return j;
}

class Runner
{
public:
  Runner(const Scenario& s, const std::filesystem::path& out, RunReport& report)
    : s_(s), out_(out), report_(report), meta_{s.seed.value, kVersion, {{"scenario", s.name}}}
  {
  }

  void execute()
  {
    std::filesystem::create_directories(out_);
    write_json(out_ / "resolved_scenario.json", s_.resolved);
    if (s_.simulation.full_rate_duration > 0.0)
      full_rate();
    if (s_.simulation.decimated_duration > 0.0)
      decimated();
    if (!s_.references.empty())
      references();
    if (s_.comb.enabled)
      comb();
  }

private:
  std::filesystem::path file(const std::string& suffix) const { return out_ / (s_.name + "_" + suffix); }

  void note(const std::filesystem::path& p) { report_.manifest.push_back(p); }

  void write_json(const std::filesystem::path& p, const json& j)
  {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out)
      throw IoError("cannot open " + p.string() + " for writing");
    out << j.dump(2) << '\n';
    if (!out)
      throw IoError("write to " + p.string() + " failed");
    note(p);
  }

  AdevCurve curve(const PhaseSeries& x, const std::string& label)
  {
    const auto taus = taus_for(s_.analysis, x.tau0(), span_of(x));
    AdevCurve c = allan_deviation(x, taus, s_.analysis.estimator);
    c.label = label;
    for (double t : c.omitted_taus)
      report_.warnings.push_back(label + ": tau " + Reader::fmt(t) + " s omitted (too few samples)");
    return c;
  }

  AdevCurve curve(const FracFreqSeries& y, const std::string& label)
  {
    const auto taus = taus_for(s_.analysis, y.tau0(), static_cast<double>(y.size()) * y.tau0());
    AdevCurve c = allan_deviation(y, taus, s_.analysis.estimator);
    c.label = label;
    for (double t : c.omitted_taus)
      report_.warnings.push_back(label + ": tau " + Reader::fmt(t) + " s omitted (too few samples)");
    return c;
  }

  void adev_csv(const std::string& suffix, const AdevCurve& c)
  {
    const auto p = file(suffix + "_adev.csv");
    write_adev_csv(p, c, meta_);
    note(p);
  }

  void phase_csv(const std::string& suffix, const PhaseSeries& x)
  {
    if (!s_.analysis.write_phase)
      return;
    const auto p = file(suffix + "_phase.csv");
    write_phase_csv(p, x, meta_);
    note(p);
  }

  void saturation_warnings(const LoopDiagnostics& d)
  {
    if (d.rf_saturated_steps > 0)
      report_.warnings.push_back("rf phase shifter saturated for " + std::to_string(d.rf_saturated_steps) + " steps");
    if (d.piezo_saturated_steps > 0)
      report_.warnings.push_back("piezo stretcher saturated for " + std::to_string(d.piezo_saturated_steps) +
                                 " steps");
    if (d.thermal_saturated_steps > 0)
      report_.warnings.push_back("thermal spool saturated for " + std::to_string(d.thermal_saturated_steps) +
                                 " steps");
  }

  void full_rate()
  {
    const SimulationSpec& sim = s_.simulation;
    const LinkModel& m = s_.link;
    const ClosedLoopResult r =
      run_closed_loop(m, s_.loop, sim.full_rate_samples(), sim.full_rate_step, derive_seed(s_.seed, 1));
    saturation_warnings(r.diagnostics);
    const PhaseSeries closed = measure_phase(r.round_trip, m.evaluation_detector.measurement_bandwidth, 1.0);
    const PhaseSeries open = measure_phase(r.probe, m.probe_detector.measurement_bandwidth, 1.0);
    const AdevCurve cc = curve(closed, "closed_loop_full_rate");
    const AdevCurve oc = curve(open, "open_loop_full_rate");
    adev_csv("closed_fullrate", cc);
    adev_csv("open_fullrate", oc);
    phase_csv("closed_fullrate", closed);
    phase_csv("open_fullrate", open);
    json res = {{"closed_adev", curve_summary(cc)},
                {"open_adev", curve_summary(oc)},
                {"max_abs_loop_error_s", r.diagnostics.max_abs_error}};
    if (s_.analysis.psd_segment > 0)
    {
      const PsdEstimate psd = psd_welch(to_radians(r.round_trip, m.main), s_.analysis.psd_segment);
      const auto p = file("closed_psd.csv");
      write_psd_csv(p, psd, meta_);
      note(p);
      double sum = 0.0;
      int count = 0;
      for (Eigen::Index i = 0; i < psd.freqs.size(); ++i)
        if (psd.freqs[i] >= 0.8 && psd.freqs[i] <= 1.25)
        {
          sum += psd.values[i];
          ++count;
        }
      if (count > 0)
        res["closed_psd_1hz_db"] = 10.0 * std::log10(sum / count);
    }
    report_.results["full_rate"] = res;
  }

  void decimated()
  {
    const SimulationSpec& sim = s_.simulation;
    const ClosedLoopResult r = run_decimated(s_.link, s_.loop, sim.decimated_samples(), sim.decimated_step,
                                             sim.full_rate_step, derive_seed(s_.seed, 2));
    one_way_ = r.one_way;
    const AdevCurve closed = curve(r.round_trip, "closed_loop");
    const AdevCurve open = curve(r.probe, "open_loop");
    const AdevCurve one_way = one_way_from_round_trip(closed, s_.analysis.one_way_reduction);
    adev_csv("open", open);
    adev_csv("closed", closed);
    adev_csv("one_way", one_way);
    phase_csv("closed", r.round_trip);
    phase_csv("open", r.probe);
    report_.results["decimated"] = {{"closed_adev", curve_summary(closed)},
                                    {"open_adev", curve_summary(open)},
                                    {"one_way_adev", curve_summary(one_way)}};
  }

  void references()
  {
    const SimulationSpec& sim = s_.simulation;
    json res = json::object();
    for (std::size_t i = 0; i < s_.references.size(); ++i)
    {
      const auto& ref = s_.references[i];
      const PhaseSeries x =
        gen_noise(ref.noise, sim.decimated_samples(), sim.decimated_step, derive_seed(s_.seed, 100 + i));
      const AdevCurve c = curve(x, ref.name);
      adev_csv(ref.name, c);
      res[ref.name] = curve_summary(c);
    }
    report_.results["references"] = res;
  }

  void comb()
  {
    const CombSpec& c = s_.comb;
    const double gate = c.counter.gate;
    const auto gates = static_cast<Eigen::Index>(std::llround(c.duration / gate));
    const ExactHz nominal = c.params.optical_nominal();

    FracFreqSeries y_opt = phase_to_frac_freq(gen_noise(c.optical_standard, gates + 1, gate, derive_seed(s_.seed, 3)));
    Eigen::VectorXd y = y_opt.samples();
    const Eigen::Index per_record = gates / c.records;
    std::mt19937_64 rng(derive_seed(s_.seed, 7).value);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index k = 0; k < c.records; ++k)
    {
      const double offset = c.record_offset + c.record_offset_sigma * normal(rng);
      const Eigen::Index end = k + 1 == c.records ? gates : (k + 1) * per_record;
      y.segment(k * per_record, end - k * per_record).array() += offset / nominal.to_double();
    }
    y_opt = FracFreqSeries(y, gate);

    const FracFreqSeries y_ref =
      phase_to_frac_freq(gen_noise(c.reference, gates + 1, gate, derive_seed(s_.seed, 4)));
    FracFreqSeries y_link = c.link_simulated
                              ? FracFreqSeries(phase_to_frac_freq(*one_way_).samples().head(gates), gate)
                              : phase_to_frac_freq(gen_noise(c.link_residual, gates + 1, gate, derive_seed(s_.seed, 5)));
    const FracFreqSeries delivered(y_ref.samples() + y_link.samples(), gate);

    const RepRateSeries f_r = rep_rate_lock(y_opt, c.params);
    MeasurementRecord rec = count_chain(f_r, delivered, c.params, c.counter, derive_seed(s_.seed, 6));
    rec.reference_label = c.link_simulated ? "reference_via_simulated_link" : "reference_via_link_model";

    const AdevCurve recovered = curve(rec.fractional(nominal), "recovered_rep_rate");
    const AdevCurve link = curve(y_link, "link_residual");
    const AdevCurve reference = curve(y_ref, "reference");
    const AdevCurve standard = curve(y_opt, "optical_standard");
    adev_csv("frep", recovered);
    adev_csv("link", link);
    adev_csv("reference", reference);
    adev_csv("standard", standard);
    const auto mp = file("measurement.csv");
    write_measurement_csv(mp, rec, meta_);
    note(mp);

    json res = {{"recovered_adev", curve_summary(recovered)}, {"link_adev", curve_summary(link)}};
    const auto at_gate = [&](const AdevCurve& cv) { return cv.sigma_at(gate).value_or(std::nan("")); };
    const double measured = at_gate(recovered);
    const std::vector<BudgetEntry> without_laser{{"optical_link", at_gate(link)}, {"reference", at_gate(reference)}};
    std::vector<BudgetEntry> with_laser = without_laser;
    with_laser.push_back({"optical_standard", at_gate(standard)});
    if (std::isfinite(measured))
    {
      auto budget_json = [](const BudgetResult& b) {
        json entries = json::array();
        for (const auto& e : b.contributions)
          entries.push_back({{"label", e.label}, {"sigma_at_gate", e.sigma_at_1s}});
        return json{{"measured", b.measured}, {"contributions", entries}, {"residual", b.residual}, {"clamped", b.clamped}};
      };
      const BudgetResult b1 = stability_budget(measured, without_laser);
      const BudgetResult b2 = stability_budget(measured, with_laser);
      if (b2.clamped)
        report_.warnings.push_back("stability budget with the optical standard clamps at zero");
      double quad = 0.0;
      for (const auto& e : with_laser)
        quad += e.sigma_at_1s * e.sigma_at_1s;
      res["budget"] = {{"without_standard", budget_json(b1)},
                       {"with_standard", budget_json(b2)},
                       {"expected_quadrature", std::sqrt(quad)}};
    }
    if (c.records >= 2)
    {
      std::vector<MeasurementRecord> records;
      for (Eigen::Index k = 0; k < c.records; ++k)
      {
        const Eigen::Index end = k + 1 == c.records ? gates : (k + 1) * per_record;
        records.push_back(slice(rec, k * per_record, end - k * per_record));
      }
      const FrequencyEstimate est = absolute_freq_estimate(records, c.nu_ref);
      res["absolute"] = {{"nu_ref_hz", c.nu_ref.to_string(6)},
                         {"mean_offset_hz", est.mean_offset},
                         {"sigma_hz", est.sigma},
                         {"records", c.records}};
    }
    report_.results["comb"] = res;
  }

  const Scenario& s_;
  std::filesystem::path out_;
  RunReport& report_;
  CsvMetadata meta_;
  std::optional<PhaseSeries> one_way_;
};

}  // namespace

RunReport run(const Scenario& scenario, const std::filesystem::path& out_dir)
{
  const auto start = std::chrono::steady_clock::now();
  RunReport report;
  report.scenario = scenario.resolved;
  report.seed = scenario.seed;
  try
  {
    Runner(scenario, out_dir, report).execute();
  }
  catch (const DivergenceError& e)
  {
    report.status = RunStatus::diverged;
    report.error = e.what();
  }
  catch (const IoError& e)
  {
    report.status = RunStatus::io_error;
    report.error = e.what();
  }
  catch (const std::filesystem::filesystem_error& e)
  {
    report.status = RunStatus::io_error;
    report.error = e.what();
  }
  report.wall_time =
    std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const auto report_path = out_dir / "run_report.json";
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  std::ofstream out(report_path, std::ios::binary | std::ios::trunc);
  if (out)
  {
    json j = report.to_json();
    j["manifest"].push_back(report_path.string());
    out << j.dump(2) << '\n';
  }
  if (out)
    report.manifest.push_back(report_path);
  else if (report.status == RunStatus::ok)
  {
    report.status = RunStatus::io_error;
    report.error = "cannot write " + report_path.string();
  }
  return report;
}

}  // namespace fiberlink
