#pragma once

#include "fiberlink/comb.hpp"
#include "fiberlink/control.hpp"
#include "fiberlink/fiber_link.hpp"
#include "fiberlink/stability.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace fiberlink
{

/// Validation failure carrying every problem found, not just the first.
class ScenarioError : public InvalidInput
{
public:
  explicit ScenarioError(std::vector<std::string> errors);
  const std::vector<std::string>& errors() const { return errors_; }

private:
  std::vector<std::string> errors_;
};

struct ReferenceModel
{
  std::string name;
  NoiseSpec noise;  // phase-time, generated at the decimated step
};

struct SimulationSpec
{
  double full_rate_duration = 0.0;  // s, 0 disables the full-rate loop run
  double full_rate_step = 1e-4;
  double decimated_duration = 0.0;  // s, 0 disables the long-term run
  double decimated_step = 1.0;

  Eigen::Index full_rate_samples() const;
  Eigen::Index decimated_samples() const;
};

struct AnalysisSpec
{
  std::vector<double> taus;  // empty means a 1-2-5 grid
  Estimator estimator = Estimator::overlapping;
  Eigen::Index psd_segment = 0;  // 0 disables the spectrum
  bool write_phase = false;
  Reduction one_way_reduction = Reduction::independent_sqrt2;
};

struct CombSpec
{
  bool enabled = false;
  CombParams params;
  CounterChainConfig counter;
  double duration = 0.0;  // s of counting
  NoiseSpec optical_standard;
  NoiseSpec reference;
  bool link_simulated = true;
  NoiseSpec link_residual;
  Eigen::Index records = 1;
  double record_offset = 0.0;        // Hz added to the optical standard
  double record_offset_sigma = 0.0;  // Hz, record-to-record scatter
  ExactHz nu_ref;
};

struct Scenario
{
  std::string name = "scenario";
  std::string preset;
  Seed seed;
  LinkModel link;
  LoopConfig loop;
  SimulationSpec simulation;
  AnalysisSpec analysis;
  std::vector<ReferenceModel> references;
  CombSpec comb;
  /// Fully resolved configuration, including the assumed calibration values
  /// and derived quantities. Loading it back yields the same scenario.
  nlohmann::json resolved;
};

/// Built-in preset documents: "fig1", "fig4", "budget".
nlohmann::json preset_json(const std::string& name);
std::vector<std::string> preset_names();

/// Parses JSON text; parse errors report line and column.
Scenario parse_scenario(const std::string& text, const std::string& source = "<input>");
Scenario load_scenario(const std::filesystem::path& path);
/// Defaults, then the preset named in `user`, then `user` itself.
Scenario scenario_from_json(const nlohmann::json& user);
/// Replaces the seed and refreshes the resolved echo.
Scenario with_seed(Scenario scenario, Seed seed);

enum class RunStatus
{
  ok,
  diverged,
  io_error
};

std::string to_string(RunStatus s);

struct RunReport
{
  RunStatus status = RunStatus::ok;
  std::string error;
  nlohmann::json scenario;  // resolved echo
  Seed seed;
  std::vector<std::filesystem::path> manifest;
  std::vector<std::string> warnings;
  nlohmann::json results = nlohmann::json::object();
  double wall_time = 0.0;  // s

  nlohmann::json to_json() const;
};

/// Runs every enabled section and writes CSVs plus resolved_scenario.json and
/// run_report.json into `out_dir`. Divergence and disk failures end the run
/// with the files written so far listed in the manifest.
RunReport run(const Scenario& scenario, const std::filesystem::path& out_dir);

}  // namespace fiberlink
