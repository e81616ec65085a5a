#include "fiberlink/csv.hpp"
#include "fiberlink/scenario.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <iostream>

namespace
{

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kDiverged = 2;

std::string default_out_dir()
{
  if (const char* env = std::getenv("FIBERLINK_OUT_DIR"); env && *env)
    return env;
  return "fiberlink_out";
}

int cmd_run(const std::string& path, const std::optional<std::uint64_t>& seed, std::string out_dir)
{
  using namespace fiberlink;
  Scenario s = load_scenario(path);
  if (seed)
    s = with_seed(std::move(s), Seed{*seed});
  if (out_dir.empty())
    out_dir = default_out_dir();
  const RunReport report = run(s, out_dir);
  for (const auto& w : report.warnings)
    std::cerr << "warning: " << w << '\n';
  std::cout << "status: " << to_string(report.status) << '\n'
            << "seed: " << report.seed.value << '\n'
            << "wall time: " << report.wall_time << " s\n";
  for (const auto& p : report.manifest)
    std::cout << "  " << p.string() << '\n';
  if (report.status == RunStatus::diverged)
  {
    std::cerr << "error: " << report.error << '\n';
    return kDiverged;
  }
  if (report.status != RunStatus::ok)
  {
    std::cerr << "error: " << report.error << '\n';
    return kInvalid;
  }
  return kOk;
}

int cmd_validate(const std::string& path)
{
  const fiberlink::Scenario s = fiberlink::load_scenario(path);
  std::cout << "ok: " << s.name << " (seed " << s.seed.value << ")\n" << s.resolved["derived"].dump(2) << '\n';
  return kOk;
}

int cmd_compare(const std::string& a_path, const std::string& b_path)
{
  using namespace fiberlink;
  const AdevCurve a = read_adev_csv(a_path);
  const AdevCurve b = read_adev_csv(b_path);
  const CurveComparison cmp = compare_curves(a, b);
  std::printf("tau_s,%s,%s,ratio\n", a.label.c_str(), b.label.c_str());
  for (const auto& r : cmp.rows)
    std::printf("%.10g,%.6e,%.6e,%.6g\n", r.tau, r.a, r.b, r.ratio);
  std::printf("# max_ratio=%.6g min_ratio=%.6g common_taus=%zu\n", cmp.max_ratio, cmp.min_ratio, cmp.rows.size());
  return kOk;
}

}  // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Fiber-link frequency dissemination simulator"};
  app.require_subcommand(1);

  std::string scenario_path, out_dir;
  std::optional<std::uint64_t> seed;
  auto* run = app.add_subcommand("run", "Run a scenario and write CSV results");
  run->add_option("scenario", scenario_path, "Scenario JSON file")->required();
  run->add_option("--seed", seed, "Override the scenario seed");
  run->add_option("--out", out_dir, "Output directory (default: $FIBERLINK_OUT_DIR or ./fiberlink_out)");

  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "Check a scenario and print derived quantities");
  validate->add_option("scenario", validate_path, "Scenario JSON file")->required();

  std::string a_path, b_path;
  auto* compare = app.add_subcommand("compare", "Ratio table of two Allan deviation CSVs");
  compare->add_option("a", a_path, "First curve")->required();
  compare->add_option("b", b_path, "Second curve")->required();

  try
  {
    app.parse(argc, argv);
  }
  catch (const CLI::ParseError& e)
  {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  try
  {
    if (*run)
      return cmd_run(scenario_path, seed, out_dir);
    if (*validate)
      return cmd_validate(validate_path);
    if (*compare)
      return cmd_compare(a_path, b_path);
  }
  catch (const fiberlink::DivergenceError& e)
  {
    std::cerr << "error: " << e.what() << '\n';
    return kDiverged;
  }
  catch (const std::exception& e)
  {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  }
  return kInvalid;
}
