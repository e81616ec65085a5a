#pragma once

#include "fiberlink/comb.hpp"
#include "fiberlink/stability.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace fiberlink
{

inline constexpr const char* kVersion = "1.0.0";

class IoError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// First line of every CSV: "# metadata: seed=N version=V key=value ...".
struct CsvMetadata
{
  std::uint64_t seed = 0;
  std::string version = kVersion;
  std::map<std::string, std::string> extra;

  std::string render() const;
  static CsvMetadata parse(const std::string& line);
};

void write_adev_csv(const std::filesystem::path& path, const AdevCurve& curve, const CsvMetadata& meta);
void write_psd_csv(const std::filesystem::path& path, const PsdEstimate& psd, const CsvMetadata& meta);
void write_phase_csv(const std::filesystem::path& path, const PhaseSeries& x, const CsvMetadata& meta);
void write_measurement_csv(const std::filesystem::path& path, const MeasurementRecord& rec, const CsvMetadata& meta);

/// Reads tau_s,sigma,n_pairs; the label comes from the metadata when present.
AdevCurve read_adev_csv(const std::filesystem::path& path, CsvMetadata* meta = nullptr);

struct RatioRow
{
  double tau;
  double a;
  double b;
  double ratio;  // a / b
};

struct CurveComparison
{
  std::vector<RatioRow> rows;
  double max_ratio;
  double min_ratio;
};

/// Ratios a/b at taus common to both curves (1e-9 relative match).
CurveComparison compare_curves(const AdevCurve& a, const AdevCurve& b);

}  // namespace fiberlink
