#include "fiberlink/csv.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace fiberlink
{

namespace
{

std::string num(double v)
{
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path, const CsvMetadata& meta, const char* header)
{
  std::error_code ec;
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot open " + path.string() + " for writing");
  out << meta.render() << '\n' << header << '\n';
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path)
{
  out.flush();
  if (!out)
    throw IoError("write to " + path.string() + " failed");
}

}  // namespace

std::string CsvMetadata::render() const
{
  std::string s = "# metadata: seed=" + std::to_string(seed) + " version=" + version;
  for (const auto& [k, v] : extra)
    s += " " + k + "=" + v;
  return s;
}

CsvMetadata CsvMetadata::parse(const std::string& line)
{
  const std::string prefix = "# metadata:";
  if (line.rfind(prefix, 0) != 0)
    throw InvalidInput("CSV metadata line missing: '" + line + "'");
  CsvMetadata m;
  m.version.clear();
  std::istringstream in(line.substr(prefix.size()));
  std::string token;
  while (in >> token)
  {
    const auto eq = token.find('=');
    if (eq == std::string::npos)
      continue;
    const std::string key = token.substr(0, eq);
    const std::string value = token.substr(eq + 1);
    if (key == "seed")
      m.seed = std::stoull(value);
    else if (key == "version")
      m.version = value;
    else
      m.extra[key] = value;
  }
  return m;
}

void write_adev_csv(const std::filesystem::path& path, const AdevCurve& curve, const CsvMetadata& meta)
{
  CsvMetadata m = meta;
  if (!curve.label.empty())
    m.extra["label"] = curve.label;
  m.extra["estimator"] = to_string(curve.estimator);
  if (curve.reduction != Reduction::none)
    m.extra["reduction"] = to_string(curve.reduction);
  auto out = open_out(path, m, "tau_s,sigma,n_pairs");
  for (const auto& p : curve.points)
    out << num(p.tau) << ',' << num(p.sigma) << ',' << p.n_pairs << '\n';
  finish(out, path);
}

void write_psd_csv(const std::filesystem::path& path, const PsdEstimate& psd, const CsvMetadata& meta)
{
  auto out = open_out(path, meta, "freq_hz,psd,rbw_hz");
  for (Eigen::Index i = 0; i < psd.freqs.size(); ++i)
    out << num(psd.freqs[i]) << ',' << num(psd.values[i]) << ',' << num(psd.rbw) << '\n';
  finish(out, path);
}

void write_phase_csv(const std::filesystem::path& path, const PhaseSeries& x, const CsvMetadata& meta)
{
  auto out = open_out(path, meta, "t_s,x_s");
  for (Eigen::Index i = 0; i < x.size(); ++i)
    out << num(x.time(i)) << ',' << num(x[i]) << '\n';
  finish(out, path);
}

void write_measurement_csv(const std::filesystem::path& path, const MeasurementRecord& rec, const CsvMetadata& meta)
{
  CsvMetadata m = meta;
  m.extra["reference"] = rec.reference_label;
  auto out = open_out(path, m, "gate_index,counted_hz,f_opt_hz");
  for (Eigen::Index i = 0; i < rec.size(); ++i)
  {
    const auto k = static_cast<std::size_t>(i);
    out << rec.gate_index[k] << ',' << num(rec.counted[i]) << ',' << rec.f_opt[k].to_string(6) << '\n';
  }
  finish(out, path);
}

AdevCurve read_adev_csv(const std::filesystem::path& path, CsvMetadata* meta)
{
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open " + path.string());
  std::string line;
  AdevCurve curve;
  int line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line))
  {
    ++line_no;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty())
      continue;
    if (line[0] == '#')
    {
      if (line.rfind("# metadata:", 0) == 0)
      {
        const CsvMetadata m = CsvMetadata::parse(line);
        if (auto it = m.extra.find("label"); it != m.extra.end())
          curve.label = it->second;
        if (meta)
          *meta = m;
      }
      continue;
    }
    if (!header_seen)
    {
      header_seen = true;
      if (line != "tau_s,sigma,n_pairs")
        throw InvalidInput(path.string() + ": expected header 'tau_s,sigma,n_pairs', got '" + line + "'");
      continue;
    }
    std::istringstream row(line);
    std::string a, b, c;
    if (!std::getline(row, a, ',') || !std::getline(row, b, ',') || !std::getline(row, c))
      throw InvalidInput(path.string() + ":" + std::to_string(line_no) + ": expected three columns");
    try
    {
      curve.points.push_back({std::stod(a), std::stod(b), static_cast<Eigen::Index>(std::stoll(c))});
    }
    catch (const std::logic_error&)
    {
      throw InvalidInput(path.string() + ":" + std::to_string(line_no) + ": malformed number");
    }
  }
  if (curve.label.empty())
    curve.label = path.stem().string();
  return curve;
}

CurveComparison compare_curves(const AdevCurve& a, const AdevCurve& b)
{
  CurveComparison out{{}, -std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  for (const auto& p : a.points)
  {
    const auto q = b.sigma_at(p.tau);
    if (!q)
      continue;
    const double ratio = p.sigma / *q;
    out.rows.push_back({p.tau, p.sigma, *q, ratio});
    out.max_ratio = std::max(out.max_ratio, ratio);
    out.min_ratio = std::min(out.min_ratio, ratio);
  }
  if (out.rows.empty())
    throw InvalidInput("compare_curves: '" + a.label + "' and '" + b.label + "' share no tau values");
  return out;
}

}  // namespace fiberlink
