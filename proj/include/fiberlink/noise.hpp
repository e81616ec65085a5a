#pragma once

#include "fiberlink/series.hpp"

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace fiberlink
{

/// 64-bit reproducibility seed.
struct Seed
{
  std::uint64_t value = 0;
  friend bool operator==(Seed, Seed) = default;
};

/// Sub-seed for component `index` of a run seeded with `master`.
Seed derive_seed(Seed master, std::uint64_t index);

/// One term S_y(f) = h f^alpha of a one-sided fractional-frequency PSD.
struct PowerLawTerm
{
  int alpha = 0;
  double h = 0.0;
};

struct DiurnalSpec
{
  double amplitude = 0.0;  // peak delay excursion, s
  double period = 86400.0; // s
  double phase = 0.0;      // rad
};

/// Poisson-arriving raised-cosine delay transients.
struct BurstSpec
{
  double rate = 0.0;       // events per second
  double amplitude = 0.0;  // median |peak| delay, s (log-normal)
  double log_sigma = 0.5;  // sigma of ln|peak|
  double duration = 60.0;  // pulse length, s
};

struct NoiseSpec
{
  std::vector<PowerLawTerm> powerlaw;
  DiurnalSpec diurnal;
  BurstSpec bursts;

  /// Throws InvalidInput listing the first violated invariant.
  void validate() const;
  bool is_zero() const;
};

struct BurstEvent
{
  double start;     // s
  double amplitude; // signed peak, s
  double duration;  // s
};

/// Power-law part of `spec` only; term i uses derive_seed(seed, i).
PhaseSeries gen_power_law_phase(const NoiseSpec& spec, Eigen::Index n, double tau0, Seed seed);

/// Single power-law class. White PM and white/random-walk FM are built in the
/// time domain; flicker classes are shaped in the frequency domain with the DC
/// bin set to zero.
PhaseSeries gen_power_law_term(PowerLawTerm term, Eigen::Index n, double tau0, Seed seed);

/// x(t) = amplitude sin(2 pi t / period + phase).
PhaseSeries gen_diurnal(double amplitude, double period, double phase, Eigen::Index n, double tau0);
PhaseSeries gen_diurnal(const DiurnalSpec& spec, Eigen::Index n, double tau0);

std::vector<BurstEvent> draw_bursts(const BurstSpec& spec, double span, Seed seed);
PhaseSeries render_bursts(std::span<const BurstEvent> events, Eigen::Index n, double tau0);
PhaseSeries gen_bursts(const BurstSpec& spec, Eigen::Index n, double tau0, Seed seed);

/// Power law + diurnal + bursts. Components use sub-seeds 0 and 1, so the
/// result equals the sum of the individually generated parts exactly.
PhaseSeries gen_noise(const NoiseSpec& spec, Eigen::Index n, double tau0, Seed seed);

/// Two fibers sharing a common perturbation. With identical common and
/// differential specs, RMS(fiber1 - fiber2) / RMS(fiber1) = differential_ratio.
std::pair<PhaseSeries, PhaseSeries> correlated_pair(const NoiseSpec& common, const NoiseSpec& differential,
                                                    double differential_ratio, Eigen::Index n, double tau0,
                                                    Seed seed);
std::pair<PhaseSeries, PhaseSeries> correlated_pair(const NoiseSpec& spec, double differential_ratio,
                                                    Eigen::Index n, double tau0, Seed seed);

/// Level h_alpha that gives Allan deviation `sigma` at `tau` for data sampled
/// at tau0 (standard textbook relations; flicker PM uses the usual 1.038 + 3 ln term).
double powerlaw_level_for_adev(int alpha, double sigma, double tau, double tau0);

/// Analytic Allan deviation of a single power-law term.
double powerlaw_adev(PowerLawTerm term, double tau, double tau0);

}  // namespace fiberlink
