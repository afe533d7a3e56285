#pragma once

// Whole-volume evaluation: the NMI cartography over every (s_e, s_t) pair,
// validation against expert pairings, Dice scoring and report export.

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "slicefinder/imgvol.hpp"
#include "slicefinder/matcher.hpp"
#include "slicefinder/metrics.hpp"

namespace slicefinder {

inline constexpr const char *kToolVersion = "0.1.0";

struct CartographyFailure {
  int s_e;
  int s_t;
  PairFailure failure;
};

struct CartographyMeta {
  std::string params;  // canonical parameter string (hashed in provenance)
  double wall_seconds = 0.0;
  std::size_t jobs = 0;  // template registrations attempted
  int workers = 1;
  int rows_done = 0;
  bool complete = true;
  std::vector<CartographyFailure> failures;
};

class NmiCartography {
 public:
  NmiCartography() = default;
  NmiCartography(int n_e, int n_t);

  int n_e() const { return n_e_; }
  int n_t() const { return n_t_; }

  Score at(Strategy s, int i, int j) const { return matrix(s)[flat(i, j)]; }
  void set(Strategy s, int i, int j, Score v) { matrix(s)[flat(i, j)] = v; }

  const std::vector<Score> &matrix(Strategy s) const {
    return matrices_[static_cast<int>(s)];
  }
  std::vector<Score> &matrix(Strategy s) { return matrices_[static_cast<int>(s)]; }
  std::span<const Score> row(Strategy s, int i) const {
    return std::span<const Score>(matrix(s)).subspan(
        static_cast<std::size_t>(i) * static_cast<std::size_t>(n_t_),
        static_cast<std::size_t>(n_t_));
  }

  // Recomputes the mean matrix from rigid and affine.
  void rebuild_mean();

  // Best transform per (row, strategy), kept for Dice scoring.
  std::vector<std::array<std::optional<LinearTransform2D>, 3>> best_transforms;
  CartographyMeta meta;

 private:
  std::size_t flat(int i, int j) const {
    return static_cast<std::size_t>(i) * static_cast<std::size_t>(n_t_) +
           static_cast<std::size_t>(j);
  }

  int n_e_ = 0;
  int n_t_ = 0;
  std::array<std::vector<Score>, 3> matrices_;
};

// Row jobs (one per experimental slice) run on `workers` threads. Matrices
// are identical for any worker count. Rows not started before `cancel` is
// raised stay undefined and the result is flagged incomplete.
NmiCartography build_cartography(const Volume3D &exp, const Volume3D &template_vol,
                                 const MatchParams &params, int workers = 1,
                                 const std::atomic<bool> *cancel = nullptr);

struct ExpertPairs {
  std::vector<std::pair<int, int>> pairs;  // (s_e, expert s_t)
  std::string provenance;

  // Throws InvalidArgument on out-of-range indices or repeated s_e.
  void validate(int n_e, int n_t) const;
};

ExpertPairs load_expert_pairs(const std::filesystem::path &path);
void save_expert_pairs(const ExpertPairs &pairs, const std::filesystem::path &path);

RegressionFit expert_ground_truth(const ExpertPairs &pairs);

// Rounds half away from zero.
long round_half_away(double v);
// |estimated - round(expert_predicted)|.
long delta_sn(int estimated, double expert_predicted);

struct SliceEvaluation {
  int s_e;
  int estimate;
  double expert_predicted;
  long delta_sn;
};

struct StrategyEvaluation {
  Strategy strategy;
  RegressionFit fit;  // over all (s_e, estimate) pairs
  double delta_sn_mean = 0.0;
  double delta_sn_std = 0.0;
  int excluded_rows = 0;  // rows without a defined entry
  std::vector<SliceEvaluation> rows;
};

struct EvaluationReport {
  RegressionFit expert;
  std::array<StrategyEvaluation, 3> strategies;

  const StrategyEvaluation &at(Strategy s) const {
    return strategies[static_cast<int>(s)];
  }
};

EvaluationReport evaluate(const NmiCartography &carto, const ExpertPairs &pairs);

struct DiceReport {
  std::vector<std::pair<std::uint16_t, double>> per_region;
  std::vector<std::uint16_t> excluded;
  double mean = 0.0;
};

// Unweighted mean Dice between the experimental labels and the template
// labels already warped onto the experimental grid.
DiceReport dice_report(const LabelMap2D &exp_labels,
                       const LabelMap2D &warped_template_labels,
                       std::span<const std::uint16_t> regions);

struct SegmentationSlice {
  int s_e;
  int s_t;
  DiceReport dice;
};

struct SegmentationSummary {
  Strategy strategy;
  std::vector<SegmentationSlice> slices;
  double mean = 0.0;  // over every (slice, region) score
  double std = 0.0;
};

// For each listed experimental slice, warps the template labels of the
// strategy's best slice with its best transform (nearest neighbour) and
// scores them against the experimental labels.
SegmentationSummary segmentation_dice(const NmiCartography &carto, Strategy strategy,
                                      const Volume3D &exp_labels,
                                      const Volume3D &template_labels,
                                      std::span<const int> slices,
                                      std::span<const std::uint16_t> regions);

// --- export -------------------------------------------------------------------

struct Provenance {
  std::string tool_version = kToolVersion;
  std::uint64_t param_hash = 0;
  std::uint64_t exp_checksum = 0;
  std::uint64_t template_checksum = 0;
  bool complete = true;

  std::string header_line() const;
};

// Parses a line produced by header_line(); empty when it is not one.
std::optional<Provenance> parse_provenance(const std::string &line);
// Provenance header of a file written by one of the exporters.
std::optional<Provenance> read_provenance(const std::filesystem::path &path);

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t checksum(const Volume3D &vol);
Provenance make_provenance(const NmiCartography &carto, const Volume3D &exp,
                           const Volume3D &template_vol);

// Header row of template indices, then one row per s_e; undefined is `NA`.
void export_cartography_csv(const NmiCartography &carto, Strategy s,
                            const std::filesystem::path &path,
                            const Provenance &prov = {});
// Reads one strategy matrix back: (n_e, n_t, values).
struct CartographyMatrix {
  int n_e = 0;
  int n_t = 0;
  std::vector<Score> values;
};
CartographyMatrix load_cartography_csv(const std::filesystem::path &path);
NmiCartography load_cartography(const std::filesystem::path &rigid_csv,
                                const std::filesystem::path &affine_csv);

// 16-bit PGM, min-max over defined entries, undefined -> 0; the scaling goes
// to `<path>.meta`.
void export_heatmap(const NmiCartography &carto, Strategy s,
                    const std::filesystem::path &path);

// s_e,strategy,best_index,kind,m00,m01,m10,m11,tx,ty
void export_best_transforms(const NmiCartography &carto,
                            const std::filesystem::path &path);
void load_best_transforms(NmiCartography &carto, const std::filesystem::path &path);

void save_report_csv(const EvaluationReport &report,
                     std::span<const SegmentationSummary> dice,
                     const std::filesystem::path &path, const Provenance &prov = {});

}  // namespace slicefinder
