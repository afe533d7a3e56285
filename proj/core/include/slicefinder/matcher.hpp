#pragma once

// Z-position estimation of one experimental slice: register every template
// slice onto it (rigid, then rigid-initialized affine), score each pair by
// NMI and take the argmax of the rigid, affine and mean score vectors.

#include <array>
#include <atomic>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "slicefinder/blockmatch.hpp"
#include "slicefinder/error.hpp"
#include "slicefinder/imgvol.hpp"
#include "slicefinder/metrics.hpp"
#include "slicefinder/xform.hpp"

namespace slicefinder {

enum class Strategy { Rigid = 0, Affine = 1, Mean = 2 };
inline constexpr std::array<Strategy, 3> kAllStrategies{
    Strategy::Rigid, Strategy::Affine, Strategy::Mean};

std::string_view to_string(Strategy s);
Strategy strategy_from_string(std::string_view s);

using Score = std::optional<double>;

struct MatchParams {
  BlockMatchParams registration;
  int bins = kDefaultBins;

  void validate() const;
};

struct PairFailure {
  TransformKind model;
  ErrorCode code;
  std::string message;
};

struct PairScore {
  Score nmi_rigid;
  Score nmi_affine;
  std::optional<LinearTransform2D> rigid;
  std::optional<LinearTransform2D> affine;
  std::vector<PairFailure> failures;
};

// Registers s_t (floating) onto s_e (reference). Each model fails
// independently; a failure leaves its score empty and is listed.
PairScore score_pair(const Image2D &s_e, const Image2D &s_t,
                     const MatchParams &params);

struct MatchFailure {
  int template_index;
  PairFailure failure;
};

struct MatchResult {
  int s_e_index = -1;
  int z_begin = 0;  // template index of vector entry 0
  std::vector<Score> nmi_rigid;
  std::vector<Score> nmi_affine;
  std::vector<Score> nmi_mean;
  // Per strategy, absolute template indices; empty when a vector has no
  // defined entry.
  std::array<std::optional<int>, 3> best_index;
  std::array<std::optional<LinearTransform2D>, 3> best_transform;
  std::vector<MatchFailure> failures;
  Strategy selected = Strategy::Mean;

  const std::vector<Score> &scores(Strategy s) const;
  std::optional<int> best(Strategy s) const {
    return best_index[static_cast<int>(s)];
  }
  std::size_t size() const { return nmi_rigid.size(); }
};

// Lowest index attaining the maximum over defined entries. Throws
// AllUndefined when no entry is defined.
std::size_t argmax_with_ties(std::span<const Score> v);

// Elementwise average, defined where both inputs are.
std::vector<Score> mean_scores(std::span<const Score> rigid,
                               std::span<const Score> affine);

// Closed template index interval [first, last].
using ZRange = std::pair<int, int>;

// Template slices whose dims differ from s_e are centered into its field of
// view first. Score vectors are index-keyed, so the result is identical for
// any worker count.
MatchResult match_slice(const Image2D &s_e, const Volume3D &template_vol,
                        const MatchParams &params,
                        Strategy strategy = Strategy::Mean,
                        std::optional<ZRange> z_range = {}, int workers = 1,
                        int s_e_index = -1);

// Fills best_index / best_transform from already assembled vectors. The mean
// strategy reports the transform of whichever model scored higher at its
// argmax (rigid on ties).
void select_best(MatchResult &result,
                 std::span<const std::optional<LinearTransform2D>> rigid_transforms,
                 std::span<const std::optional<LinearTransform2D>> affine_transforms);

// CSV: s_t_index,nmi_rigid,nmi_affine,nmi_mean,status then one summary row
// per strategy.
void save_match_csv(const MatchResult &result, const std::filesystem::path &path);

}  // namespace slicefinder
