#include "slicefinder/matcher.hpp"

#include <algorithm>
#include <fstream>

#include "keyvalue.hpp"
#include "slicefinder/parallel.hpp"

namespace slicefinder {

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::Rigid: return "rigid";
    case Strategy::Affine: return "affine";
    case Strategy::Mean: return "mean";
  }
  return "";
}

Strategy strategy_from_string(std::string_view s) {
  if (s == "rigid") return Strategy::Rigid;
  if (s == "affine") return Strategy::Affine;
  if (s == "mean") return Strategy::Mean;
  throw Error(ErrorCode::InvalidArgument, "unknown strategy '" + std::string(s) + "'");
}

void MatchParams::validate() const {
  registration.validate();
  if (bins < 2) throw Error(ErrorCode::InvalidArgument, "bins must be >= 2");
}

const std::vector<Score> &MatchResult::scores(Strategy s) const {
  switch (s) {
    case Strategy::Rigid: return nmi_rigid;
    case Strategy::Affine: return nmi_affine;
    case Strategy::Mean: break;
  }
  return nmi_mean;
}

namespace {

bool has_contrast(const Image2D &img) {
  std::optional<double> first;
  for (std::size_t i = 0; i < img.size(); ++i) {
    if (!img.mask()[i]) continue;
    if (!first) first = img.data()[i];
    else if (img.data()[i] != *first) return true;
  }
  return false;
}

}  // namespace

PairScore score_pair(const Image2D &s_e, const Image2D &s_t, const MatchParams &params) {
  if (s_e.width() != s_t.width() || s_e.height() != s_t.height())
    throw Error(ErrorCode::DimMismatch, "experimental and template slices differ in dims");

  PairScore out;
  if (!has_contrast(s_e) || !has_contrast(s_t)) {
    const std::string msg = "slice is constant over its valid pixels";
    out.failures.push_back({TransformKind::Rigid, ErrorCode::InsufficientContrast, msg});
    out.failures.push_back({TransformKind::Affine, ErrorCode::InsufficientContrast, msg});
    return out;
  }

  try {
    const auto reg = register_images(s_e, s_t, TransformKind::Rigid, params.registration);
    out.rigid = reg.transform;
    out.nmi_rigid = nmi(s_e, warp_image(s_t, reg.transform), params.bins);
  } catch (const Error &e) {
    out.failures.push_back({TransformKind::Rigid, e.code(), e.what()});
  }

  try {
    const auto init = out.rigid ? out.rigid->as_affine()
                                : LinearTransform2D::identity(TransformKind::Affine);
    const auto reg =
        register_images(s_e, s_t, TransformKind::Affine, params.registration, init);
    out.affine = reg.transform;
    out.nmi_affine = nmi(s_e, warp_image(s_t, reg.transform), params.bins);
  } catch (const Error &e) {
    out.failures.push_back({TransformKind::Affine, e.code(), e.what()});
  }
  return out;
}

std::size_t argmax_with_ties(std::span<const Score> v) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i]) continue;
    if (!best || *v[i] > *v[*best]) best = i;
  }
  if (!best) throw Error(ErrorCode::AllUndefined, "score vector has no defined entry");
  return *best;
}

std::vector<Score> mean_scores(std::span<const Score> rigid, std::span<const Score> affine) {
  if (rigid.size() != affine.size())
    throw Error(ErrorCode::DimMismatch, "score vectors differ in length");
  std::vector<Score> mean(rigid.size());
  for (std::size_t j = 0; j < rigid.size(); ++j) {
    if (rigid[j] && affine[j]) mean[j] = (*rigid[j] + *affine[j]) / 2.0;
  }
  return mean;
}

void select_best(MatchResult &result,
                 std::span<const std::optional<LinearTransform2D>> rigid_transforms,
                 std::span<const std::optional<LinearTransform2D>> affine_transforms) {
  for (Strategy s : kAllStrategies) {
    const auto &v = result.scores(s);
    const auto slot = static_cast<std::size_t>(s);
    result.best_index[slot].reset();
    result.best_transform[slot].reset();
    if (std::none_of(v.begin(), v.end(), [](const Score &x) { return x.has_value(); }))
      continue;
    const std::size_t j = argmax_with_ties(v);
    result.best_index[slot] = result.z_begin + static_cast<int>(j);
    switch (s) {
      case Strategy::Rigid: result.best_transform[slot] = rigid_transforms[j]; break;
      case Strategy::Affine: result.best_transform[slot] = affine_transforms[j]; break;
      case Strategy::Mean:
        result.best_transform[slot] = *result.nmi_affine[j] > *result.nmi_rigid[j]
                                          ? affine_transforms[j]
                                          : rigid_transforms[j];
        break;
    }
  }
}

MatchResult match_slice(const Image2D &s_e, const Volume3D &template_vol,
                        const MatchParams &params, Strategy strategy,
                        std::optional<ZRange> z_range, int workers, int s_e_index) {
  params.validate();
  if (template_vol.nz() <= 0) throw Error(ErrorCode::InvalidArgument, "empty template");
  const ZRange range = z_range.value_or(ZRange{0, template_vol.nz() - 1});
  if (range.first < 0 || range.second >= template_vol.nz() || range.first > range.second)
    throw Error(ErrorCode::IndexOutOfRange,
                "z range [" + std::to_string(range.first) + ", " +
                    std::to_string(range.second) + "] outside template of " +
                    std::to_string(template_vol.nz()) + " slices");
  if (template_vol.spacing_um()[0] != s_e.spacing_um() ||
      template_vol.spacing_um()[1] != s_e.spacing_um())
    throw Error(ErrorCode::PreprocessMismatch,
                "template in-plane spacing differs from the slice spacing");

  const auto n = static_cast<std::size_t>(range.second - range.first + 1);
  std::vector<PairScore> scores(n);
  parallel_for(n, workers, [&](std::size_t j) {
    Image2D s_t = extract_coronal_slice(template_vol, range.first + static_cast<int>(j));
    if (s_t.width() != s_e.width() || s_t.height() != s_e.height())
      s_t = adjust_fov(s_t, s_e.width(), s_e.height());
    scores[j] = score_pair(s_e, s_t, params);
  });

  MatchResult result;
  result.s_e_index = s_e_index;
  result.z_begin = range.first;
  result.selected = strategy;
  result.nmi_rigid.resize(n);
  result.nmi_affine.resize(n);
  std::vector<std::optional<LinearTransform2D>> rigid_t(n), affine_t(n);
  for (std::size_t j = 0; j < n; ++j) {
    result.nmi_rigid[j] = scores[j].nmi_rigid;
    result.nmi_affine[j] = scores[j].nmi_affine;
    rigid_t[j] = scores[j].rigid;
    affine_t[j] = scores[j].affine;
    for (auto &f : scores[j].failures)
      result.failures.push_back({range.first + static_cast<int>(j), std::move(f)});
  }
  result.nmi_mean = mean_scores(result.nmi_rigid, result.nmi_affine);
  select_best(result, rigid_t, affine_t);

  if (std::none_of(result.best_index.begin(), result.best_index.end(),
                   [](const auto &b) { return b.has_value(); }))
    throw Error(ErrorCode::AllPairsFailed,
                "every template slice failed to register against the slice");
  return result;
}

void save_match_csv(const MatchResult &result, const std::filesystem::path &path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  auto cell = [](const Score &s) { return s ? detail::format_double(*s) : std::string("NA"); };

  out << "s_t_index,nmi_rigid,nmi_affine,nmi_mean,status\n";
  for (std::size_t j = 0; j < result.size(); ++j) {
    const int z = result.z_begin + static_cast<int>(j);
    std::string status;
    for (const auto &f : result.failures) {
      if (f.template_index != z) continue;
      status += (status.empty() ? "" : ";") + std::string(to_string(f.failure.model)) + "=" +
                std::string(to_string(f.failure.code));
    }
    out << z << ',' << cell(result.nmi_rigid[j]) << ',' << cell(result.nmi_affine[j]) << ','
        << cell(result.nmi_mean[j]) << ',' << (status.empty() ? "ok" : status) << '\n';
  }
  for (Strategy s : kAllStrategies) {
    const auto best = result.best(s);
    out << "best_" << to_string(s) << ',';
    if (best) {
      out << *best << ','
          << detail::format_double(*result.scores(s)[static_cast<std::size_t>(*best - result.z_begin)]);
    } else {
      out << "NA,NA";
    }
    out << ",,summary\n";
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

}  // namespace slicefinder
