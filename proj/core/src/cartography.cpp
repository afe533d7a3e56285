#include "slicefinder/cartography.hpp"

#include <algorithm>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "keyvalue.hpp"
#include "pgm.hpp"
#include "slicefinder/error.hpp"
#include "slicefinder/parallel.hpp"

namespace slicefinder {

namespace fs = std::filesystem;

NmiCartography::NmiCartography(int n_e, int n_t) : n_e_(n_e), n_t_(n_t) {
  if (n_e <= 0 || n_t <= 0)
    throw Error(ErrorCode::EmptyCartography, "cartography dims must be positive");
  const auto n = static_cast<std::size_t>(n_e) * static_cast<std::size_t>(n_t);
  for (auto &m : matrices_) m.assign(n, std::nullopt);
  best_transforms.resize(static_cast<std::size_t>(n_e));
}

void NmiCartography::rebuild_mean() {
  matrix(Strategy::Mean) = mean_scores(matrix(Strategy::Rigid), matrix(Strategy::Affine));
}

namespace {

std::string canonical_params(const MatchParams &p) {
  const auto &r = p.registration;
  std::ostringstream ss;
  ss << "levels=" << r.pyramid_levels << ";block_size=" << r.block_size
     << ";block_stride=" << r.block_stride << ";search_radius=" << r.search_radius
     << ";variance_keep=" << detail::format_double(r.variance_keep_fraction)
     << ";lts_keep=" << detail::format_double(r.lts_keep_fraction)
     << ";iterations=" << r.iterations_per_level << ";bins=" << p.bins;
  return ss.str();
}

}  // namespace

NmiCartography build_cartography(const Volume3D &exp, const Volume3D &template_vol,
                                 const MatchParams &params, int workers,
                                 const std::atomic<bool> *cancel) {
  params.validate();
  if (workers < 1) throw Error(ErrorCode::InvalidArgument, "workers must be >= 1");
  if (exp.nx() != template_vol.nx() || exp.ny() != template_vol.ny() ||
      exp.spacing_um()[0] != template_vol.spacing_um()[0] ||
      exp.spacing_um()[1] != template_vol.spacing_um()[1])
    throw Error(ErrorCode::PreprocessMismatch,
                "experimental and template volumes differ in coronal dims or spacing");

  const auto start = std::chrono::steady_clock::now();
  const int n_e = exp.nz();
  const int n_t = template_vol.nz();
  NmiCartography carto(n_e, n_t);

  std::vector<Image2D> template_slices;
  template_slices.reserve(static_cast<std::size_t>(n_t));
  for (int z = 0; z < n_t; ++z) template_slices.push_back(extract_coronal_slice(template_vol, z));

  std::vector<std::vector<CartographyFailure>> row_failures(static_cast<std::size_t>(n_e));
  std::vector<std::uint8_t> row_done(static_cast<std::size_t>(n_e), 0);

  parallel_for(
      static_cast<std::size_t>(n_e), workers,
      [&](std::size_t row) {
        const int i = static_cast<int>(row);
        const Image2D s_e = extract_coronal_slice(exp, i);
        MatchResult result;
        result.s_e_index = i;
        result.nmi_rigid.resize(static_cast<std::size_t>(n_t));
        result.nmi_affine.resize(static_cast<std::size_t>(n_t));
        std::vector<std::optional<LinearTransform2D>> rigid_t(static_cast<std::size_t>(n_t));
        std::vector<std::optional<LinearTransform2D>> affine_t(static_cast<std::size_t>(n_t));
        for (int j = 0; j < n_t; ++j) {
          const auto sj = static_cast<std::size_t>(j);
          PairScore score = score_pair(s_e, template_slices[sj], params);
          result.nmi_rigid[sj] = score.nmi_rigid;
          result.nmi_affine[sj] = score.nmi_affine;
          rigid_t[sj] = score.rigid;
          affine_t[sj] = score.affine;
          for (auto &f : score.failures) row_failures[row].push_back({i, j, std::move(f)});
        }
        result.nmi_mean = mean_scores(result.nmi_rigid, result.nmi_affine);
        select_best(result, rigid_t, affine_t);

        for (Strategy s : kAllStrategies) {
          const auto &v = result.scores(s);
          for (int j = 0; j < n_t; ++j) carto.set(s, i, j, v[static_cast<std::size_t>(j)]);
        }
        carto.best_transforms[row] = result.best_transform;
        row_done[row] = 1;
      },
      cancel);

  carto.meta.params = canonical_params(params);
  carto.meta.workers = workers;
  carto.meta.rows_done = static_cast<int>(std::count(row_done.begin(), row_done.end(), 1));
  carto.meta.complete = carto.meta.rows_done == n_e;
  carto.meta.jobs = static_cast<std::size_t>(carto.meta.rows_done) *
                    static_cast<std::size_t>(n_t) * 2;
  for (auto &rf : row_failures)
    for (auto &f : rf) carto.meta.failures.push_back(std::move(f));
  carto.meta.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return carto;
}

// --- expert validation --------------------------------------------------------

void ExpertPairs::validate(int n_e, int n_t) const {
  std::set<int> seen;
  for (const auto &[se, st] : pairs) {
    if (se < 0 || se >= n_e || st < 0 || st >= n_t)
      throw Error(ErrorCode::InvalidArgument,
                  "expert pair (" + std::to_string(se) + ", " + std::to_string(st) +
                      ") outside the volumes");
    if (!seen.insert(se).second)
      throw Error(ErrorCode::InvalidArgument,
                  "experimental slice " + std::to_string(se) + " paired twice");
  }
}

ExpertPairs load_expert_pairs(const fs::path &path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  ExpertPairs out;
  out.provenance = "file:" + path.filename().string();
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != "s_e,s_t_expert")
    throw Error(ErrorCode::MalformedHeader, path.string() + ": expected header 's_e,s_t_expert'");
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    int se = 0, st = 0;
    char comma = 0, extra = 0;
    std::istringstream ss(t);
    if (!(ss >> se >> comma >> st) || comma != ',' || (ss >> extra))
      throw Error(ErrorCode::MalformedHeader,
                  path.string() + ":" + std::to_string(lineno) + ": expected 's_e,s_t'");
    out.pairs.emplace_back(se, st);
  }
  return out;
}

void save_expert_pairs(const ExpertPairs &pairs, const fs::path &path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "s_e,s_t_expert\n";
  for (const auto &[se, st] : pairs.pairs) out << se << ',' << st << '\n';
}

RegressionFit expert_ground_truth(const ExpertPairs &pairs) {
  std::vector<std::pair<double, double>> xy;
  xy.reserve(pairs.pairs.size());
  for (const auto &[se, st] : pairs.pairs) xy.emplace_back(se, st);
  return linear_regression(xy);
}

long round_half_away(double v) { return std::lround(v); }

long delta_sn(int estimated, double expert_predicted) {
  return std::labs(static_cast<long>(estimated) - round_half_away(expert_predicted));
}

EvaluationReport evaluate(const NmiCartography &carto, const ExpertPairs &pairs) {
  if (carto.n_e() <= 0 || carto.n_t() <= 0)
    throw Error(ErrorCode::EmptyCartography, "cartography has no entries");
  pairs.validate(carto.n_e(), carto.n_t());

  EvaluationReport report;
  report.expert = expert_ground_truth(pairs);
  for (Strategy s : kAllStrategies) {
    StrategyEvaluation ev;
    ev.strategy = s;
    std::vector<std::pair<double, double>> xy;
    for (int i = 0; i < carto.n_e(); ++i) {
      const auto row = carto.row(s, i);
      if (std::none_of(row.begin(), row.end(), [](const Score &v) { return v.has_value(); })) {
        ++ev.excluded_rows;
        continue;
      }
      const int estimate = static_cast<int>(argmax_with_ties(row));
      const double predicted = report.expert.predict(i);
      ev.rows.push_back({i, estimate, predicted, delta_sn(estimate, predicted)});
      xy.emplace_back(i, estimate);
    }
    if (ev.rows.empty())
      throw Error(ErrorCode::EmptyCartography,
                  std::string(to_string(s)) + " cartography has no defined row");
    ev.fit = linear_regression(xy);
    double sum = 0.0;
    for (const auto &r : ev.rows) sum += static_cast<double>(r.delta_sn);
    ev.delta_sn_mean = sum / static_cast<double>(ev.rows.size());
    double ss = 0.0;
    for (const auto &r : ev.rows) {
      const double d = static_cast<double>(r.delta_sn) - ev.delta_sn_mean;
      ss += d * d;
    }
    ev.delta_sn_std = std::sqrt(ss / static_cast<double>(ev.rows.size()));
    report.strategies[static_cast<std::size_t>(s)] = std::move(ev);
  }
  return report;
}

DiceReport dice_report(const LabelMap2D &exp_labels, const LabelMap2D &warped_template_labels,
                       std::span<const std::uint16_t> regions) {
  const MeanDice md = mean_dice(exp_labels, warped_template_labels, regions);
  return {md.per_label, md.excluded, md.mean};
}

SegmentationSummary segmentation_dice(const NmiCartography &carto, Strategy strategy,
                                      const Volume3D &exp_labels,
                                      const Volume3D &template_labels,
                                      std::span<const int> slices,
                                      std::span<const std::uint16_t> regions) {
  if (exp_labels.nz() != carto.n_e() || template_labels.nz() != carto.n_t())
    throw Error(ErrorCode::DimMismatch, "label volumes do not match the cartography");
  SegmentationSummary summary;
  summary.strategy = strategy;
  std::vector<double> all;
  for (int s_e : slices) {
    if (s_e < 0 || s_e >= carto.n_e())
      throw Error(ErrorCode::IndexOutOfRange, "slice " + std::to_string(s_e));
    const auto row = carto.row(strategy, s_e);
    if (std::none_of(row.begin(), row.end(), [](const Score &v) { return v.has_value(); }))
      throw Error(ErrorCode::AllUndefined,
                  "row " + std::to_string(s_e) + " has no defined score");
    const int s_t = static_cast<int>(argmax_with_ties(row));
    const auto &T = carto.best_transforms.at(static_cast<std::size_t>(s_e))
                        [static_cast<std::size_t>(strategy)];
    if (!T)
      throw Error(ErrorCode::InvalidArgument,
                  "no stored transform for row " + std::to_string(s_e));

    const LabelMap2D exp_map = extract_coronal_labels(exp_labels, s_e);
    LabelMap2D tmpl = extract_coronal_labels(template_labels, s_t);
    if (tmpl.width != exp_map.width || tmpl.height != exp_map.height)
      tmpl = adjust_fov(tmpl, exp_map.width, exp_map.height);
    DiceReport d = dice_report(exp_map, warp_labels(tmpl, *T), regions);
    for (const auto &[label, value] : d.per_region) all.push_back(value);
    summary.slices.push_back({s_e, s_t, std::move(d)});
  }
  if (!all.empty()) {
    double sum = 0.0;
    for (double v : all) sum += v;
    summary.mean = sum / static_cast<double>(all.size());
    double ss = 0.0;
    for (double v : all) ss += (v - summary.mean) * (v - summary.mean);
    summary.std = std::sqrt(ss / static_cast<double>(all.size()));
  }
  return summary;
}

// --- export -------------------------------------------------------------------------

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t checksum(const Volume3D &vol) {
  std::string buf;
  buf.reserve(64 + vol.data().size() * sizeof(double));
  auto put = [&](const void *p, std::size_t n) {
    buf.append(static_cast<const char *>(p), n);
  };
  for (int d : vol.dims()) put(&d, sizeof d);
  for (double s : vol.spacing_um()) put(&s, sizeof s);
  put(vol.data().data(), vol.data().size() * sizeof(double));
  return fnv1a(buf);
}

std::string Provenance::header_line() const {
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "# slicefinder version=%s params=%016" PRIx64 " exp=%016" PRIx64
                " template=%016" PRIx64 " status=%s",
                tool_version.c_str(), param_hash, exp_checksum, template_checksum,
                complete ? "complete" : "incomplete");
  return buf;
}

std::optional<Provenance> parse_provenance(const std::string &line) {
  char version[32] = {};
  char status[16] = {};
  Provenance p;
  if (std::sscanf(line.c_str(),
                  "# slicefinder version=%31s params=%" SCNx64 " exp=%" SCNx64
                  " template=%" SCNx64 " status=%15s",
                  version, &p.param_hash, &p.exp_checksum, &p.template_checksum,
                  status) != 5)
    return std::nullopt;
  const std::string st = status;
  if (st != "complete" && st != "incomplete") return std::nullopt;
  p.tool_version = version;
  p.complete = st == "complete";
  return p;
}

std::optional<Provenance> read_provenance(const fs::path &path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  std::string line;
  if (!std::getline(in, line)) return std::nullopt;
  return parse_provenance(line);
}

Provenance make_provenance(const NmiCartography &carto, const Volume3D &exp,
                           const Volume3D &template_vol) {
  Provenance p;
  p.param_hash = fnv1a(carto.meta.params);
  p.exp_checksum = checksum(exp);
  p.template_checksum = checksum(template_vol);
  p.complete = carto.meta.complete;
  return p;
}

void export_cartography_csv(const NmiCartography &carto, Strategy s, const fs::path &path,
                            const Provenance &prov) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << prov.header_line() << '\n' << "s_e";
  for (int j = 0; j < carto.n_t(); ++j) out << ',' << j;
  out << '\n';
  for (int i = 0; i < carto.n_e(); ++i) {
    out << i;
    for (int j = 0; j < carto.n_t(); ++j) {
      const Score v = carto.at(s, i, j);
      out << ',' << (v ? detail::format_double(*v) : "NA");
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

CartographyMatrix load_cartography_csv(const fs::path &path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  CartographyMatrix m;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(detail::trim(cell));
    if (!header) {
      if (cells.empty() || cells.front() != "s_e")
        throw Error(ErrorCode::MalformedHeader, path.string() + ": missing 's_e' header row");
      m.n_t = static_cast<int>(cells.size()) - 1;
      header = true;
      continue;
    }
    if (static_cast<int>(cells.size()) != m.n_t + 1 || cells.front() != std::to_string(m.n_e))
      throw Error(ErrorCode::MalformedHeader,
                  path.string() + ": bad row " + std::to_string(m.n_e));
    for (std::size_t k = 1; k < cells.size(); ++k) {
      if (cells[k] == "NA") {
        m.values.emplace_back(std::nullopt);
        continue;
      }
      try {
        std::size_t used = 0;
        const double v = std::stod(cells[k], &used);
        if (used != cells[k].size()) throw std::invalid_argument(cells[k]);
        m.values.emplace_back(v);
      } catch (const std::exception &) {
        throw Error(ErrorCode::MalformedHeader, path.string() + ": bad value '" + cells[k] + "'");
      }
    }
    ++m.n_e;
  }
  if (!header || m.n_e == 0 || m.n_t == 0)
    throw Error(ErrorCode::EmptyCartography, path.string() + ": no data rows");
  return m;
}

NmiCartography load_cartography(const fs::path &rigid_csv, const fs::path &affine_csv) {
  const CartographyMatrix r = load_cartography_csv(rigid_csv);
  const CartographyMatrix a = load_cartography_csv(affine_csv);
  if (r.n_e != a.n_e || r.n_t != a.n_t)
    throw Error(ErrorCode::DimMismatch, "rigid and affine cartographies differ in shape");
  NmiCartography carto(r.n_e, r.n_t);
  carto.matrix(Strategy::Rigid) = r.values;
  carto.matrix(Strategy::Affine) = a.values;
  carto.rebuild_mean();
  return carto;
}

void export_heatmap(const NmiCartography &carto, Strategy s, const fs::path &path) {
  const auto &m = carto.matrix(s);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const Score &v : m) {
    if (!v) continue;
    lo = std::min(lo, *v);
    hi = std::max(hi, *v);
  }
  if (!(hi >= lo))
    throw Error(ErrorCode::IoError, "cannot render a heatmap: every entry is undefined");

  detail::PgmData pgm{carto.n_t(), carto.n_e(), 65535, {}};
  pgm.pixels.reserve(m.size());
  for (const Score &v : m) {
    if (!v) {
      pgm.pixels.push_back(0);
      continue;
    }
    const double q = hi > lo ? std::round((*v - lo) / (hi - lo) * 65535.0) : 65535.0;
    pgm.pixels.push_back(static_cast<std::uint16_t>(std::clamp(q, 0.0, 65535.0)));
  }
  detail::write_pgm(path, pgm);

  std::ofstream meta(path.string() + ".meta");
  if (!meta) throw Error(ErrorCode::IoError, "cannot write " + path.string() + ".meta");
  meta << "strategy: " << to_string(s) << '\n'
       << "score_min: " << detail::format_double(lo) << '\n'
       << "score_max: " << detail::format_double(hi) << '\n'
       << "undefined_value: 0\n"
       << "rows: s_e\ncolumns: s_t\n";
}

void export_best_transforms(const NmiCartography &carto, const fs::path &path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "s_e,strategy,best_index," << kTransformCsvHeader << '\n';
  for (int i = 0; i < carto.n_e(); ++i) {
    for (Strategy s : kAllStrategies) {
      const auto &T = carto.best_transforms[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)];
      const auto row = carto.row(s, i);
      if (!T || std::none_of(row.begin(), row.end(), [](const Score &v) { return v.has_value(); }))
        continue;
      out << i << ',' << to_string(s) << ',' << argmax_with_ties(row) << ',' << to_csv_line(*T)
          << '\n';
    }
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

void load_best_transforms(NmiCartography &carto, const fs::path &path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  std::string line;
  std::getline(in, line);
  if (detail::trim(line) != std::string("s_e,strategy,best_index,") + kTransformCsvHeader)
    throw Error(ErrorCode::MalformedHeader, path.string() + ": unexpected header");
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    std::stringstream ss(line);
    std::string se, strategy, index;
    std::getline(ss, se, ',');
    std::getline(ss, strategy, ',');
    std::getline(ss, index, ',');
    std::string rest;
    std::getline(ss, rest);
    int row = 0;
    try {
      row = std::stoi(se);
    } catch (const std::exception &) {
      throw Error(ErrorCode::MalformedHeader, path.string() + ": bad row '" + line + "'");
    }
    if (row < 0 || row >= carto.n_e())
      throw Error(ErrorCode::IndexOutOfRange, path.string() + ": row " + se);
    carto.best_transforms[static_cast<std::size_t>(row)]
                         [static_cast<std::size_t>(strategy_from_string(strategy))] =
        transform_from_csv_line(rest);
  }
}

void save_report_csv(const EvaluationReport &report,
                     std::span<const SegmentationSummary> dice, const fs::path &path,
                     const Provenance &prov) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  const auto f = detail::format_double;
  out << prov.header_line() << '\n';
  out << "[expert]\na,b,r2\n"
      << f(report.expert.a) << ',' << f(report.expert.b) << ',' << f(report.expert.r2) << "\n\n";
  for (const auto &ev : report.strategies) {
    out << "[strategy " << to_string(ev.strategy) << "]\n"
        << "a,b,r2,delta_sn_mean,delta_sn_std,excluded_rows\n"
        << f(ev.fit.a) << ',' << f(ev.fit.b) << ',' << f(ev.fit.r2) << ','
        << f(ev.delta_sn_mean) << ',' << f(ev.delta_sn_std) << ',' << ev.excluded_rows << '\n'
        << "s_e,estimate,expert_predicted,delta_sn\n";
    for (const auto &r : ev.rows)
      out << r.s_e << ',' << r.estimate << ',' << f(r.expert_predicted) << ',' << r.delta_sn
          << '\n';
    out << '\n';
  }
  for (const auto &d : dice) {
    out << "[dice " << to_string(d.strategy) << "]\n"
        << "mean,std\n"
        << f(d.mean) << ',' << f(d.std) << '\n'
        << "s_e,s_t,region,dice\n";
    for (const auto &sl : d.slices) {
      for (const auto &[label, value] : sl.dice.per_region)
        out << sl.s_e << ',' << sl.s_t << ',' << label << ',' << f(value) << '\n';
      for (auto label : sl.dice.excluded)
        out << sl.s_e << ',' << sl.s_t << ',' << label << ",excluded\n";
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

}  // namespace slicefinder
