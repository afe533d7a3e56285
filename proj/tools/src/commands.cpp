#include "commands.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cinttypes>
#include <cstdlib>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "pipeline_config.hpp"
#include "slicefinder/blockmatch.hpp"
#include "slicefinder/cartography.hpp"
#include "slicefinder/error.hpp"
#include "slicefinder/imgvol.hpp"
#include "slicefinder/matcher.hpp"
#include "slicefinder/metrics.hpp"
#include "slicefinder/xform.hpp"

namespace slicefinder::cli {

namespace fs = std::filesystem;

std::atomic<bool> &cancel_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}

namespace {

struct Options {
  // common
  int workers = 1;
  int bins = kDefaultBins;
  BlockMatchParams reg;
  std::string strategy = "mean";
  std::string out = ".";
  std::uint64_t seed = 1;
  std::string z_range;
  // register
  std::string ref, flt, model = "rigid";
  // match / cartography
  std::string slice, template_path, exp;
  // evaluate
  std::string cartography_dir, expert, exp_labels, template_labels, transforms;
  std::vector<int> slices;
  std::vector<int> regions;
  // tilt
  std::string in, labels;
  double theta = 0.0, phi = 0.0;
  // phantom
  std::vector<int> dims{64, 64, 96};
  bool perturb = false;
  SlicePerturbation perturbation;
  int expert_step = 3;
};

std::string hex(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

PipelineConfig make_config(const Options &o) {
  PipelineConfig c;
  c.out = o.out;
  c.match.registration = o.reg;
  c.match.bins = o.bins;
  c.strategy = strategy_from_string(o.strategy);
  if (!o.z_range.empty()) c.z_range = parse_z_range(o.z_range);
  c.workers = o.workers;
  c.seed = o.seed;
  return c;
}

fs::path output_dir(const PipelineConfig &c) {
  std::error_code ec;
  fs::create_directories(c.out, ec);
  if (ec || !fs::is_directory(c.out))
    throw Error(ErrorCode::IoError, "cannot create output directory " + c.out.string());
  return c.out;
}

// Brings a loaded slice onto the template grid: resampling to its spacing.
Image2D to_spacing(const Image2D &img, double spacing_um) {
  return img.spacing_um() == spacing_um ? img : resample_isotropic(img, spacing_um);
}

int cmd_register(const Options &o, std::ostream &out) {
  PipelineConfig c = make_config(o);
  c.validate();
  for (const auto &p : {o.ref, o.flt})
    if (!fs::exists(p)) throw Error(ErrorCode::MissingFile, p);
  const TransformKind kind = transform_kind_from_string(o.model);

  const Image2D ref = load_image(o.ref);
  Image2D flt = to_spacing(load_image(o.flt), ref.spacing_um());
  if (flt.width() != ref.width() || flt.height() != ref.height())
    flt = adjust_fov(flt, ref.width(), ref.height());

  const RegistrationResult reg = register_images(ref, flt, kind, c.match.registration);
  const Image2D warped = warp_image(flt, reg.transform);
  const double score = nmi(ref, warped, c.match.bins);

  const fs::path dir = output_dir(c);
  save_transform(reg.transform, dir / "transform.csv");
  save_image(warped, dir / "warped.pgm");
  std::ofstream summary(dir / "register.txt");
  summary << "model: " << to_string(kind) << '\n'
          << "nmi: " << num(score) << '\n'
          << "residual_rms: " << num(reg.residual_rms) << '\n'
          << "converged: " << (reg.converged ? "true" : "false") << '\n';
  if (!summary) throw Error(ErrorCode::IoError, "cannot write register.txt");

  out << "model=" << to_string(kind) << " nmi=" << num(score)
      << " residual_rms=" << num(reg.residual_rms) << '\n';
  return kExitOk;
}

int cmd_match(const Options &o, std::ostream &out, std::ostream &err) {
  PipelineConfig c = make_config(o);
  c.template_volume = o.template_path;
  c.validate();
  if (!fs::exists(o.slice)) throw Error(ErrorCode::MissingFile, o.slice);

  const Volume3D tmpl = load_volume(c.template_volume);
  const Image2D slice = to_spacing(load_image(o.slice), tmpl.spacing_um()[0]);
  const MatchResult result =
      match_slice(slice, tmpl, c.match, c.strategy, c.z_range, c.workers);

  const fs::path dir = output_dir(c);
  save_match_csv(result, dir / "match.csv");
  std::ofstream transforms(dir / "best_transforms.csv");
  transforms << "strategy,best_index," << kTransformCsvHeader << '\n';
  for (Strategy s : kAllStrategies) {
    const auto &T = result.best_transform[static_cast<std::size_t>(s)];
    if (T) transforms << to_string(s) << ',' << *result.best(s) << ',' << to_csv_line(*T) << '\n';
  }
  if (!transforms) throw Error(ErrorCode::IoError, "cannot write best_transforms.csv");

  if (!result.failures.empty())
    err << "slicefinder: " << result.failures.size()
        << " registrations failed; their entries are undefined (see match.csv)\n";
  for (Strategy s : kAllStrategies) {
    const auto best = result.best(s);
    out << "best_index(" << to_string(s) << ")=";
    if (best) {
      out << *best << " nmi="
          << num(*result.scores(s)[static_cast<std::size_t>(*best - result.z_begin)]);
    } else {
      out << "NA nmi=NA";
    }
    out << (s == result.selected ? " selected" : "") << '\n';
  }
  return kExitOk;
}

int cmd_cartography(const Options &o, std::ostream &out, std::ostream &err) {
  PipelineConfig c = make_config(o);
  c.exp_volume = o.exp;
  c.template_volume = o.template_path;
  c.validate();

  const Volume3D exp = load_volume(c.exp_volume);
  const Volume3D tmpl = load_volume(c.template_volume);
  const NmiCartography carto =
      build_cartography(exp, tmpl, c.match, c.workers, &cancel_flag());
  const Provenance prov = make_provenance(carto, exp, tmpl);

  const fs::path dir = output_dir(c);
  for (Strategy s : kAllStrategies) {
    const std::string name(to_string(s));
    export_cartography_csv(carto, s, dir / ("cartography_" + name + ".csv"), prov);
    try {
      export_heatmap(carto, s, dir / ("heatmap_" + name + ".pgm"));
    } catch (const Error &e) {
      err << "slicefinder: no heatmap for " << name << ": " << e.what() << '\n';
    }
  }
  export_best_transforms(carto, dir / "best_transforms.csv");

  std::ofstream failures(dir / "failures.csv");
  failures << prov.header_line() << '\n' << "s_e,s_t,model,code\n";
  for (const auto &f : carto.meta.failures)
    failures << f.s_e << ',' << f.s_t << ',' << to_string(f.failure.model) << ','
             << to_string(f.failure.code) << '\n';
  // Timings live apart from the hashed outputs.
  std::ofstream meta(dir / "run_meta.txt");
  meta << "wall_seconds: " << carto.meta.wall_seconds << '\n'
       << "workers: " << carto.meta.workers << '\n'
       << "registrations: " << carto.meta.jobs << '\n'
       << "rows_done: " << carto.meta.rows_done << " of " << carto.n_e() << '\n';
  if (!failures || !meta) throw Error(ErrorCode::IoError, "cannot write run metadata");

  out << "rows=" << carto.meta.rows_done << '/' << carto.n_e() << " columns=" << carto.n_t()
      << " failures=" << carto.meta.failures.size() << " params=" << hex(prov.param_hash)
      << '\n';
  if (!carto.meta.complete) {
    err << "slicefinder: interrupted; outputs hold " << carto.meta.rows_done << " of "
        << carto.n_e() << " rows and are marked incomplete\n";
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_evaluate(const Options &o, std::ostream &out) {
  PipelineConfig c = make_config(o);
  c.expert_pairs = o.expert;
  c.exp_labels = o.exp_labels;
  c.template_labels = o.template_labels;
  c.validate();
  if (c.exp_labels.empty() != c.template_labels.empty())
    throw Error(ErrorCode::InvalidArgument,
                "--exp-labels and --template-labels go together");

  const fs::path src = o.cartography_dir.empty() ? c.out : fs::path(o.cartography_dir);
  const fs::path rigid_csv = src / "cartography_rigid.csv";
  const fs::path affine_csv = src / "cartography_affine.csv";
  for (const auto &p : {rigid_csv, affine_csv})
    if (!fs::exists(p)) throw Error(ErrorCode::MissingFile, p.string());
  NmiCartography carto = load_cartography(rigid_csv, affine_csv);
  const Provenance prov = read_provenance(rigid_csv).value_or(Provenance{});

  const ExpertPairs pairs = load_expert_pairs(c.expert_pairs);
  const EvaluationReport report = evaluate(carto, pairs);

  std::vector<SegmentationSummary> dice;
  if (!c.exp_labels.empty()) {
    const fs::path transforms =
        o.transforms.empty() ? src / "best_transforms.csv" : fs::path(o.transforms);
    if (!fs::exists(transforms)) throw Error(ErrorCode::MissingFile, transforms.string());
    load_best_transforms(carto, transforms);
    const Volume3D exp_labels = load_volume(c.exp_labels);
    const Volume3D tmpl_labels = load_volume(c.template_labels);

    std::vector<int> slices = o.slices;
    if (slices.empty())
      for (const auto &[se, st] : pairs.pairs) slices.push_back(se);
    std::vector<std::uint16_t> regions(o.regions.begin(), o.regions.end());
    if (regions.empty()) {
      std::set<std::uint16_t> ids;
      for (double v : exp_labels.data())
        if (v > 0.0) ids.insert(static_cast<std::uint16_t>(std::lround(v)));
      regions.assign(ids.begin(), ids.end());
    }
    for (Strategy s : kAllStrategies)
      dice.push_back(segmentation_dice(carto, s, exp_labels, tmpl_labels, slices, regions));
  }

  const fs::path dir = output_dir(c);
  save_report_csv(report, dice, dir / "report.csv", prov);
  for (const auto &ev : report.strategies) {
    out << "strategy=" << to_string(ev.strategy) << " r2=" << num(ev.fit.r2)
        << " delta_sn_mean=" << num(ev.delta_sn_mean) << " delta_sn_std=" << num(ev.delta_sn_std)
        << " excluded_rows=" << ev.excluded_rows;
    for (const auto &d : dice)
      if (d.strategy == ev.strategy) out << " dice_mean=" << num(d.mean);
    out << '\n';
  }
  return kExitOk;
}

int cmd_tilt(const Options &o, std::ostream &out) {
  PipelineConfig c = make_config(o);
  c.tilt = TiltSpec{o.theta, o.phi};
  c.validate();
  if (!fs::exists(o.in)) throw Error(ErrorCode::MissingFile, o.in);
  if (!o.labels.empty() && !fs::exists(o.labels)) throw Error(ErrorCode::MissingFile, o.labels);

  const Volume3D in = load_volume(o.in);
  const Volume3D tilted = simulate_tilt(in, *c.tilt);
  const fs::path dir = output_dir(c);
  save_volume(tilted, dir / "tilted.hdr");
  if (!o.labels.empty())
    save_volume(simulate_tilt_labels(load_volume(o.labels), *c.tilt),
                dir / "tilted_labels.hdr", VoxelType::UInt16);
  out << "checksum_in=" << hex(checksum(in)) << " checksum_out=" << hex(checksum(tilted))
      << '\n';
  return kExitOk;
}

int cmd_phantom(const Options &o, std::ostream &out) {
  PipelineConfig c = make_config(o);
  c.validate();
  if (o.dims.size() != 3) throw Error(ErrorCode::InvalidArgument, "--dims needs 3 values");
  if (o.expert_step < 1) throw Error(ErrorCode::InvalidArgument, "--expert-step must be >= 1");

  const Volume3D phantom = make_phantom(o.dims[0], o.dims[1], o.dims[2], c.seed);
  const Volume3D labels = make_phantom_labels(o.dims[0], o.dims[1], o.dims[2], c.seed);
  const fs::path dir = output_dir(c);
  save_volume(phantom, dir / "phantom.hdr");
  save_volume(labels, dir / "phantom_labels.hdr", VoxelType::UInt16);
  std::ofstream names(dir / "regions.csv");
  names << "id,name\n";
  for (const auto &[id, name] : PhantomModel::region_names()) names << id << ',' << name << '\n';
  if (!names) throw Error(ErrorCode::IoError, "cannot write regions.csv");

  out << "checksum=" << hex(checksum(load_volume(dir / "phantom.hdr")));
  if (o.perturb) {
    const PerturbedVolume exp = perturb_slices(phantom, &labels, o.perturbation, c.seed);
    save_volume(exp.volume, dir / "experimental.hdr");
    save_volume(*exp.labels, dir / "experimental_labels.hdr", VoxelType::UInt16);
    ExpertPairs pairs;
    pairs.provenance = "phantom slice identity";
    for (int z = 0; z < o.dims[2]; z += o.expert_step) pairs.pairs.emplace_back(z, z);
    save_expert_pairs(pairs, dir / "expert_pairs.csv");
    out << " experimental_checksum=" << hex(checksum(load_volume(dir / "experimental.hdr")));
  }
  out << '\n';
  return kExitOk;
}

}  // namespace

int run(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
  Options o;
  CLI::App app{"Estimate the antero-posterior position of a coronal slice in a 3D atlas"};
  app.name("slicefinder");
  app.fallthrough();
  app.require_subcommand(1);
  app.set_config("--config", "", "Flat `key = value` file; command-line flags win");
  app.allow_config_extras(CLI::config_extras_mode::error);

  auto *workers_opt = app.add_option("--workers", o.workers,
                                     "Worker threads (default: $SLICEFINDER_WORKERS or 1)");
  app.add_option("--bins", o.bins, "NMI histogram bins per axis");
  app.add_option("--levels", o.reg.pyramid_levels, "Pyramid levels");
  app.add_option("--block-size", o.reg.block_size, "Block side in pixels");
  app.add_option("--block-stride", o.reg.block_stride, "Block stride in pixels");
  app.add_option("--search-radius", o.reg.search_radius, "Search radius in pixels per level");
  app.add_option("--variance-keep", o.reg.variance_keep_fraction,
                 "Fraction of highest-variance blocks kept");
  app.add_option("--lts-keep", o.reg.lts_keep_fraction, "Fraction of correspondences kept");
  app.add_option("--iterations", o.reg.iterations_per_level, "Iterations per level");
  app.add_option("--strategy", o.strategy, "rigid|affine|mean")
      ->check(CLI::IsMember({"rigid", "affine", "mean"}));
  app.add_option("--out", o.out, "Output directory");
  app.add_option("--seed", o.seed, "Seed for synthetic data");
  app.add_option("--z-range", o.z_range, "Template index interval a:b");

  auto *reg = app.add_subcommand("register", "Register one image pair");
  reg->add_option("--ref", o.ref, "Reference image (PGM)")->required();
  reg->add_option("--flt", o.flt, "Floating image (PGM)")->required();
  reg->add_option("--model", o.model, "rigid|affine")
      ->check(CLI::IsMember({"rigid", "affine"}));

  auto *match = app.add_subcommand("match", "Estimate the template slice of one image");
  match->add_option("--slice", o.slice, "Experimental slice (PGM)")->required();
  match->add_option("--template", o.template_path, "Template volume header")->required();

  auto *carto = app.add_subcommand("cartography", "NMI cartography of two volumes");
  carto->add_option("--exp", o.exp, "Experimental volume header")->required();
  carto->add_option("--template", o.template_path, "Template volume header")->required();

  auto *eval = app.add_subcommand("evaluate", "Validate a cartography against expert pairs");
  eval->add_option("--cartography", o.cartography_dir,
                   "Directory holding the cartography CSVs (default: --out)");
  eval->add_option("--expert", o.expert, "Expert pairs CSV (s_e,s_t_expert)")->required();
  eval->add_option("--exp-labels", o.exp_labels, "Experimental label volume");
  eval->add_option("--template-labels", o.template_labels, "Template label volume");
  eval->add_option("--transforms", o.transforms, "Best transforms CSV");
  eval->add_option("--slices", o.slices, "Experimental slices scored with Dice");
  eval->add_option("--regions", o.regions, "Region identifiers scored with Dice");

  auto *tilt = app.add_subcommand("tilt", "Re-slice a volume with tilted cutting planes");
  tilt->add_option("--in", o.in, "Input volume header")->required();
  tilt->add_option("--theta", o.theta, "Degrees about the left-right axis");
  tilt->add_option("--phi", o.phi, "Degrees about the infero-superior axis");
  tilt->add_option("--labels", o.labels, "Label volume tilted alongside");

  auto *phantom = app.add_subcommand("phantom", "Write the synthetic phantom");
  phantom->add_option("--dims", o.dims, "nx ny nz")->expected(3);
  phantom->add_flag("--perturb", o.perturb,
                    "Also write a per-slice perturbed experimental volume");
  phantom->add_option("--max-angle", o.perturbation.max_angle_deg, "Perturbation angle bound");
  phantom->add_option("--max-shift", o.perturbation.max_shift_px, "Perturbation shift bound");
  phantom->add_option("--noise", o.perturbation.noise_fraction,
                      "Noise sigma as a fraction of the intensity range");
  phantom->add_option("--expert-step", o.expert_step, "Spacing of the written expert pairs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  if (workers_opt->count() == 0) {
    if (const char *env = std::getenv("SLICEFINDER_WORKERS")) {
      const std::string text = env;
      int value = 0;
      const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
      if (ec != std::errc{} || end != text.data() + text.size()) {
        err << "SLICEFINDER_WORKERS: not an integer: " << text << '\n';
        return kExitUsage;
      }
      o.workers = value;
    }
  }
  if (o.workers < 1) {
    err << "--workers: must be at least 1\n";
    return kExitUsage;
  }

  try {
    if (reg->parsed()) return cmd_register(o, out);
    if (match->parsed()) return cmd_match(o, out, err);
    if (carto->parsed()) return cmd_cartography(o, out, err);
    if (eval->parsed()) return cmd_evaluate(o, out);
    if (tilt->parsed()) return cmd_tilt(o, out);
    if (phantom->parsed()) return cmd_phantom(o, out);
  } catch (const Error &e) {
    err << "slicefinder: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception &e) {
    err << "slicefinder: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace slicefinder::cli
