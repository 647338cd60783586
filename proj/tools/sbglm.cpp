// sbglm: command-line front end for the spatial Bayesian GLM pipeline.
//
// Exit codes: 0 success, 2 usage, 3 data (I/O, parsing, shapes), 4 numerical.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sbglm/classical.hpp"
#include "sbglm/error.hpp"
#include "sbglm/excursions.hpp"
#include "sbglm/group.hpp"
#include "sbglm/io.hpp"
#include "sbglm/parallel.hpp"
#include "sbglm/phantom.hpp"
#include "sbglm/pipeline.hpp"

namespace fs = std::filesystem;
using namespace sbglm;

namespace {

constexpr int kUsage = 2, kData = 3, kNumerical = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw UsageError(what);
}

std::string num(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

// ---------------------------------------------------------------------------
// shared option groups

struct Common {
  std::string out;
  unsigned workers = 0;
  Seed seed = 1;
};

struct GeometryArgs {
  std::string mask;      // lattice mask file; empty with no mesh: built-in phantom mask
  std::string mesh;      // OFF mesh
  std::string interior;  // sidecar flags
  double fov = 192.0;
  int layers = 2;

  void add(CLI::App* app) {
    app->add_option("--mask", mask, "lattice mask file (default: built-in phantom mask)");
    app->add_option("--mesh", mesh, "OFF mesh (with --interior) instead of a lattice mask");
    app->add_option("--interior", interior, "interior flag sidecar for --mesh");
    app->add_option("--fov", fov, "field of view in mm for lattice masks")->check(CLI::PositiveNumber);
    app->add_option("--boundary-layers", layers, "mesh extension layers around a lattice mask")->check(CLI::Range(0, 8));
  }

  bool lattice() const { return mesh.empty(); }

  LatticeMask lattice_mask() const { return mask.empty() ? default_phantom_mask() : read_mask(mask); }

  Geometry geometry() const {
    if (!lattice()) {
      require(!interior.empty(), "--mesh needs --interior");
      return make_geometry(read_off(mesh, interior));
    }
    return lattice_geometry(lattice_mask(), fov, layers);
  }
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ','))
    if (!tok.empty()) out.push_back(tok);
  return out;
}

std::vector<SubjectFit> load_fits(const std::string& list) {
  std::vector<SubjectFit> fits;
  for (const auto& d : split_list(list)) fits.push_back(load_fit(d));
  require(!fits.empty(), "--fits needs at least one fit directory");
  return fits;
}

ExcursionType parse_type(const std::string& s) {
  if (s == "positive") return ExcursionType::Positive;
  if (s == "negative") return ExcursionType::Negative;
  throw UsageError("unknown excursion type: " + s);
}

// File stem fragment for a numeric parameter: 0.01 -> "0.01", -1 -> "m1".
std::string tag(double v) {
  std::string s = num(v);
  if (!s.empty() && s[0] == '-') s = "m" + s.substr(1);
  return s;
}

fs::path out_dir(const Common& c) {
  require(!c.out.empty(), "an output directory is required (--out or SBGLM_OUT_DIR)");
  std::error_code ec;
  fs::create_directories(c.out, ec);
  if (ec) throw Error(Errc::Io, "cannot create " + c.out);
  return fs::path(c.out);
}

// ---------------------------------------------------------------------------
// subcommands

struct SimulateArgs {
  std::string mask;
  double amplitude = 1.0, ar_phi = 0.3, noise_sd = 1.0, truncation = 1e-6;
  int n_time = 200;
};

void run_simulate(const Common& c, const SimulateArgs& a) {
  const auto dir = out_dir(c);
  PhantomConfig cfg;
  if (!a.mask.empty()) cfg.mask = read_mask(a.mask);
  cfg.amplitude = a.amplitude;
  cfg.ar_phi = a.ar_phi;
  cfg.noise_sd = a.noise_sd;
  cfg.truncation = a.truncation;
  cfg.n_time = a.n_time;
  const Phantom ph = build_phantom(cfg);
  write_matrix(simulate(ph, c.seed), (dir / "y.mat").string());
  write_matrix(ph.x, (dir / "tasks.mat").string());
  write_stimulus({cfg.task1, cfg.task2}, (dir / "stimulus.txt").string());
  write_mask(ph.mask, (dir / "mask.txt").string());
  CsvTable truth;
  truth.header = {"vertex_id", "beta0", "effective_1", "effective_2", "truth_1", "truth_2"};
  const Vec e1 = ph.effective(0), e2 = ph.effective(1);
  const auto t1 = ph.truth(0), t2 = ph.truth(1);
  for (int v = 0; v < ph.n_locations(); ++v) {
    const auto u = static_cast<std::size_t>(v);
    std::ostringstream b0, b1, b2;
    b0 << std::setprecision(17) << ph.beta0[v];
    b1 << std::setprecision(17) << e1[v];
    b2 << std::setprecision(17) << e2[v];
    truth.rows.push_back({std::to_string(v), b0.str(), b1.str(), b2.str(), t1[u] ? "1" : "0", t2[u] ? "1" : "0"});
  }
  write_csv(truth, (dir / "truth.csv").string());
}

struct SubjectArgs {
  std::string data;  // directory holding y.mat / tasks.mat / mask.txt
  std::string y, x, z;
  int ar_order = 1;

  void add(CLI::App* app) {
    app->add_option("--data", data, "simulate output directory (y.mat, tasks.mat, mask.txt)");
    app->add_option("--y", y, "T x N data matrix");
    app->add_option("--x", x, "T x K task regressors");
    app->add_option("--z", z, "T x J nuisance regressors (default: intercept)");
    app->add_option("--ar-order", ar_order, "prewhitening AR order (0: none)")->check(CLI::Range(0, 10));
  }

  SubjectInput input(GeometryArgs& geo) const {
    std::string yp = y, xp = x;
    if (!data.empty()) {
      if (yp.empty()) yp = (fs::path(data) / "y.mat").string();
      if (xp.empty()) xp = (fs::path(data) / "tasks.mat").string();
      if (geo.mask.empty() && geo.mesh.empty() && fs::exists(fs::path(data) / "mask.txt"))
        geo.mask = (fs::path(data) / "mask.txt").string();
    }
    require(!yp.empty() && !xp.empty(), "data needs --data or both --y and --x");
    SubjectInput in{read_matrix(yp), read_matrix(xp), Mat()};
    in.z = z.empty() ? intercept(static_cast<int>(in.y.rows())) : read_matrix(z);
    if (!in.y.allFinite() || !in.x.allFinite() || !in.z.allFinite())
      throw Error(Errc::Parse, "input matrices contain non-finite values");
    return in;
  }
};

struct FitArgs {
  std::string strategy = "grid";
  double grid_step = 1.0, grid_drop = 2.5;
  HyperPrior prior;
};

void run_fit_subject(const Common& c, GeometryArgs geo, const SubjectArgs& s, const FitArgs& f) {
  const auto dir = out_dir(c);
  const SubjectInput in = s.input(geo);
  const Geometry g = geo.geometry();
  if (in.y.cols() != g.projector.rows())
    throw Error(Errc::DimensionMismatch, "data has " + std::to_string(in.y.cols()) + " locations, geometry " +
                                             std::to_string(g.projector.rows()));
  const PreparedSubject prepared = prepare_subject(in, s.ar_order);
  FitOptions opt;
  opt.grid.strategy = parse_strategy(f.strategy);
  opt.grid.step = f.grid_step;
  opt.grid.drop = f.grid_drop;
  opt.workers = c.workers;
  const SubjectFit fit = fit_subject(make_model(g, prepared, f.prior), opt);
  save_fit(fit, (dir / "fit").string());
  for (int k = 0; k < fit.model->n_fields(); ++k)
    write_mixture_summary(fit.field_mean(k), fit.field_variance(k),
                          (dir / ("summary_field" + std::to_string(k) + ".csv")).string());
}

struct ExcursionArgs {
  std::string fit;
  std::vector<int> fields;
  std::vector<double> gammas{0.0}, alphas{0.05};
  int n_mc = 100000;
  std::string type = "positive";

  void add(CLI::App* app, bool with_fit = true) {
    if (with_fit) app->add_option("--fit", fit, "fit directory written by fit-subject")->required();
    app->add_option("--gamma", gammas, "activation thresholds (comma separated)")->delimiter(',');
    app->add_option("--alpha", alphas, "excursion levels (comma separated)")->delimiter(',')->check(CLI::Range(0.0, 1.0));
    app->add_option("--n-mc", n_mc, "Monte Carlo draws per excursion function")->check(CLI::Range(2, 100000000));
    app->add_option("--type", type, "positive | negative");
  }

  ExcursionOptions options(const Common& c) const {
    ExcursionOptions o;
    o.n_mc = n_mc;
    o.seed = c.seed;
    o.type = parse_type(type);
    o.workers = c.workers;
    return o;
  }
};

void run_excursions(const Common& c, const ExcursionArgs& a) {
  const auto dir = out_dir(c);
  const SubjectFit fit = load_fit(a.fit);
  std::vector<int> fields = a.fields;
  if (fields.empty())
    for (int k = 0; k < fit.model->n_fields(); ++k) fields.push_back(k);
  for (int k : fields) require(k >= 0 && k < fit.model->n_fields(), "--field out of range");
  const auto opt = a.options(c);
  for (double gamma : a.gammas) {
    const auto res = excursion_fields(fit, fields, gamma, opt);
    for (std::size_t q = 0; q < fields.size(); ++q)
      for (double alpha : a.alphas)
        write_excursion_csv(threshold(res[q], alpha), (dir / ("excursions_field" + std::to_string(fields[q]) +
                                                              "_gamma" + tag(gamma) + "_alpha" + tag(alpha) + ".csv"))
                                                          .string());
  }
}

struct GroupArgs {
  std::string fits;
  int field = 0;
  int n_samples = 50;
};

void run_group(const Common& c, const GroupArgs& g, const ExcursionArgs& e) {
  const auto dir = out_dir(c);
  const auto fits = load_fits(g.fits);
  require(g.field >= 0 && g.field < fits.front().model->n_fields(), "--field out of range");
  GroupOptions go;
  go.n_samples = g.n_samples;
  go.seed = c.seed;
  go.workers = c.workers;
  const auto post =
      group_posterior(fits, averaging_contrast(static_cast<int>(fits.size()), fits.front().model->n_locations(), g.field), go);
  write_mixture_summary(post.mean, post.variance, (dir / "group_summary.csv").string());
  const auto opt = e.options(c);
  for (double gamma : e.gammas)
    for (double alpha : e.alphas)
      write_excursion_csv(group_excursions(fits, post, gamma, alpha, opt),
                          (dir / ("group_excursions_gamma" + tag(gamma) + "_alpha" + tag(alpha) + ".csv")).string());
}

struct TwoLevelArgs {
  std::string fits;
  int field = 0;
  int n_samples = 50;
  std::string mode = "plugin";
  std::string strategy = "eb";
};

void run_two_level(const Common& c, const TwoLevelArgs& t, const ExcursionArgs& e) {
  const auto dir = out_dir(c);
  const auto fits = load_fits(t.fits);
  require(t.field >= 0 && t.field < fits.front().model->n_fields(), "--field out of range");
  TwoLevelOptions opt;
  opt.mode = parse_two_level_mode(t.mode);
  opt.n_samples = t.n_samples;
  opt.seed = c.seed;
  opt.fit.grid.strategy = parse_strategy(t.strategy);
  opt.fit.workers = c.workers;
  opt.excursion = e.options(c);
  bool summary = false;
  for (double gamma : e.gammas) {
    const auto res = two_level_fit(fits, t.field, gamma, opt);
    if (!summary) {
      write_mixture_summary(res.mean, res.variance, (dir / "two_level_summary.csv").string());
      summary = true;
    }
    for (double alpha : e.alphas)
      write_excursion_csv(threshold(res.excursion, alpha),
                          (dir / ("two_level_excursions_gamma" + tag(gamma) + "_alpha" + tag(alpha) + ".csv")).string());
  }
}

struct ClassicalArgs {
  ClassicalOptions opt;
};

void run_classical_cmd(const Common& c, GeometryArgs geo, const SubjectArgs& s, ClassicalArgs a) {
  const auto dir = out_dir(c);
  const SubjectInput in = s.input(geo);
  SpMat kernel;
  if (a.opt.fwhm > 0.0) {
    if (geo.lattice()) {
      kernel = smoothing_kernel(geo.lattice_mask(), geo.fov, a.opt.fwhm);
    } else {
      require(!geo.interior.empty(), "--mesh needs --interior");
      kernel = smoothing_kernel(read_off(geo.mesh, geo.interior), a.opt.fwhm);
    }
    if (kernel.rows() != in.y.cols()) throw Error(Errc::DimensionMismatch, "data and geometry differ in size");
  }
  a.opt.ar_order = s.ar_order;
  a.opt.seed = c.seed;
  const auto res = run_classical(in, kernel, a.opt);
  for (Eigen::Index k = 0; k < in.x.cols(); ++k) {
    const auto u = static_cast<std::size_t>(k);
    write_classical_csv(res.fit, static_cast<int>(k), res.fdr[u], res.fwer.empty() ? std::vector<bool>{} : res.fwer[u].rejected,
                        (dir / ("classical_task" + std::to_string(k) + ".csv")).string());
  }
}

struct ScoreArgs {
  std::string map, column = "F", truth;
  int task = 1;
  std::string decision;  // 0/1 column scored for FPR / FNR
};

void run_score(const Common& c, const ScoreArgs& a) {
  const auto dir = out_dir(c);
  const auto map = read_csv(a.map);
  const auto truth_table = read_csv(a.truth);
  const Vec t = truth_table.numeric("truth_" + std::to_string(a.task));
  std::vector<bool> truth;
  for (double v : t) truth.push_back(v != 0.0);
  const Vec stat = map.numeric(a.column);
  if (stat.size() != t.size()) throw Error(Errc::DimensionMismatch, "map and truth differ in length");
  std::ostringstream report;
  report << std::setprecision(10) << "map = " << a.map << "\ncolumn = " << a.column << "\ntask = " << a.task
         << "\nauc = " << roc(stat, truth).auc << '\n';
  if (!a.decision.empty()) {
    const Vec d = map.numeric(a.decision);
    std::vector<bool> dec;
    for (double v : d) dec.push_back(v != 0.0);
    const auto r = error_rates(dec, truth);
    report << "decision = " << a.decision << "\nfpr = " << r.fpr << "\nfnr = " << r.fnr << '\n';
  }
  std::ofstream(dir / "score.txt") << report.str();
  std::cout << report.str();
}

struct ExportArgs {
  std::string csv, column = "F", output, colormap = "gray";
  double lo = 0.0, hi = 0.0;
};

void run_export(const Common& c, const GeometryArgs& geo, const ExportArgs& a) {
  const auto dir = out_dir(c);
  const Vec values = read_csv(a.csv).numeric(a.column);
  if (geo.lattice()) {
    const std::string path = (dir / (a.output.empty() ? a.column + ".ppm" : a.output)).string();
    write_ppm(values, geo.lattice_mask(), path, parse_colormap(a.colormap), a.lo, a.hi);
  } else {
    require(!geo.interior.empty(), "--mesh needs --interior");
    const auto mesh = read_off(geo.mesh, geo.interior);
    if (values.size() != mesh.n_interior()) throw Error(Errc::DimensionMismatch, "values do not match the mesh");
    write_vertex_csv(values, (dir / (a.output.empty() ? a.column + ".csv" : a.output)).string());
  }
}

// ---------------------------------------------------------------------------
// configuration

// Config-file entries become "--key=value" arguments placed before the
// command line, skipping keys the command line sets itself. Empty values
// mean "unset" (the echo writes them for options left at an empty default).
std::vector<std::string> merge_config(const std::vector<std::string>& args) {
  std::string config;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config = args[i].substr(9);
  }
  if (config.empty() || args.empty()) return args;
  std::set<std::string> given;
  for (const auto& a : args)
    if (a.rfind("--", 0) == 0) given.insert(a.substr(2, a.find('=') == std::string::npos ? std::string::npos : a.find('=') - 2));
  std::map<std::string, std::string> kv;
  for (auto& [k, v] : read_key_values(config)) kv[k] = v;  // later lines win
  std::vector<std::string> out{args.front()};               // subcommand first
  for (const auto& [k, v] : kv)
    if (!given.count(k) && k != "config" && !v.empty()) out.push_back("--" + k + "=" + v);
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

void echo_config(const CLI::App& cmd, const Common& c) {
  if (c.out.empty() || !fs::exists(c.out)) return;
  std::ofstream out(fs::path(c.out) / (cmd.get_name() + ".config.txt"));
  out << "# resolved configuration of sbglm " << cmd.get_name() << '\n';
  for (const CLI::Option* o : cmd.get_options()) {
    if (o->get_name() == "--help" || o->get_name() == "--config" || o->get_lnames().empty()) continue;
    std::string value;
    const auto& res = o->results();
    if (!res.empty()) {
      for (std::size_t i = 0; i < res.size(); ++i) value += (i ? "," : "") + res[i];
    } else {
      value = o->get_default_str();
    }
    out << o->get_lnames().front() << " = " << value << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial Bayesian GLM for functional imaging"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.fallthrough(false);

  Common common;
  if (const char* env = std::getenv("SBGLM_OUT_DIR")) common.out = env;
  if (const char* env = std::getenv("SBGLM_WORKERS")) {
    try {
      common.workers = static_cast<unsigned>(std::stoul(env));
    } catch (const std::exception&) {
      std::cerr << "SBGLM_WORKERS must be a non-negative integer\n";
      return kUsage;
    }
  }
  std::string config;
  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--out", common.out, "output directory (env SBGLM_OUT_DIR)");
    cmd->add_option("--workers", common.workers, "worker threads, 0 = all cores (env SBGLM_WORKERS)");
    cmd->add_option("--seed", common.seed, "random seed");
    cmd->add_option("--config", config, "key = value file; command-line flags override it");
  };

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "simulate the phantom dataset");
  add_common(c_sim);
  c_sim->add_option("--mask", sim.mask, "lattice mask file (default: built-in)");
  c_sim->add_option("--amplitude", sim.amplitude, "activation peak height")->check(CLI::NonNegativeNumber);
  c_sim->add_option("--ar-phi", sim.ar_phi, "AR(1) noise coefficient")->check(CLI::Range(-0.99, 0.99));
  c_sim->add_option("--noise-sd", sim.noise_sd, "marginal noise sd")->check(CLI::NonNegativeNumber);
  c_sim->add_option("--truncation", sim.truncation, "bump truncation relative to the peak")->check(CLI::Range(0.0, 1.0));
  c_sim->add_option("--n-time", sim.n_time, "number of volumes")->check(CLI::Range(20, 100000));

  GeometryArgs geo;
  SubjectArgs subj;
  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit-subject", "fit the spatial Bayesian GLM to one subject");
  add_common(c_fit);
  geo.add(c_fit);
  subj.add(c_fit);
  c_fit->add_option("--strategy", fit.strategy, "grid | eb");
  c_fit->add_option("--grid-step", fit.grid_step, "theta grid spacing in standard deviations")->check(CLI::PositiveNumber);
  c_fit->add_option("--grid-drop", fit.grid_drop, "log-posterior drop bounding the grid")->check(CLI::PositiveNumber);
  c_fit->add_option("--prior-log-kappa-mean", fit.prior.log_kappa_mean);
  c_fit->add_option("--prior-log-kappa-sd", fit.prior.log_kappa_sd)->check(CLI::PositiveNumber);
  c_fit->add_option("--prior-log-tau-mean", fit.prior.log_tau_mean);
  c_fit->add_option("--prior-log-tau-sd", fit.prior.log_tau_sd)->check(CLI::PositiveNumber);
  c_fit->add_option("--prior-xi-shape", fit.prior.xi_shape)->check(CLI::PositiveNumber);
  c_fit->add_option("--prior-xi-rate", fit.prior.xi_rate)->check(CLI::PositiveNumber);
  c_fit->add_option("--prior-ar-precision", fit.prior.ar_precision)->check(CLI::PositiveNumber);

  ExcursionArgs exc;
  auto* c_exc = app.add_subcommand("excursions", "joint posterior probability maps of a subject fit");
  add_common(c_exc);
  exc.add(c_exc);
  c_exc->add_option("--field", exc.fields, "task fields (comma separated; default all)")->delimiter(',');

  GroupArgs grp;
  ExcursionArgs grp_exc;
  auto* c_grp = app.add_subcommand("group", "joint group average over subject fits");
  add_common(c_grp);
  c_grp->add_option("--fits", grp.fits, "comma-separated fit directories")->required();
  c_grp->add_option("--field", grp.field, "task field");
  c_grp->add_option("--n-samples", grp.n_samples, "theta draws")->check(CLI::Range(1, 100000));
  grp_exc.add(c_grp, false);

  TwoLevelArgs two;
  ExcursionArgs two_exc;
  auto* c_two = app.add_subcommand("two-level", "second-level spatial model on subject estimates");
  add_common(c_two);
  c_two->add_option("--fits", two.fits, "comma-separated fit directories")->required();
  c_two->add_option("--field", two.field, "task field");
  c_two->add_option("--mode", two.mode, "plugin | sampling");
  c_two->add_option("--n-samples", two.n_samples, "posterior draws in sampling mode")->check(CLI::Range(1, 100000));
  c_two->add_option("--strategy", two.strategy, "grid | eb for the second-level fits");
  two_exc.add(c_two, false);

  SubjectArgs csubj;
  GeometryArgs cgeo;
  ClassicalArgs cls;
  auto* c_cls = app.add_subcommand("classical", "massive univariate GLM with BY FDR and max-t FWER");
  add_common(c_cls);
  cgeo.add(c_cls);
  csubj.add(c_cls);
  c_cls->add_option("--fwhm", cls.opt.fwhm, "smoothing FWHM in mm (0: none)")->check(CLI::NonNegativeNumber);
  c_cls->add_option("--q", cls.opt.q, "FDR level")->check(CLI::Range(0.0, 1.0));
  c_cls->add_option("--alpha", cls.opt.alpha, "FWER level")->check(CLI::Range(0.0, 1.0));
  c_cls->add_option("--n-perm", cls.opt.n_perm, "sign-flip permutations (0: skip max-t)")->check(CLI::Range(0, 1000000));

  ScoreArgs sc;
  auto* c_sc = app.add_subcommand("score", "ROC AUC and error rates of a map against phantom truth");
  add_common(c_sc);
  c_sc->add_option("--map", sc.map, "map CSV")->required();
  c_sc->add_option("--column", sc.column, "statistic column ranked for the ROC");
  c_sc->add_option("--truth", sc.truth, "truth.csv written by simulate")->required();
  c_sc->add_option("--task", sc.task, "task number (1 or 2)")->check(CLI::Range(1, 2));
  c_sc->add_option("--decision", sc.decision, "0/1 column scored for FPR / FNR");

  ExportArgs ex;
  GeometryArgs egeo;
  auto* c_ex = app.add_subcommand("export-map", "render a map column as a pixmap (lattice) or vertex CSV (mesh)");
  add_common(c_ex);
  egeo.add(c_ex);
  c_ex->add_option("--csv", ex.csv, "map CSV")->required();
  c_ex->add_option("--column", ex.column, "column to render");
  c_ex->add_option("--output", ex.output, "file name inside --out");
  c_ex->add_option("--colormap", ex.colormap, "gray | diverging");
  c_ex->add_option("--lo", ex.lo, "value mapped to the low end (lo == hi: data range)");
  c_ex->add_option("--hi", ex.hi, "value mapped to the high end");

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = merge_config(args);
    std::reverse(args.begin(), args.end());  // CLI11 consumes the vector from the back
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  } catch (const Error& e) {  // unreadable config file
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }

  const CLI::App* cmd = app.get_subcommands().front();
  try {
    set_default_workers(common.workers);
    const std::string name = cmd->get_name();
    if (name == "simulate") run_simulate(common, sim);
    else if (name == "fit-subject") run_fit_subject(common, geo, subj, fit);
    else if (name == "excursions") run_excursions(common, exc);
    else if (name == "group") run_group(common, grp, grp_exc);
    else if (name == "two-level") run_two_level(common, two, two_exc);
    else if (name == "classical") run_classical_cmd(common, cgeo, csubj, cls);
    else if (name == "score") run_score(common, sc);
    else if (name == "export-map") run_export(common, egeo, ex);
    echo_config(*cmd, common);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n\n" << cmd->help();
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    if (e.code() == Errc::InvalidArgument) return kUsage;
    return is_numerical(e.code()) ? kNumerical : kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return 0;
}
