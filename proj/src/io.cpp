#include "sbglm/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "sbglm/error.hpp"

namespace sbglm {

namespace {

static_assert(std::endian::native == std::endian::little, "binary matrix format assumes a little-endian host");

std::ifstream open_in(const std::string& path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw Error(Errc::Io, "cannot open " + path);
  return in;
}

std::ofstream open_out(const std::string& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot write " + path);
  out << std::setprecision(17);
  return out;
}

void check_written(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw Error(Errc::Io, "write failed: " + path);
}

double to_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = b + s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(*b))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(e[-1]))) --e;
  if (b == e) throw Error(Errc::Parse, where + ": empty number");
  // from_chars rejects a leading '+' and the textual non-finite values we may write
  if (*b == '+') ++b;
  const std::string_view t(b, static_cast<std::size_t>(e - b));
  if (t == "nan" || t == "-nan") return std::numeric_limits<double>::quiet_NaN();
  if (t == "inf") return std::numeric_limits<double>::infinity();
  if (t == "-inf") return -std::numeric_limits<double>::infinity();
  const auto r = std::from_chars(b, e, v);
  if (r.ec != std::errc() || r.ptr != e) throw Error(Errc::Parse, where + ": not a number: " + s);
  return v;
}

long long to_int(const std::string& s, const std::string& where) {
  long long v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw Error(Errc::Parse, where + ": not an integer: " + s);
  return v;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Next line that is neither empty nor a '#' comment.
bool content_line(std::istream& in, std::string& line) {
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (!t.empty() && t[0] != '#') {
      line = t;
      return true;
    }
  }
  return false;
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

}  // namespace

void write_matrix(const Mat& a, const std::string& path) {
  auto out = open_out(path, true);
  out << "sbglm-matrix " << a.rows() << ' ' << a.cols() << " col-major float64-le\n";
  out.write(reinterpret_cast<const char*>(a.data()), static_cast<std::streamsize>(sizeof(double) * a.size()));
  check_written(out, path);
}

Mat read_matrix(const std::string& path) {
  auto in = open_in(path, true);
  std::string header;
  if (!std::getline(in, header)) throw Error(Errc::Parse, path + ": missing header");
  std::istringstream h(header);
  std::string magic, layout, type;
  long long rows = -1, cols = -1;
  h >> magic >> rows >> cols >> layout >> type;
  if (magic != "sbglm-matrix" || rows < 0 || cols < 0 || layout != "col-major" || type != "float64-le")
    throw Error(Errc::Parse, path + ": bad matrix header: " + header);
  Mat a(rows, cols);
  in.read(reinterpret_cast<char*>(a.data()), static_cast<std::streamsize>(sizeof(double) * a.size()));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(double) * a.size()))
    throw Error(Errc::Parse, path + ": truncated matrix data");
  if (in.peek() != std::char_traits<char>::eof()) throw Error(Errc::Parse, path + ": trailing bytes after matrix");
  return a;
}

void write_sparse(const SpMat& a, const std::string& path) {
  auto out = open_out(path);
  out << "sbglm-sparse " << a.rows() << ' ' << a.cols() << ' ' << a.nonZeros() << '\n';
  for (int k = 0; k < a.outerSize(); ++k)
    for (SpMat::InnerIterator it(a, k); it; ++it) out << it.row() << ' ' << it.col() << ' ' << it.value() << '\n';
  check_written(out, path);
}

SpMat read_sparse(const std::string& path) {
  auto in = open_in(path);
  std::string line;
  if (!content_line(in, line)) throw Error(Errc::Parse, path + ": missing header");
  std::istringstream h(line);
  std::string magic;
  long long rows = -1, cols = -1, nnz = -1;
  h >> magic >> rows >> cols >> nnz;
  if (magic != "sbglm-sparse" || rows < 0 || cols < 0 || nnz < 0)
    throw Error(Errc::Parse, path + ": bad sparse header: " + line);
  std::vector<Triplet> t;
  t.reserve(static_cast<std::size_t>(nnz));
  while (content_line(in, line)) {
    std::istringstream s(line);
    std::string r, c, v;
    if (!(s >> r >> c >> v)) throw Error(Errc::Parse, path + ": bad triplet: " + line);
    const auto i = to_int(r, path), j = to_int(c, path);
    if (i < 0 || i >= rows || j < 0 || j >= cols) throw Error(Errc::Parse, path + ": triplet index out of range");
    t.emplace_back(static_cast<int>(i), static_cast<int>(j), to_double(v, path));
  }
  if (static_cast<long long>(t.size()) != nnz) throw Error(Errc::Parse, path + ": triplet count differs from header");
  SpMat a(rows, cols);
  a.setFromTriplets(t.begin(), t.end());
  return a;
}

void write_off(const TriMesh& mesh, const std::string& off_path, const std::string& interior_path) {
  auto out = open_out(off_path);
  out << "OFF\n" << mesh.n_vertices() << ' ' << mesh.n_triangles() << " 0\n";
  for (const auto& v : mesh.vertices) out << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& t : mesh.triangles) out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  check_written(out, off_path);
  auto side = open_out(interior_path);
  for (bool b : mesh.interior) side << (b ? 1 : 0) << '\n';
  check_written(side, interior_path);
}

TriMesh read_off(const std::string& off_path, const std::string& interior_path) {
  auto in = open_in(off_path);
  std::string line;
  if (!content_line(in, line) || line != "OFF") throw Error(Errc::Parse, off_path + ": missing OFF header");
  if (!content_line(in, line)) throw Error(Errc::Parse, off_path + ": missing counts");
  long long nv = -1, nf = -1, ne = 0;
  {
    std::istringstream s(line);
    if (!(s >> nv >> nf >> ne) || nv < 0 || nf < 0) throw Error(Errc::Parse, off_path + ": bad counts: " + line);
  }
  std::vector<Eigen::Vector3d> v(static_cast<std::size_t>(nv));
  for (auto& p : v) {
    if (!content_line(in, line)) throw Error(Errc::Parse, off_path + ": missing vertex lines");
    std::istringstream s(line);
    std::string x, y, z;
    if (!(s >> x >> y >> z)) throw Error(Errc::Parse, off_path + ": bad vertex: " + line);
    p = {to_double(x, off_path), to_double(y, off_path), to_double(z, off_path)};
  }
  std::vector<std::array<int, 3>> tri(static_cast<std::size_t>(nf));
  for (auto& t : tri) {
    if (!content_line(in, line)) throw Error(Errc::Parse, off_path + ": missing face lines");
    std::istringstream s(line);
    int n = 0;
    if (!(s >> n >> t[0] >> t[1] >> t[2]) || n != 3) throw Error(Errc::Parse, off_path + ": only triangles supported");
  }
  auto side = open_in(interior_path);
  std::vector<bool> interior;
  while (content_line(side, line)) {
    if (line != "0" && line != "1") throw Error(Errc::Parse, interior_path + ": flags must be 0 or 1");
    interior.push_back(line == "1");
  }
  if (static_cast<long long>(interior.size()) != nv)
    throw Error(Errc::Parse, interior_path + ": flag count differs from the vertex count");
  return build_mesh(std::move(v), std::move(tri), std::move(interior));
}

std::vector<std::vector<StimulusBlock>> read_stimulus(const std::string& path) {
  auto in = open_in(path);
  std::vector<std::vector<StimulusBlock>> tasks;
  std::string line;
  while (content_line(in, line)) {
    std::istringstream s(line);
    std::vector<double> nums;
    std::string tok;
    while (s >> tok) nums.push_back(to_double(tok, path));
    if (nums.empty() || nums.size() % 2 != 0) throw Error(Errc::Parse, path + ": expected onset/duration pairs");
    std::vector<StimulusBlock> blocks;
    for (std::size_t i = 0; i < nums.size(); i += 2) {
      if (nums[i] < 0.0 || nums[i + 1] < 0.0) throw Error(Errc::Parse, path + ": negative onset or duration");
      blocks.push_back({nums[i], nums[i + 1]});
    }
    tasks.push_back(std::move(blocks));
  }
  if (tasks.empty()) throw Error(Errc::Parse, path + ": no tasks");
  return tasks;
}

void write_stimulus(const std::vector<std::vector<StimulusBlock>>& tasks, const std::string& path) {
  auto out = open_out(path);
  for (const auto& t : tasks) {
    for (std::size_t i = 0; i < t.size(); ++i) out << (i ? " " : "") << t[i].onset << ' ' << t[i].duration;
    out << '\n';
  }
  check_written(out, path);
}

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw Error(Errc::Parse, "missing column " + name);
  return static_cast<std::size_t>(it - header.begin());
}

Vec CsvTable::numeric(const std::string& name) const {
  const auto c = column(name);
  Vec v(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) v[static_cast<Eigen::Index>(i)] = to_double(rows[i][c], name);
  return v;
}

CsvTable read_csv(const std::string& path) {
  auto in = open_in(path);
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::Parse, path + ": empty csv");
  t.header = split(line, ',');
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto row = split(line, ',');
    if (row.size() != t.header.size()) throw Error(Errc::Parse, path + ": ragged row");
    t.rows.push_back(std::move(row));
  }
  return t;
}

void write_csv(const CsvTable& table, const std::string& path) {
  auto out = open_out(path);
  const auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    out << '\n';
  };
  line(table.header);
  for (const auto& r : table.rows) {
    if (r.size() != table.header.size()) throw Error(Errc::DimensionMismatch, "row width differs from header");
    line(r);
  }
  check_written(out, path);
}

void write_excursion_csv(const ExcursionResult& r, const std::string& path) {
  if (r.marginal.size() != r.F.size() || (!r.active.empty() && static_cast<Eigen::Index>(r.active.size()) != r.F.size()))
    throw Error(Errc::DimensionMismatch, "excursion result columns differ in length");
  CsvTable t;
  t.header = {"vertex_id", "F", "marginal_ppm", "active"};
  for (Eigen::Index i = 0; i < r.F.size(); ++i) {
    const bool a = !r.active.empty() && r.active[static_cast<std::size_t>(i)];
    t.rows.push_back({std::to_string(i), fmt(r.F[i]), fmt(r.marginal[i]), a ? "1" : "0"});
  }
  write_csv(t, path);
}

ExcursionResult read_excursion_csv(const std::string& path) {
  const auto t = read_csv(path);
  ExcursionResult r;
  const Vec id = t.numeric("vertex_id");
  for (Eigen::Index i = 0; i < id.size(); ++i)
    if (id[i] != static_cast<double>(i)) throw Error(Errc::Parse, path + ": vertex ids must be 0..n-1 in order");
  r.F = t.numeric("F");
  r.marginal = t.numeric("marginal_ppm");
  const Vec a = t.numeric("active");
  for (Eigen::Index i = 0; i < a.size(); ++i) r.active.push_back(a[i] != 0.0);
  r.order = rank_locations(r.marginal);
  return r;
}

void write_mixture_summary(const Vec& mean, const Vec& var, const std::string& path) {
  if (mean.size() != var.size()) throw Error(Errc::DimensionMismatch, "mean and variance differ in length");
  CsvTable t;
  t.header = {"vertex_id", "post_mean", "post_var"};
  for (Eigen::Index i = 0; i < mean.size(); ++i) t.rows.push_back({std::to_string(i), fmt(mean[i]), fmt(var[i])});
  write_csv(t, path);
}

void write_classical_csv(const VoxelwiseFit& fit, int column, const std::vector<bool>& fdr,
                         const std::vector<bool>& fwer, const std::string& path) {
  const Eigen::Index n = fit.beta.rows();
  if (column < 0 || column >= fit.beta.cols()) throw Error(Errc::IndexOutOfRange, "task column out of range");
  if (static_cast<Eigen::Index>(fdr.size()) != n || (!fwer.empty() && static_cast<Eigen::Index>(fwer.size()) != n))
    throw Error(Errc::DimensionMismatch, "decision vectors differ from the location count");
  CsvTable t;
  t.header = {"vertex_id", "estimate", "se", "t", "p", "rejected_fdr", "rejected_fwer"};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto u = static_cast<std::size_t>(i);
    t.rows.push_back({std::to_string(i), fmt(fit.beta(i, column)), fmt(fit.se(i, column)), fmt(fit.t(i, column)),
                      fmt(fit.p(i, column)), fdr[u] ? "1" : "0", !fwer.empty() && fwer[u] ? "1" : "0"});
  }
  write_csv(t, path);
}

void write_vertex_csv(const Vec& values, const std::string& path) {
  CsvTable t;
  t.header = {"vertex_id", "value"};
  for (Eigen::Index i = 0; i < values.size(); ++i) t.rows.push_back({std::to_string(i), fmt(values[i])});
  write_csv(t, path);
}

Vec read_vertex_csv(const std::string& path) { return read_csv(path).numeric("value"); }

ColorMap parse_colormap(const std::string& s) {
  if (s == "gray") return ColorMap::Gray;
  if (s == "diverging") return ColorMap::Diverging;
  throw Error(Errc::InvalidArgument, "unknown colormap: " + s);
}

void write_ppm(const Vec& values, const LatticeMask& mask, const std::string& path, ColorMap map, double lo,
               double hi) {
  if (values.size() != mask.count()) throw Error(Errc::DimensionMismatch, "values do not match the mask");
  if (lo == hi && values.size() > 0) {
    lo = values.minCoeff();
    hi = values.maxCoeff();
  }
  const auto cells = mask.in_mask_cells();
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(mask.rows) * mask.cols * 3, 0);
  for (std::size_t v = 0; v < cells.size(); ++v) {
    const double x = values[static_cast<Eigen::Index>(v)];
    // constant maps render mid-scale
    const double u = hi > lo ? std::clamp((x - lo) / (hi - lo), 0.0, 1.0) : 0.5;
    std::array<double, 3> c{u, u, u};
    if (map == ColorMap::Diverging) {
      // blue (0) -> white (0.5) -> red (1)
      c = u < 0.5 ? std::array<double, 3>{2 * u, 2 * u, 1.0} : std::array<double, 3>{1.0, 2 * (1 - u), 2 * (1 - u)};
    }
    const std::size_t px = (static_cast<std::size_t>(cells[v][0]) * mask.cols + cells[v][1]) * 3;
    for (int k = 0; k < 3; ++k) rgb[px + k] = static_cast<std::uint8_t>(std::lround(255.0 * c[k]));
  }
  auto out = open_out(path, true);
  out << "P6\n" << mask.cols << ' ' << mask.rows << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  check_written(out, path);
}

Raster read_ppm(const std::string& path) {
  auto in = open_in(path, true);
  std::string magic;
  int w = -1, h = -1, maxval = -1;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || w < 0 || h < 0 || maxval != 255) throw Error(Errc::Parse, path + ": unsupported pixmap");
  in.get();  // single whitespace before the raster
  Raster r{w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * 3)};
  in.read(reinterpret_cast<char*>(r.rgb.data()), static_cast<std::streamsize>(r.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(r.rgb.size())) throw Error(Errc::Parse, path + ": truncated pixmap");
  return r;
}

std::vector<std::pair<std::string, std::string>> read_key_values(const std::string& path) {
  auto in = open_in(path);
  std::vector<std::pair<std::string, std::string>> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(Errc::Parse, path + ": expected key = value: " + line);
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw Error(Errc::Parse, path + ": empty key");
    kv.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return kv;
}

// ---------------------------------------------------------------------------
// subject fit directories

namespace {

namespace fs = std::filesystem;

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
  return s;
}

std::vector<double> numbers(const std::string& s, const std::string& where) {
  std::vector<double> out;
  if (trim(s).empty()) return out;
  for (const auto& tok : split(s, ',')) out.push_back(to_double(tok, where));
  return out;
}

}  // namespace

void save_fit(const SubjectFit& fit, const std::string& dir) {
  if (!fit.model) throw Error(Errc::InvalidArgument, "subject fit without model");
  const auto& m = *fit.model;
  const fs::path d(dir);
  std::error_code ec;
  fs::create_directories(d, ec);
  if (ec) throw Error(Errc::Io, "cannot create " + dir);

  const auto& p = m.hyperprior();
  const auto& data = m.data();
  {
    auto out = open_out((d / "manifest.txt").string());
    out << "format = sbglm-subject-fit\nversion = 1\n"
        << "n_fields = " << m.n_fields() << "\nn_mesh = " << m.n_mesh() << "\nn_locations = " << m.n_locations()
        << "\nn_points = " << fit.points.size() << "\nn_gram = " << data.gram.size() << "\nyty = " << data.yty
        << "\nn_obs = " << data.n_obs << "\nar_transform = " << join(m.ar_transform()) << "\nprior.xi_shape = "
        << p.xi_shape << "\nprior.xi_rate = " << p.xi_rate << "\nprior.log_kappa_mean = " << p.log_kappa_mean
        << "\nprior.log_kappa_sd = " << p.log_kappa_sd << "\nprior.log_tau_mean = " << p.log_tau_mean
        << "\nprior.log_tau_sd = " << p.log_tau_sd << "\nprior.ar_precision = " << p.ar_precision << '\n';
    check_written(out, (d / "manifest.txt").string());
  }
  write_sparse(m.prior().mass(), (d / "mass.txt").string());
  write_sparse(m.prior().stiffness(), (d / "stiffness.txt").string());
  write_sparse(m.projector(), (d / "projector.txt").string());
  Mat gram(m.n_fields(), static_cast<Eigen::Index>(m.n_fields() * data.gram.size()));
  for (std::size_t i = 0; i < data.gram.size(); ++i)
    gram.middleCols(static_cast<Eigen::Index>(i) * m.n_fields(), m.n_fields()) = data.gram[i];
  write_matrix(gram, (d / "gram.mat").string());
  write_matrix(data.xty, (d / "xty.mat").string());
  write_matrix(fit.mode, (d / "mode.mat").string());
  write_matrix(fit.neg_hessian, (d / "neg_hessian.mat").string());

  CsvTable grid;
  grid.header = {"point", "log_post", "weight"};
  for (int j = 0; j < m.n_theta(); ++j) grid.header.push_back("theta_" + std::to_string(j));
  const auto n_pts = static_cast<Eigen::Index>(fit.points.size());
  Mat means(m.n_latent(), n_pts), vars(m.n_latent(), n_pts);
  for (std::size_t l = 0; l < fit.points.size(); ++l) {
    const auto& pt = fit.points[l];
    std::vector<std::string> row{std::to_string(l), fmt(pt.log_post), fmt(pt.weight)};
    for (Eigen::Index j = 0; j < pt.theta.size(); ++j) row.push_back(fmt(pt.theta[j]));
    grid.rows.push_back(std::move(row));
    means.col(static_cast<Eigen::Index>(l)) = pt.mean;
    vars.col(static_cast<Eigen::Index>(l)) = pt.variance;
  }
  write_csv(grid, (d / "theta_grid.csv").string());
  write_matrix(means, (d / "point_means.mat").string());
  write_matrix(vars, (d / "point_variances.mat").string());
}

SubjectFit load_fit(const std::string& dir) {
  const fs::path d(dir);
  std::map<std::string, std::string> kv;
  for (auto& [k, v] : read_key_values((d / "manifest.txt").string())) kv[k] = v;
  const auto get = [&](const std::string& k) {
    const auto it = kv.find(k);
    if (it == kv.end()) throw Error(Errc::Parse, dir + ": manifest lacks " + k);
    return it->second;
  };
  if (get("format") != "sbglm-subject-fit" || get("version") != "1") throw Error(Errc::Parse, dir + ": not a fit");
  const auto num = [&](const std::string& k) { return to_double(get(k), k); };
  const int k_fields = static_cast<int>(to_int(get("n_fields"), "n_fields"));
  const auto n_gram = to_int(get("n_gram"), "n_gram");
  const auto n_points = to_int(get("n_points"), "n_points");

  HyperPrior prior;
  prior.xi_shape = num("prior.xi_shape");
  prior.xi_rate = num("prior.xi_rate");
  prior.log_kappa_mean = num("prior.log_kappa_mean");
  prior.log_kappa_sd = num("prior.log_kappa_sd");
  prior.log_tau_mean = num("prior.log_tau_mean");
  prior.log_tau_sd = num("prior.log_tau_sd");
  prior.ar_precision = num("prior.ar_precision");

  ModelData data;
  const Mat gram = read_matrix((d / "gram.mat").string());
  if (gram.rows() != k_fields || gram.cols() != k_fields * n_gram) throw Error(Errc::Parse, dir + ": gram shape");
  for (long long i = 0; i < n_gram; ++i) data.gram.push_back(gram.middleCols(i * k_fields, k_fields));
  data.xty = read_matrix((d / "xty.mat").string());
  data.yty = num("yty");
  data.n_obs = num("n_obs");

  SpdeOperator spde(read_sparse((d / "mass.txt").string()), read_sparse((d / "stiffness.txt").string()));
  auto model = std::make_shared<const LatentModel>(std::move(spde), read_sparse((d / "projector.txt").string()),
                                                   std::move(data), prior, numbers(get("ar_transform"), "ar_transform"));
  if (model->n_mesh() != to_int(get("n_mesh"), "n_mesh") || model->n_locations() != to_int(get("n_locations"), "n"))
    throw Error(Errc::Parse, dir + ": model size differs from manifest");

  SubjectFit fit;
  fit.model = model;
  const Mat mode = read_matrix((d / "mode.mat").string());
  if (mode.cols() != 1) throw Error(Errc::Parse, dir + ": mode must be a column");
  fit.mode = mode.col(0);
  fit.neg_hessian = read_matrix((d / "neg_hessian.mat").string());
  const auto grid = read_csv((d / "theta_grid.csv").string());
  const Mat means = read_matrix((d / "point_means.mat").string());
  const Mat vars = read_matrix((d / "point_variances.mat").string());
  if (static_cast<long long>(grid.rows.size()) != n_points || means.cols() != n_points || vars.cols() != n_points ||
      means.rows() != model->n_latent() || vars.rows() != model->n_latent())
    throw Error(Errc::Parse, dir + ": grid tables differ in size");
  const Vec log_post = grid.numeric("log_post"), weight = grid.numeric("weight");
  for (long long l = 0; l < n_points; ++l) {
    GridPoint pt;
    pt.theta.resize(model->n_theta());
    for (int j = 0; j < model->n_theta(); ++j)
      pt.theta[j] = to_double(grid.rows[static_cast<std::size_t>(l)][grid.column("theta_" + std::to_string(j))], dir);
    pt.log_post = log_post[l];
    pt.weight = weight[l];
    pt.mean = means.col(l);
    pt.variance = vars.col(l);
    fit.points.push_back(std::move(pt));
  }
  return fit;
}

}  // namespace sbglm
