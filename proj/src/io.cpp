#include "statctrl/io.hpp"

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "json.hpp"

namespace statctrl {

namespace {

void append_double(std::string& out, double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  out.append(buf, res.ptr);
}

void append_index(std::string& out, long long x) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  out.append(buf, res.ptr);
}

std::vector<double> to_std(const Vec& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

nlohmann::json mat_to_json(const Mat& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Mat mat_from_json(const nlohmann::json& j) {
  auto rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) return Mat();
  auto cols = static_cast<Eigen::Index>(j[0].size());
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  return m;
}

Vec vec_from_json(const nlohmann::json& j) {
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

/// All numeric fields of a CSV body (header excluded), in row-major order.
std::vector<double> parse_csv_numbers(const std::string& text, const std::string& path,
                                      std::string* header) {
  auto nl = text.find('\n');
  if (nl == std::string::npos) throw std::runtime_error(path + ": missing header row");
  if (header) {
    *header = text.substr(0, nl);
    if (!header->empty() && header->back() == '\r') header->pop_back();
  }
  std::vector<double> vals;
  const char* p = text.data() + nl + 1;
  const char* end = text.data() + text.size();
  while (p < end) {
    while (p < end && (*p == ',' || *p == '\n' || *p == '\r' || *p == ' ')) ++p;
    if (p >= end) break;
    double x;
    auto res = std::from_chars(p, end, x);
    if (res.ec != std::errc())
      throw std::runtime_error(path + ": malformed numeric field at byte " +
                               std::to_string(p - text.data()));
    p = res.ptr;
    vals.push_back(x);
  }
  return vals;
}

}  // namespace

std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw std::runtime_error("read error on " + path);
  return text;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  out.flush();
  if (!out) throw std::runtime_error("write error on " + path);
}

void write_moment_series_csv(const std::string& path, const MomentSeries& s) {
  std::string out;
  out.reserve(80 * (s.grid.n_nodes + 1));
  out += "t,energy,energy_pert";
  for (int k = 0; k < s.dim; ++k) {
    out += ",mean_";
    append_index(out, k + 1);
  }
  for (int k = 0; k < s.dim; ++k) {
    out += ",var_";
    append_index(out, k + 1);
  }
  out += '\n';
  for (std::size_t i = 0; i < s.grid.n_nodes; ++i) {
    append_double(out, s.grid.t(i));
    out += ',';
    append_double(out, s.energy[i]);
    out += ',';
    append_double(out, s.energy_pert[i]);
    for (int k = 0; k < s.dim; ++k) {
      out += ',';
      append_double(out, s.mean[i][k]);
    }
    for (int k = 0; k < s.dim; ++k) {
      out += ',';
      append_double(out, s.cov[i](k, k));
    }
    out += '\n';
  }
  write_text_file(path, out);
}

void write_covariance_csv(const std::string& path, const MomentSeries& s) {
  std::string out = "t,i,j,cov\n";
  out.reserve(32 * s.grid.n_nodes * (s.dim * (s.dim + 1) / 2 + 1));
  for (std::size_t n = 0; n < s.grid.n_nodes; ++n) {
    for (int i = 0; i < s.dim; ++i) {
      for (int j = i; j < s.dim; ++j) {
        append_double(out, s.grid.t(n));
        out += ',';
        append_index(out, i + 1);
        out += ',';
        append_index(out, j + 1);
        out += ',';
        append_double(out, s.cov[n](i, j));
        out += '\n';
      }
    }
  }
  write_text_file(path, out);
}

void write_control_csv(const std::string& path, const ControlSolution& c) {
  std::string out;
  out.reserve(80 * (c.grid.n_nodes + 1));
  out += "t,K,E_star";
  for (int k = 0; k < c.dim; ++k) {
    out += ",C_";
    append_index(out, k + 1);
  }
  for (int k = 0; k < c.dim; ++k) {
    out += ",dC_";
    append_index(out, k + 1);
  }
  out += '\n';
  for (std::size_t i = 0; i < c.grid.n_nodes; ++i) {
    append_double(out, c.grid.t(i));
    out += ',';
    append_double(out, c.K[i]);
    out += ',';
    append_double(out, c.E_star[i]);
    const double* C = c.C_node(i);
    const double* dC = c.dC_node(i);
    for (int k = 0; k < c.dim; ++k) {
      out += ',';
      append_double(out, C[k]);
    }
    for (int k = 0; k < c.dim; ++k) {
      out += ',';
      append_double(out, dC[k]);
    }
    out += '\n';
  }
  write_text_file(path, out);
}

void write_forcing_csv(const std::string& path, const ForcingSolution& f) {
  const auto& g = f.kappa.grid;
  int dim = f.kappa.dim;
  std::string out;
  out.reserve(80 * (g.n_nodes + 1));
  out += "t";
  for (int k = 0; k < dim; ++k) {
    out += ",kappa_";
    append_index(out, k + 1);
  }
  for (int k = 0; k < dim; ++k) {
    out += ",du_";
    append_index(out, k + 1);
  }
  out += '\n';
  for (std::size_t i = 0; i < g.n_nodes; ++i) {
    append_double(out, g.t(i));
    const double* kap = f.kappa.node(i);
    const double* du = f.mean_response.node(i);
    for (int k = 0; k < dim; ++k) {
      out += ',';
      append_double(out, kap[k]);
    }
    for (int k = 0; k < dim; ++k) {
      out += ',';
      append_double(out, du[k]);
    }
    out += '\n';
  }
  write_text_file(path, out);
}

void write_empirical_control_csv(const std::string& path, const UniformGrid& grid,
                                 const std::vector<Vec>& C) {
  if (C.size() != grid.n_nodes)
    throw std::invalid_argument("write_empirical_control_csv: node count mismatch");
  int dim = grid.n_nodes == 0 ? 0 : static_cast<int>(C[0].size());
  std::string out = "t";
  for (int k = 0; k < dim; ++k) {
    out += ",C_";
    append_index(out, k + 1);
  }
  out += '\n';
  for (std::size_t i = 0; i < grid.n_nodes; ++i) {
    append_double(out, grid.t(i));
    for (int k = 0; k < dim; ++k) {
      out += ',';
      append_double(out, C[i][k]);
    }
    out += '\n';
  }
  write_text_file(path, out);
}

void write_inversion_diagnostics(const std::string& path, const InversionDiagnostics& d) {
  nlohmann::json j;
  j["den_min"] = d.den_min;
  j["kappa_max_norm"] = d.kappa_max_norm;
  j["kappa_terminal_norm"] = d.kappa_terminal_norm;
  j["alternate_equilibrium_flag"] = d.alternate_equilibrium_flag;
  j["loopback_residual_max"] = d.loopback_residual_max;
  j["loopback_residual_bound"] = d.loopback_residual_bound;
  j["cov_min_eigenvalue"] = d.cov_min_eigenvalue;
  j["du0_used"] = to_std(d.du0_used);
  j["du0_measured"] = to_std(d.du0_measured);
  j["warnings"] = d.warnings;
  write_text_file(path, j.dump(2) + "\n");
}

namespace {

std::string mean_kernel_csv(const MeanResponseKernel& k) {
  bool has_se = !k.se.empty();
  std::string out = k.offset_form ? "tau,offset,value" : "tau,k,l,value";
  if (has_se) out += ",se";
  out += '\n';
  out.reserve(out.size() + 32 * k.values.size());
  std::size_t cols = k.offset_form ? static_cast<std::size_t>(k.dim)
                                   : static_cast<std::size_t>(k.dim) * k.dim;
  for (std::size_t q = 0; q < k.n_lags; ++q) {
    double tau = static_cast<double>(q) * k.dtau;
    for (std::size_t c = 0; c < cols; ++c) {
      std::size_t idx = q * cols + c;
      append_double(out, tau);
      out += ',';
      if (k.offset_form) {
        append_index(out, static_cast<long long>(c));
      } else {
        append_index(out, static_cast<long long>(c / k.dim) + 1);
        out += ',';
        append_index(out, static_cast<long long>(c % k.dim) + 1);
      }
      out += ',';
      append_double(out, k.values[idx]);
      if (has_se) {
        out += ',';
        append_double(out, k.se[idx]);
      }
      out += '\n';
    }
  }
  return out;
}

std::string cov_kernel_csv(const CovResponseKernel& k) {
  bool has_se = !k.se.empty();
  std::string out = k.offset_form ? "tau,a,b,value" : "tau,i,j,l,value";
  if (has_se) out += ",se";
  out += '\n';
  out.reserve(out.size() + 40 * k.values.size());
  std::size_t d = static_cast<std::size_t>(k.dim);
  std::size_t cols = k.offset_form ? d * d : d * d * d;
  for (std::size_t q = 0; q < k.n_lags; ++q) {
    double tau = static_cast<double>(q) * k.dtau;
    for (std::size_t c = 0; c < cols; ++c) {
      std::size_t idx = q * cols + c;
      append_double(out, tau);
      out += ',';
      if (k.offset_form) {
        append_index(out, static_cast<long long>(c / d));
        out += ',';
        append_index(out, static_cast<long long>(c % d));
      } else {
        append_index(out, static_cast<long long>(c / (d * d)) + 1);
        out += ',';
        append_index(out, static_cast<long long>((c / d) % d) + 1);
        out += ',';
        append_index(out, static_cast<long long>(c % d) + 1);
      }
      out += ',';
      append_double(out, k.values[idx]);
      if (has_se) {
        out += ',';
        append_double(out, k.se[idx]);
      }
      out += '\n';
    }
  }
  return out;
}

void unpack_kernel_body(const std::vector<double>& fields, std::size_t n_lags,
                        std::size_t cols, std::size_t index_fields, bool has_se,
                        const std::string& path, std::vector<double>& values,
                        std::vector<double>& se) {
  std::size_t per_row = 1 + index_fields + 1 + (has_se ? 1 : 0);
  std::size_t rows = n_lags * cols;
  if (fields.size() != rows * per_row)
    throw std::runtime_error(path + ": expected " + std::to_string(rows * per_row) +
                             " fields, found " + std::to_string(fields.size()));
  values.resize(rows);
  if (has_se) se.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* f = fields.data() + r * per_row;
    values[r] = f[1 + index_fields];
    if (has_se) se[r] = f[2 + index_fields];
  }
}

}  // namespace

void save_kernels(const std::string& dir, const ResponseKernels& k) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["format"] = 1;
  j["u_eq"] = to_std(k.u_eq);
  j["R_eq"] = mat_to_json(k.R_eq);
  j["meta"] = {{"seed", k.meta.seed},
               {"T_sample", k.meta.T_sample},
               {"dtau", k.meta.dtau},
               {"tau_max", k.meta.tau_max},
               {"dt", k.meta.dt},
               {"n_starts", k.meta.n_starts},
               {"system_hash", std::to_string(k.meta.system_hash)},
               {"warnings", k.meta.warnings}};
  j["mean"] = {{"present", !k.mean.empty()},
               {"dim", k.mean.dim},
               {"dtau", k.mean.dtau},
               {"n_lags", k.mean.n_lags},
               {"offset_form", k.mean.offset_form},
               {"has_se", !k.mean.se.empty()}};
  j["cov"] = {{"present", !k.cov.empty()},
              {"dim", k.cov.dim},
              {"dtau", k.cov.dtau},
              {"n_lags", k.cov.n_lags},
              {"offset_form", k.cov.offset_form},
              {"has_se", !k.cov.se.empty()}};
  write_text_file(dir + "/response_meta.json", j.dump(2) + "\n");
  if (!k.mean.empty()) write_text_file(dir + "/response_mean.csv", mean_kernel_csv(k.mean));
  if (!k.cov.empty()) write_text_file(dir + "/response_cov.csv", cov_kernel_csv(k.cov));
}

ResponseKernels load_kernels(const std::string& dir) {
  std::string meta_path = dir + "/response_meta.json";
  nlohmann::json j = nlohmann::json::parse(read_text_file(meta_path));
  if (j.value("format", 0) != 1)
    throw std::runtime_error(meta_path + ": unsupported kernel store format");

  ResponseKernels k;
  k.u_eq = vec_from_json(j.at("u_eq"));
  k.R_eq = mat_from_json(j.at("R_eq"));
  const auto& m = j.at("meta");
  k.meta.seed = m.at("seed").get<std::uint64_t>();
  k.meta.T_sample = m.at("T_sample").get<double>();
  k.meta.dtau = m.at("dtau").get<double>();
  k.meta.tau_max = m.at("tau_max").get<double>();
  k.meta.dt = m.at("dt").get<double>();
  k.meta.n_starts = m.at("n_starts").get<std::size_t>();
  k.meta.system_hash = std::stoull(m.at("system_hash").get<std::string>());
  k.meta.warnings = m.at("warnings").get<std::vector<std::string>>();

  const auto& jm = j.at("mean");
  if (jm.at("present").get<bool>()) {
    k.mean.dim = jm.at("dim").get<int>();
    k.mean.dtau = jm.at("dtau").get<double>();
    k.mean.n_lags = jm.at("n_lags").get<std::size_t>();
    k.mean.offset_form = jm.at("offset_form").get<bool>();
    bool has_se = jm.at("has_se").get<bool>();
    std::string path = dir + "/response_mean.csv";
    auto fields = parse_csv_numbers(read_text_file(path), path, nullptr);
    std::size_t cols = k.mean.offset_form ? static_cast<std::size_t>(k.mean.dim)
                                          : static_cast<std::size_t>(k.mean.dim) * k.mean.dim;
    unpack_kernel_body(fields, k.mean.n_lags, cols, k.mean.offset_form ? 1 : 2, has_se, path,
                       k.mean.values, k.mean.se);
  }
  const auto& jc = j.at("cov");
  if (jc.at("present").get<bool>()) {
    k.cov.dim = jc.at("dim").get<int>();
    k.cov.dtau = jc.at("dtau").get<double>();
    k.cov.n_lags = jc.at("n_lags").get<std::size_t>();
    k.cov.offset_form = jc.at("offset_form").get<bool>();
    bool has_se = jc.at("has_se").get<bool>();
    std::string path = dir + "/response_cov.csv";
    auto fields = parse_csv_numbers(read_text_file(path), path, nullptr);
    std::size_t d = static_cast<std::size_t>(k.cov.dim);
    std::size_t cols = k.cov.offset_form ? d * d : d * d * d;
    unpack_kernel_body(fields, k.cov.n_lags, cols, k.cov.offset_form ? 2 : 3, has_se, path,
                       k.cov.values, k.cov.se);
  }
  return k;
}

}  // namespace statctrl
