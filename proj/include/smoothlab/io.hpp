#ifndef SMOOTHLAB_IO_HPP
#define SMOOTHLAB_IO_HPP

#include <charconv>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "smoothlab/density_grid.hpp"
#include "smoothlab/errors.hpp"
#include "smoothlab/filtering.hpp"
#include "smoothlab/sde.hpp"
#include "smoothlab/smoothing.hpp"

namespace smoothlab::io {

/// Shortest representation that round-trips.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\t')) s.remove_suffix(1);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw Error(ErrorCode::IoError, "not a number: '" + std::string(s) + "'");
  return v;
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& path) : path_(path), out_(path) {
    if (!out_) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  }

  void header(const std::vector<std::string>& cols) {
    for (std::size_t i = 0; i < cols.size(); ++i) out_ << (i ? "," : "") << cols[i];
    out_ << '\n';
  }

  CsvWriter& cell(double v) { return raw(format_double(v)); }
  CsvWriter& cell(std::size_t v) { return raw(std::to_string(v)); }
  CsvWriter& raw(const std::string& s) {
    out_ << (first_ ? "" : ",") << s;
    first_ = false;
    return *this;
  }
  void end_row() {
    out_ << '\n';
    first_ = true;
  }

  ~CsvWriter() { out_.flush(); }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  bool first_ = true;
};

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return i;
    throw Error(ErrorCode::IoError, "missing column " + std::string(name));
  }
};

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::IoError, path.string() + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  for (auto c : split(line)) t.columns.emplace_back(c);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cells = split(line);
    if (cells.size() != t.columns.size())
      throw Error(ErrorCode::IoError, path.string() + ":" + std::to_string(line_no) + ": wrong number of cells");
    std::vector<double> row;
    row.reserve(cells.size());
    try {
      for (auto c : cells) row.push_back(parse_double(c));
    } catch (const Error& e) {
      throw Error(ErrorCode::IoError, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline std::vector<std::string> numbered(const std::string& prefix, int n) {
  std::vector<std::string> out;
  for (int k = 1; k <= n; ++k) out.push_back(prefix + std::to_string(k));
  return out;
}

inline std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

/// step, time, path_id, x_1..x_m at every recorded step.
inline void write_paths(const std::filesystem::path& path, const PathBundle& b) {
  CsvWriter w(path);
  w.header(concat({"step", "time", "path_id"}, numbered("x_", b.dim_state)));
  for (std::size_t r = 0; r < b.recorded_steps.size(); ++r) {
    const std::size_t step = b.recorded_steps[r];
    for (std::size_t p = 0; p < b.n_paths; ++p) {
      w.cell(step).cell(b.grid.node(step)).cell(p);
      for (int k = 0; k < b.dim_state; ++k) w.cell(b.value(r, p, k));
      w.end_row();
    }
  }
}

/// step, time, dy_1..dy_n; row i holds the increment over [u_i, u_{i+1}].
inline void write_observations(const std::filesystem::path& path, const PathBundle& b) {
  CsvWriter w(path);
  w.header(concat({"step", "time"}, numbered("dy_", b.dim_obs)));
  for (std::size_t i = 0; i < b.grid.n_steps(); ++i) {
    w.cell(i).cell(b.grid.node(i));
    for (int k = 0; k < b.dim_obs; ++k) w.cell(b.obs_increments[i * b.dim_obs + k]);
    w.end_row();
  }
}

inline std::vector<Vector> read_observations(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  std::vector<std::size_t> cols;
  for (std::size_t k = 1;; ++k) {
    const std::string name = "dy_" + std::to_string(k);
    bool found = false;
    for (std::size_t c = 0; c < t.columns.size(); ++c)
      if (t.columns[c] == name) {
        cols.push_back(c);
        found = true;
      }
    if (!found) break;
  }
  if (cols.empty()) throw Error(ErrorCode::IoError, path.string() + " has no dy_ columns");
  const std::size_t step_col = t.column("step");
  std::vector<Vector> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (t.rows[i][step_col] != static_cast<double>(i))
      throw Error(ErrorCode::IoError, path.string() + ": steps must be consecutive from 0");
    Vector dy(static_cast<int>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) dy[static_cast<int>(k)] = t.rows[i][cols[k]];
    out.push_back(dy);
  }
  return out;
}

inline std::vector<std::string> cov_columns(int m) {
  std::vector<std::string> out;
  for (int a = 1; a <= m; ++a)
    for (int b = 1; b <= m; ++b) out.push_back("cov_" + std::to_string(a) + "_" + std::to_string(b));
  return out;
}

/// step, time, mean_1..mean_m, cov entries row-major.
inline void write_beliefs(const std::filesystem::path& path, const TimeGrid& grid,
                          const std::vector<GaussianBelief>& beliefs) {
  const int m = beliefs.empty() ? 0 : static_cast<int>(beliefs.front().mean.size());
  CsvWriter w(path);
  w.header(concat(concat({"step", "time"}, numbered("mean_", m)), cov_columns(m)));
  for (std::size_t i = 0; i < beliefs.size(); ++i) {
    w.cell(i).cell(grid.node(i));
    for (int k = 0; k < m; ++k) w.cell(beliefs[i].mean[k]);
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) w.cell(beliefs[i].cov(a, b));
    w.end_row();
  }
}

inline void write_filter_track(const std::filesystem::path& path, const FilterTrack& t) {
  write_beliefs(path, t.grid, t.beliefs);
}

inline void write_rts_track(const std::filesystem::path& path, const RtsTrack& t) {
  write_beliefs(path, t.grid, t.beliefs);
}

inline std::vector<GaussianBelief> read_beliefs(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  int m = 0;
  while (true) {
    bool found = false;
    for (const auto& c : t.columns) found = found || c == "mean_" + std::to_string(m + 1);
    if (!found) break;
    ++m;
  }
  std::vector<GaussianBelief> out;
  for (const auto& row : t.rows) {
    GaussianBelief b{Vector(m), Matrix(m, m)};
    for (int k = 0; k < m; ++k) b.mean[k] = row[t.column("mean_" + std::to_string(k + 1))];
    for (int a = 0; a < m; ++a)
      for (int c = 0; c < m; ++c)
        b.cov(a, c) = row[t.column("cov_" + std::to_string(a + 1) + "_" + std::to_string(c + 1))];
    out.push_back(b);
  }
  return out;
}

/// particle_id, x_1..x_m, weight (normalized).
inline void write_cloud(const std::filesystem::path& path, const ParticleCloud& cloud) {
  CsvWriter w(path);
  w.header(concat(concat({"particle_id"}, numbered("x_", cloud.dim())), {"weight"}));
  const auto weights = cloud.weights();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    w.cell(i);
    for (int k = 0; k < cloud.dim(); ++k) w.cell(cloud.positions()[i * cloud.dim() + k]);
    w.cell(weights[i]);
    w.end_row();
  }
}

/// x, p
inline void write_density(const std::filesystem::path& path, const DensityGrid& d) {
  CsvWriter w(path);
  w.header({"x", "p"});
  for (std::size_t j = 0; j < d.n_nodes(); ++j) {
    w.cell(d.x(j)).cell(d.values[j]);
    w.end_row();
  }
}

inline DensityGrid read_density(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  if (t.rows.size() < 3) throw Error(ErrorCode::IoError, path.string() + ": need at least 3 nodes");
  const std::size_t xc = t.column("x");
  const std::size_t pc = t.column("p");
  DensityGrid d{t.rows.front()[xc], t.rows.back()[xc], t.rows.size() - 1, {}};
  for (const auto& r : t.rows) d.values.push_back(r[pc]);
  for (std::size_t j = 0; j < d.n_nodes(); ++j)
    if (std::abs(t.rows[j][xc] - d.x(j)) > 1e-9 * (1.0 + std::abs(d.x(j))))
      throw Error(ErrorCode::GridMismatch, path.string() + ": nodes are not equispaced");
  return d;
}

/// x, score
inline void write_scores(const std::filesystem::path& path, const std::vector<double>& x,
                         const std::vector<double>& score) {
  CsvWriter w(path);
  w.header({"x", "score"});
  for (std::size_t i = 0; i < x.size(); ++i) {
    w.cell(x[i]).cell(score[i]);
    w.end_row();
  }
}

/// step, time, x, p for the listed steps.
inline void write_density_sequence(const std::filesystem::path& path, const TimeGrid& grid,
                                   const std::vector<DensityGrid>& seq, const std::vector<std::size_t>& steps) {
  CsvWriter w(path);
  w.header({"step", "time", "x", "p"});
  for (auto i : steps) {
    const auto& d = seq.at(i);
    for (std::size_t j = 0; j < d.n_nodes(); ++j) {
      w.cell(i).cell(grid.node(i)).cell(d.x(j)).cell(d.values[j]);
      w.end_row();
    }
  }
}

/// step, time, member_id, x_1..x_m for the listed steps.
inline void write_ensemble(const std::filesystem::path& path, const SmoothingEnsemble& e,
                           const std::vector<std::size_t>& steps) {
  CsvWriter w(path);
  w.header(concat({"step", "time", "member_id"}, numbered("x_", e.dim)));
  for (auto s : steps) {
    const auto snap = e.snapshot(s);
    for (std::size_t j = 0; j < e.n_members; ++j) {
      w.cell(s).cell(e.grid.node(s)).cell(j);
      for (int k = 0; k < e.dim; ++k) w.cell(snap[j * e.dim + k]);
      w.end_row();
    }
  }
}

}  // namespace smoothlab::io

#endif  // SMOOTHLAB_IO_HPP
