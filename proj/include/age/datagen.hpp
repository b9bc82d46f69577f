#pragma once

// Synthetic 2-D datasets, CSV/PPM I/O and the mode-coverage metric.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "age/error.hpp"
#include "age/latentspace.hpp"
#include "age/ndcore.hpp"

namespace age::data {

using nd::Tensor;

struct DatasetMeta {
  std::string name;
  std::vector<std::vector<double>> mode_centers;
  double mode_std = 0.0;
};

struct Dataset {
  Tensor samples;                      // N x D
  std::vector<std::size_t> labels;     // empty or length N
  DatasetMeta meta;

  std::size_t size() const { return samples.rows(); }
  std::size_t dim() const { return samples.cols(); }
  bool has_labels() const { return !labels.empty(); }
  std::size_t num_classes() const {
    std::size_t k = 0;
    for (std::size_t l : labels) k = std::max(k, l + 1);
    return std::max(k, meta.mode_centers.size());
  }
};

inline Dataset make_gaussian_ring(std::size_t n_modes, double radius, double std, std::size_t n,
                                  std::uint64_t seed) {
  if (n_modes < 1) throw DomainError("make_gaussian_ring: n_modes must be >= 1");
  if (!(std > 0.0)) throw DomainError("make_gaussian_ring: std must be positive");
  if (n < 1) throw DomainError("make_gaussian_ring: n must be >= 1");
  Dataset ds;
  ds.meta.name = "ring";
  ds.meta.mode_std = std;
  for (std::size_t k = 0; k < n_modes; ++k) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n_modes);
    ds.meta.mode_centers.push_back({radius * std::cos(angle), radius * std::sin(angle)});
  }
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, std);
  ds.samples = Tensor(n, 2);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t mode = i % n_modes;
    ds.labels[i] = mode;
    ds.samples(i, 0) = ds.meta.mode_centers[mode][0] + normal(rng);
    ds.samples(i, 1) = ds.meta.mode_centers[mode][1] + normal(rng);
  }
  return ds;
}

// Uniform over the 8 "black" cells ((i + j) even) of a 4x4 grid on [-2,2]^2.
inline Dataset make_checkerboard(std::size_t n, std::uint64_t seed) {
  if (n < 1) throw DomainError("make_checkerboard: n must be >= 1");
  Dataset ds;
  ds.meta.name = "checkerboard";
  Rng rng(seed);
  std::uniform_int_distribution<int> cell(0, 7);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ds.samples = Tensor(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = cell(rng);
    const int row = c / 2;
    const int col = 2 * (c % 2) + (row % 2);
    ds.samples(i, 0) = -2.0 + col + unit(rng);
    ds.samples(i, 1) = -2.0 + row + unit(rng);
  }
  return ds;
}

inline bool in_black_square(double x, double y) {
  if (x < -2.0 || x > 2.0 || y < -2.0 || y > 2.0) return false;
  const int col = std::min(3, static_cast<int>(std::floor(x + 2.0)));
  const int row = std::min(3, static_cast<int>(std::floor(y + 2.0)));
  return (row + col) % 2 == 0;
}

inline Dataset make_point_mass(const std::vector<double>& x0, std::size_t n) {
  if (x0.empty() || n < 1) throw DomainError("make_point_mass: need nonempty x0 and n >= 1");
  Dataset ds;
  ds.meta.name = "point_mass";
  ds.meta.mode_centers.push_back(x0);
  ds.samples = Tensor(n, x0.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < x0.size(); ++c) ds.samples(i, c) = x0[c];
  return ds;
}

// n x classes one-hot rows.
inline Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t classes) {
  Tensor out(labels.size(), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) throw DomainError("one_hot: label out of range");
    out(i, labels[i]) = 1.0;
  }
  return out;
}

struct Coverage {
  std::size_t covered = 0;
  double high_quality_fraction = 0.0;
};

inline std::size_t nearest_center(std::span<const double> x, const std::vector<std::vector<double>>& centers,
                                  double* dist = nullptr) {
  std::size_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < centers.size(); ++k) {
    double d2 = 0.0;
    for (std::size_t c = 0; c < x.size(); ++c) {
      const double d = x[c] - centers[k][c];
      d2 += d * d;
    }
    if (d2 < best_d2) {
      best_d2 = d2;
      best = k;
    }
  }
  if (dist != nullptr) *dist = std::sqrt(best_d2);
  return best;
}

// A sample is high quality if within 3 std of its nearest center; a mode is
// covered when at least `threshold` high-quality samples fall nearest to it.
inline Coverage mode_coverage(const Tensor& samples, const std::vector<std::vector<double>>& centers,
                              double std, std::size_t threshold = 20) {
  if (centers.empty()) throw DomainError("mode_coverage: no centers");
  std::vector<std::size_t> counts(centers.size(), 0);
  std::size_t hq = 0;
  for (std::size_t i = 0; i < samples.rows(); ++i) {
    double d = 0.0;
    const std::size_t k = nearest_center(samples.row_span(i), centers, &d);
    if (d <= 3.0 * std) {
      ++hq;
      ++counts[k];
    }
  }
  Coverage cov;
  for (std::size_t c : counts)
    if (c >= threshold) ++cov.covered;
  cov.high_quality_fraction = samples.rows() == 0 ? 0.0 : static_cast<double>(hq) / static_cast<double>(samples.rows());
  return cov;
}

// ---- CSV ----

inline std::string format_double(double v, int digits = 17) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

inline std::string csv_header(std::size_t dim, bool with_label) {
  std::string h;
  for (std::size_t c = 0; c < dim; ++c) h += (c ? ",x" : "x") + std::to_string(c);
  if (with_label) h += ",label";
  return h;
}

inline void write_csv(std::ostream& os, const Tensor* samples, const std::vector<std::size_t>& labels,
                      std::size_t dim) {
  os << csv_header(dim, !labels.empty()) << '\n';
  if (samples == nullptr) return;
  for (std::size_t i = 0; i < samples->rows(); ++i) {
    for (std::size_t c = 0; c < dim; ++c) {
      if (c) os << ',';
      os << format_double((*samples)(i, c));
    }
    if (!labels.empty()) os << ',' << labels[i];
    os << '\n';
  }
}

inline void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot open for writing: " + path);
  write_csv(os, &ds.samples, ds.labels, ds.dim());
  if (!os) throw InputError("failed writing " + path);
}

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_cell(std::string_view cell, std::size_t line_no) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (!cell.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || cell.empty()) {
    throw InputError("line " + std::to_string(line_no) + ": non-numeric cell '" + std::string(cell) + "'");
  }
  return v;
}

}  // namespace detail

inline Dataset read_csv(std::istream& is, const std::string& source = "<stream>") {
  std::string line;
  if (!std::getline(is, line)) throw InputError(source + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_commas(line);
  bool with_label = !header.empty() && header.back() == "label";
  const std::size_t dim = header.size() - (with_label ? 1 : 0);
  if (dim == 0) throw InputError(source + ": header has no data columns");
  for (std::size_t c = 0; c < dim; ++c) {
    if (header[c] != "x" + std::to_string(c)) {
      throw InputError(source + ": line 1: expected column 'x" + std::to_string(c) + "', got '" +
                       std::string(header[c]) + "'");
    }
  }
  std::vector<double> values;
  std::vector<std::size_t> labels;
  std::size_t line_no = 1;
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_commas(line);
    if (cells.size() != header.size()) {
      throw InputError(source + ": line " + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " cells, got " + std::to_string(cells.size()));
    }
    for (std::size_t c = 0; c < dim; ++c) values.push_back(detail::parse_cell(cells[c], line_no));
    if (with_label) {
      std::size_t l = 0;
      auto cell = cells[dim];
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), l);
      if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty()) {
        throw InputError(source + ": line " + std::to_string(line_no) + ": bad label '" + std::string(cell) + "'");
      }
      labels.push_back(l);
    }
    ++rows;
  }
  if (rows == 0) throw InputError(source + ": empty dataset (header only)");
  Dataset ds;
  ds.meta.name = source;
  ds.samples = Tensor(rows, dim, std::move(values));
  ds.labels = std::move(labels);
  return ds;
}

inline Dataset load_csv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open " + path);
  return read_csv(is, path);
}

// ---- PPM ----

// Tiles n samples of H*W values in [-1,1] row-major into a binary P6 image.
inline void render_raster_grid(const Tensor& samples, std::size_t height, std::size_t width,
                               std::size_t grid_cols, const std::string& path, std::size_t grid_rows = 0) {
  if (samples.cols() != height * width) throw ShapeError("render_raster_grid: sample width != H*W");
  if (grid_cols == 0) throw DomainError("render_raster_grid: grid_cols must be >= 1");
  if (grid_rows == 0) grid_rows = (samples.rows() + grid_cols - 1) / grid_cols;
  if (samples.rows() > grid_rows * grid_cols) {
    throw DomainError("render_raster_grid: " + std::to_string(samples.rows()) + " samples exceed grid capacity");
  }
  const std::size_t img_w = grid_cols * width;
  const std::size_t img_h = grid_rows * height;
  std::vector<unsigned char> pixels(img_w * img_h * 3, 0);
  for (std::size_t s = 0; s < samples.rows(); ++s) {
    const std::size_t tr = s / grid_cols, tc = s % grid_cols;
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const double v = std::clamp(samples(s, y * width + x), -1.0, 1.0);
        const auto level = static_cast<unsigned char>(std::floor(255.0 * (v + 1.0) / 2.0 + 0.5));
        const std::size_t px = ((tr * height + y) * img_w + tc * width + x) * 3;
        pixels[px] = pixels[px + 1] = pixels[px + 2] = level;
      }
    }
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot open for writing: " + path);
  os << "P6\n" << img_w << ' ' << img_h << "\n255\n";
  os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

}  // namespace age::data
