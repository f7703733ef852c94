#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <Eigen/Dense>

#include "latentseg/core.hpp"

namespace latentseg {

// Row-stochastic estimate of P(l|c); rows are semantic classes.
struct LatentProjection {
  Eigen::MatrixXd P;

  int semantic_count() const { return static_cast<int>(P.rows()); }
  int latent_count() const { return static_cast<int>(P.cols()); }

  void validate(double tol = 1e-6) const {
    for (Eigen::Index c = 0; c < P.rows(); ++c) {
      double sum = 0.0;
      for (Eigen::Index l = 0; l < P.cols(); ++l) {
        if (P(c, l) < 0.0 || P(c, l) > 1.0 + tol)
          throw RangeError("LatentProjection: entry outside [0,1]");
        sum += P(c, l);
      }
      if (std::abs(sum - 1.0) > tol)
        throw NormalizationError("LatentProjection: row " + std::to_string(c) +
                                 " sums to " + std::to_string(sum));
    }
  }
};

// Exponentially averaged soft counts of (semantic, latent) pixel pairs.
// Statistics are kept in double precision regardless of model precision.
struct CoOccurrence {
  Eigen::MatrixXd M;  // (|C| x |L|), nonnegative
  double alpha = 0.5;
  long update_count = 0;

  CoOccurrence() = default;
  CoOccurrence(int semantic, int latent, double a)
      : M(Eigen::MatrixXd::Zero(semantic, latent)), alpha(a) {
    if (!(alpha > 0.0 && alpha < 1.0))
      throw ConfigError("CoOccurrence: alpha must lie in (0,1), got " +
                        std::to_string(alpha));
  }

  int semantic_count() const { return static_cast<int>(M.rows()); }
  int latent_count() const { return static_cast<int>(M.cols()); }
};

// Batch statistic sum_{n,h,w} y[...,c] * s_l[...,l]. Ignored pixels carry
// all-zero one-hot rows and contribute nothing.
template <typename T>
Eigen::MatrixXd cooccurrence_batch_statistic(const ProbMap<T>& y,
                                             const ProbMap<T>& s_l) {
  const Tensor<T>& yv = y.values;
  const Tensor<T>& sv = s_l.values;
  if (yv.n() != sv.n() || yv.h() != sv.h() || yv.w() != sv.w())
    throw DimensionError("cooccurrence: spatial shapes disagree, " +
                         yv.shape_str() + " vs " + sv.shape_str());
  const int C = yv.c(), L = sv.c();
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(C, L);
  for (int n = 0; n < yv.n(); ++n)
    for (int h = 0; h < yv.h(); ++h)
      for (int w = 0; w < yv.w(); ++w) {
        int cls = -1;
        for (int c = 0; c < C; ++c)
          if (yv(n, h, w, c) != T(0)) { cls = c; break; }
        if (cls < 0) continue;
        const double yc = static_cast<double>(yv(n, h, w, cls));
        for (int l = 0; l < L; ++l)
          S(cls, l) += yc * static_cast<double>(sv(n, h, w, l));
      }
  return S;
}

// M' = (1-alpha) * M + alpha * batch statistic. Pure: returns a new state.
template <typename T>
CoOccurrence ema_update(const CoOccurrence& state, const ProbMap<T>& y,
                        const ProbMap<T>& s_l) {
  Eigen::MatrixXd S = cooccurrence_batch_statistic(y, s_l);
  if (S.rows() != state.M.rows() || S.cols() != state.M.cols())
    throw DimensionError("ema_update: statistic is " + std::to_string(S.rows()) +
                         "x" + std::to_string(S.cols()) + ", state is " +
                         std::to_string(state.M.rows()) + "x" +
                         std::to_string(state.M.cols()));
  CoOccurrence next = state;
  next.M = (1.0 - state.alpha) * state.M + state.alpha * S;
  next.update_count = state.update_count + 1;
  return next;
}

// Update rate: batch size over dataset size. A full-coverage batch would give
// alpha = 1, which breaks the recurrence; clamp just below with a warning.
inline double default_alpha(int batch_size, int dataset_size) {
  if (dataset_size <= 0)
    throw ConfigError("default_alpha: dataset_size must be positive");
  if (batch_size <= 0 || batch_size > dataset_size)
    throw ConfigError("default_alpha: need 0 < batch_size <= dataset_size, got " +
                      std::to_string(batch_size) + "/" +
                      std::to_string(dataset_size));
  double a = static_cast<double>(batch_size) / static_cast<double>(dataset_size);
  if (a >= 1.0) {
    std::cerr << "[latentseg] warning: ema alpha " << a
              << " clamped to 1-1e-6\n";
    a = 1.0 - 1e-6;
  }
  return a;
}

// P(l|c) = M[c,l] / sum_k M[c,k]. Rows never observed fall back to the
// uniform distribution so the projection stays well-defined.
inline LatentProjection project_distribution(const CoOccurrence& state) {
  if (state.update_count == 0)
    throw StateError("project_distribution: projection requested before any statistics");
  const int C = state.semantic_count(), L = state.latent_count();
  LatentProjection out;
  out.P.resize(C, L);
  for (int c = 0; c < C; ++c) {
    const double row_sum = state.M.row(c).sum();
    if (row_sum > 0.0)
      out.P.row(c) = state.M.row(c) / row_sum;
    else
      out.P.row(c).setConstant(1.0 / L);
  }
  return out;
}

// Number of latent classes l with P(l|c) > t for at least one c.
inline int effective_latent_count(const LatentProjection& proj, double t) {
  if (!(t > 0.0 && t < 1.0))
    throw ConfigError("effective_latent_count: threshold must lie in (0,1)");
  int count = 0;
  for (Eigen::Index l = 0; l < proj.P.cols(); ++l)
    if ((proj.P.col(l).array() > t).any()) ++count;
  return count;
}

// Fraction of semantic classes with a dominant latent class above t.
inline double dominance_fraction(const LatentProjection& proj, double t) {
  if (!(t > 0.0 && t < 1.0))
    throw ConfigError("dominance_fraction: threshold must lie in (0,1)");
  if (proj.P.rows() == 0) return 0.0;
  int dominated = 0;
  for (Eigen::Index c = 0; c < proj.P.rows(); ++c)
    if (proj.P.row(c).maxCoeff() > t) ++dominated;
  return static_cast<double>(dominated) / static_cast<double>(proj.P.rows());
}

// CSV export: header row of latent indices, first column of class names.
inline void export_projection_csv(const LatentProjection& proj,
                                  const ClassSpace& space,
                                  const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write projection CSV: " + path);
  out << "class";
  for (Eigen::Index l = 0; l < proj.P.cols(); ++l) out << ",l" << l;
  out << "\n";
  char buf[64];
  for (Eigen::Index c = 0; c < proj.P.rows(); ++c) {
    out << space.class_name(static_cast<int>(c));
    for (Eigen::Index l = 0; l < proj.P.cols(); ++l) {
      std::snprintf(buf, sizeof(buf), "%.17g", proj.P(c, l));
      out << ',' << buf;
    }
    out << "\n";
  }
}

inline LatentProjection load_projection_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read projection CSV: " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("projection CSV empty: " + path);
  int cols = 0;
  for (char ch : line)
    if (ch == ',') ++cols;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t pos = line.find(',');  // skip the class-name column
    if (pos == std::string::npos)
      throw IoError("malformed projection CSV row: " + line);
    while (pos != std::string::npos) {
      std::size_t next = line.find(',', pos + 1);
      row.push_back(std::stod(line.substr(pos + 1, next - pos - 1)));
      pos = next;
    }
    if (static_cast<int>(row.size()) != cols)
      throw IoError("ragged projection CSV row: " + line);
    rows.push_back(std::move(row));
  }
  LatentProjection proj;
  proj.P.resize(static_cast<Eigen::Index>(rows.size()), cols);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (int l = 0; l < cols; ++l) proj.P(static_cast<Eigen::Index>(r), l) = rows[r][l];
  return proj;
}

}  // namespace latentseg
