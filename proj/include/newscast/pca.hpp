#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

namespace newscast {

// Principal component model. Rows of `components` are orthonormal and ordered
// by non-increasing eigenvalue; each row's largest-magnitude entry is positive.
struct PcaModel {
  Eigen::VectorXd mean;         // d
  Eigen::MatrixXd components;   // k x d
  Eigen::VectorXd eigenvalues;  // k, clamped at 0
  double total_variance = 0.0;  // trace of the sample covariance
  std::size_t fitted_on = 0;    // rows used for fitting
  bool rank_deficient = false;  // some retained eigenvalue is numerically zero

  std::size_t k() const { return static_cast<std::size_t>(components.rows()); }
  std::size_t d() const { return static_cast<std::size_t>(components.cols()); }

  // Leading `k` components of this model; identical to refitting with k.
  PcaModel truncated(std::size_t k) const;
};

// Sample covariance uses the n-1 divisor. Requires n >= 2, 1 <= k <= min(n-1, d).
PcaModel fit_pca(const Eigen::MatrixXd& X, std::size_t k);

Eigen::VectorXd project(const PcaModel& model, const Eigen::VectorXd& x);
Eigen::MatrixXd project_rows(const PcaModel& model, const Eigen::MatrixXd& X);
Eigen::VectorXd reconstruct(const PcaModel& model, const Eigen::VectorXd& z);
Eigen::MatrixXd reconstruct_rows(const PcaModel& model, const Eigen::MatrixXd& Z);

std::vector<double> explained_variance(const PcaModel& model);

struct DistanceStats {
  double mean = 0.0;
  double std = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::size_t pairs = 0;
};

// Euclidean distances over `sample` seeded random pairs, or all pairs when
// there are no more than `sample` of them.
DistanceStats pairwise_distance_stats(const Eigen::MatrixXd& X, std::size_t sample, std::uint64_t seed);

nlohmann::json to_json(const PcaModel& model);
PcaModel pca_from_json(const nlohmann::json& j);
void save_pca(const PcaModel& model, const std::filesystem::path& path);
PcaModel load_pca(const std::filesystem::path& path);

}  // namespace newscast
