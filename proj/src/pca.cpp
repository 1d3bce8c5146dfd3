#include "newscast/pca.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "newscast/error.hpp"

namespace newscast {

PcaModel PcaModel::truncated(std::size_t new_k) const {
  if (new_k < 1 || new_k > k()) throw ParameterError("truncated: k out of range");
  PcaModel out = *this;
  const auto kk = static_cast<Eigen::Index>(new_k);
  out.components = components.topRows(kk);
  out.eigenvalues = eigenvalues.head(kk);
  out.rank_deficient = false;
  const double tol = 1e-12 * std::max(1.0, eigenvalues.size() ? eigenvalues(0) : 0.0);
  for (Eigen::Index i = 0; i < kk; ++i) out.rank_deficient |= out.eigenvalues(i) <= tol;
  return out;
}

PcaModel fit_pca(const Eigen::MatrixXd& X, std::size_t k) {
  const auto n = static_cast<std::size_t>(X.rows());
  const auto d = static_cast<std::size_t>(X.cols());
  if (n < 2) throw ParameterError("fit_pca needs at least 2 rows");
  if (k < 1 || k > std::min(n - 1, d)) {
    throw ParameterError("fit_pca: k=" + std::to_string(k) + " outside [1, " + std::to_string(std::min(n - 1, d)) +
                         "]");
  }
  if (!X.allFinite()) throw ParameterError("fit_pca: non-finite input");

  PcaModel m;
  m.mean = X.colwise().mean().transpose();
  const Eigen::MatrixXd centered = X.rowwise() - m.mean.transpose();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  m.total_variance = cov.trace();
  m.fitted_on = n;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("fit_pca: eigendecomposition failed");
  // Eigen returns ascending eigenvalues.
  const auto kk = static_cast<Eigen::Index>(k);
  const auto dd = static_cast<Eigen::Index>(d);
  m.components.resize(kk, dd);
  m.eigenvalues.resize(kk);
  for (Eigen::Index i = 0; i < kk; ++i) {
    const Eigen::Index src = dd - 1 - i;
    Eigen::VectorXd v = solver.eigenvectors().col(src);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    m.components.row(i) = v.transpose();
    m.eigenvalues(i) = std::max(0.0, solver.eigenvalues()(src));
  }
  const double tol = 1e-12 * std::max(1.0, m.eigenvalues(0));
  for (Eigen::Index i = 0; i < kk; ++i) m.rank_deficient |= m.eigenvalues(i) <= tol;
  return m;
}

Eigen::VectorXd project(const PcaModel& model, const Eigen::VectorXd& x) {
  if (static_cast<std::size_t>(x.size()) != model.d()) {
    throw ParameterError("project: expected length " + std::to_string(model.d()) + ", got " +
                         std::to_string(x.size()));
  }
  return model.components * (x - model.mean);
}

Eigen::MatrixXd project_rows(const PcaModel& model, const Eigen::MatrixXd& X) {
  if (static_cast<std::size_t>(X.cols()) != model.d()) throw ParameterError("project_rows: dimension mismatch");
  return (X.rowwise() - model.mean.transpose()) * model.components.transpose();
}

Eigen::VectorXd reconstruct(const PcaModel& model, const Eigen::VectorXd& z) {
  if (static_cast<std::size_t>(z.size()) != model.k()) throw ParameterError("reconstruct: dimension mismatch");
  return model.components.transpose() * z + model.mean;
}

Eigen::MatrixXd reconstruct_rows(const PcaModel& model, const Eigen::MatrixXd& Z) {
  if (static_cast<std::size_t>(Z.cols()) != model.k()) throw ParameterError("reconstruct_rows: dimension mismatch");
  return (Z * model.components).rowwise() + model.mean.transpose();
}

std::vector<double> explained_variance(const PcaModel& model) {
  if (!(model.total_variance > 0.0)) throw NumericError("explained_variance: zero total variance");
  std::vector<double> out(model.k());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::clamp(model.eigenvalues(static_cast<Eigen::Index>(i)) / model.total_variance, 0.0, 1.0);
  }
  return out;
}

DistanceStats pairwise_distance_stats(const Eigen::MatrixXd& X, std::size_t sample, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(X.rows());
  if (n < 2) throw ParameterError("pairwise_distance_stats needs at least 2 rows");
  std::vector<double> dist;
  const std::size_t all_pairs = n * (n - 1) / 2;
  if (all_pairs <= sample) {
    dist.reserve(all_pairs);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) dist.push_back((X.row(i) - X.row(j)).norm());
    }
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    dist.reserve(sample);
    while (dist.size() < sample) {
      const auto i = pick(rng);
      const auto j = pick(rng);
      if (i == j) continue;
      dist.push_back((X.row(i) - X.row(j)).norm());
    }
  }
  DistanceStats s;
  s.pairs = dist.size();
  s.min = *std::min_element(dist.begin(), dist.end());
  s.max = *std::max_element(dist.begin(), dist.end());
  double sum = 0.0;
  for (double v : dist) sum += v;
  s.mean = sum / static_cast<double>(dist.size());
  double ss = 0.0;
  for (double v : dist) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(dist.size()));
  return s;
}

nlohmann::json to_json(const PcaModel& m) {
  nlohmann::json j;
  j["mean"] = std::vector<double>(m.mean.data(), m.mean.data() + m.mean.size());
  j["eigenvalues"] = std::vector<double>(m.eigenvalues.data(), m.eigenvalues.data() + m.eigenvalues.size());
  auto rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.components.rows(); ++r) {
    const Eigen::VectorXd row = m.components.row(r).transpose();
    rows.push_back(std::vector<double>(row.data(), row.data() + row.size()));
  }
  j["components"] = rows;
  j["total_variance"] = m.total_variance;
  j["fitted_on"] = m.fitted_on;
  j["rank_deficient"] = m.rank_deficient;
  return j;
}

PcaModel pca_from_json(const nlohmann::json& j) {
  PcaModel m;
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto eig = j.at("eigenvalues").get<std::vector<double>>();
  const auto rows = j.at("components").get<std::vector<std::vector<double>>>();
  m.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  m.eigenvalues = Eigen::Map<const Eigen::VectorXd>(eig.data(), static_cast<Eigen::Index>(eig.size()));
  m.components.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(mean.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != mean.size()) throw DataError("pca json: component width mismatch");
    for (std::size_t c = 0; c < mean.size(); ++c) {
      m.components(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  if (eig.size() != rows.size()) throw DataError("pca json: eigenvalue count mismatch");
  m.total_variance = j.at("total_variance").get<double>();
  m.fitted_on = j.at("fitted_on").get<std::size_t>();
  m.rank_deficient = j.value("rank_deficient", false);
  return m;
}

void save_pca(const PcaModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json(model).dump() << '\n';
}

PcaModel load_pca(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  return pca_from_json(nlohmann::json::parse(in));
}

}  // namespace newscast
