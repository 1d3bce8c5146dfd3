#include "newscast/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "newscast/error.hpp"

namespace newscast {

namespace {

void check_pair(std::span<const double> y, std::span<const double> yhat, const char* name) {
  if (y.size() != yhat.size()) throw ParameterError(std::string(name) + ": length mismatch");
  if (y.empty()) throw ParameterError(std::string(name) + ": empty input");
}

}  // namespace

double mse(std::span<const double> y, std::span<const double> yhat) {
  check_pair(y, yhat, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = y[i] - yhat[i];
    s += e * e;
  }
  return s / static_cast<double>(y.size());
}

double r2(std::span<const double> y, std::span<const double> yhat) {
  check_pair(y, yhat, "r2");
  if (y.size() < 2) throw ParameterError("r2: need at least 2 points");
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double ss_res = 0.0;
  double ss_tot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ss_res += (y[i] - yhat[i]) * (y[i] - yhat[i]);
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  if (ss_tot == 0.0) throw NumericError("r2: constant target (SS_tot = 0)");
  return 1.0 - ss_res / ss_tot;
}

double smape(std::span<const double> y, std::span<const double> yhat) {
  check_pair(y, yhat, "smape");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double denom = (std::abs(y[i]) + std::abs(yhat[i])) / 2.0;
    if (denom == 0.0) continue;
    s += std::abs(y[i] - yhat[i]) / denom;
  }
  return 100.0 * s / static_cast<double>(y.size());
}

double snr(std::span<const double> series) {
  if (series.size() < 2) throw ParameterError("snr: need at least 2 points");
  double mean = 0.0;
  for (double v : series) mean += v;
  mean /= static_cast<double>(series.size());
  double ss = 0.0;
  for (double v : series) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(series.size() - 1));
  if (sd == 0.0) throw NumericError("snr: zero variance");
  return std::abs(mean) / sd;
}

double shannon_entropy(std::span<const double> series, Binning binning) {
  if (series.empty()) throw ParameterError("shannon_entropy: empty series");
  std::map<double, std::size_t> counts_d;
  std::map<long long, std::size_t> counts_w;
  if (binning.kind == Binning::Kind::Distinct) {
    for (double v : series) ++counts_d[v == 0.0 ? 0.0 : v];
  } else {
    if (!(binning.width > 0.0)) throw ParameterError("shannon_entropy: bin width must be positive");
    for (double v : series) ++counts_w[static_cast<long long>(std::floor(v / binning.width))];
  }
  const double n = static_cast<double>(series.size());
  double h = 0.0;
  const auto add = [&](std::size_t c) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log2(p);
  };
  for (const auto& [_, c] : counts_d) add(c);
  for (const auto& [_, c] : counts_w) add(c);
  return h;
}

MetricsReport evaluate(std::span<const double> y_train, std::span<const double> yhat_train,
                       std::span<const double> y_test, std::span<const double> yhat_test) {
  MetricsReport m;
  m.train_mse = mse(y_train, yhat_train);
  m.test_mse = mse(y_test, yhat_test);
  m.train_smape = smape(y_train, yhat_train);
  m.test_smape = smape(y_test, yhat_test);
  m.train_r2 = r2(y_train, yhat_train);
  m.test_r2 = r2(y_test, yhat_test);
  return m;
}

nlohmann::json to_json(const MetricsReport& m) {
  return {{"train_mse", m.train_mse},     {"test_mse", m.test_mse}, {"train_smape", m.train_smape},
          {"test_smape", m.test_smape},   {"train_r2", m.train_r2}, {"test_r2", m.test_r2}};
}

MetricsReport metrics_from_json(const nlohmann::json& j) {
  MetricsReport m;
  m.train_mse = j.at("train_mse").get<double>();
  m.test_mse = j.at("test_mse").get<double>();
  m.train_smape = j.at("train_smape").get<double>();
  m.test_smape = j.at("test_smape").get<double>();
  m.train_r2 = j.at("train_r2").get<double>();
  m.test_r2 = j.at("test_r2").get<double>();
  return m;
}

}  // namespace newscast
