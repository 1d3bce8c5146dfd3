#pragma once

#include <span>

#include "json.hpp"

namespace newscast {

struct MetricsReport {
  double train_mse = 0.0;
  double test_mse = 0.0;
  double train_smape = 0.0;
  double test_smape = 0.0;
  double train_r2 = 0.0;
  double test_r2 = 0.0;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

double mse(std::span<const double> y, std::span<const double> yhat);
double r2(std::span<const double> y, std::span<const double> yhat);
// Percentage in [0, 200]. Pairs with |y| + |yhat| == 0 contribute 0.
double smape(std::span<const double> y, std::span<const double> yhat);

// |mean| / sample standard deviation.
double snr(std::span<const double> series);

struct Binning {
  enum class Kind { Distinct, FixedWidth } kind = Kind::Distinct;
  double width = 0.0;

  static Binning distinct() { return {}; }
  static Binning fixed_width(double w) { return {Kind::FixedWidth, w}; }
};

// Shannon entropy in bits of the empirical bin frequencies.
double shannon_entropy(std::span<const double> series, Binning binning = Binning::distinct());

MetricsReport evaluate(std::span<const double> y_train, std::span<const double> yhat_train,
                       std::span<const double> y_test, std::span<const double> yhat_test);

nlohmann::json to_json(const MetricsReport& m);
MetricsReport metrics_from_json(const nlohmann::json& j);

}  // namespace newscast
