#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "newscast/features.hpp"

namespace newscast {

enum class Arch { FFNN, LSTM, GRU, TCN, NN_HMM };

inline constexpr std::array<Arch, 5> kAllArchs{Arch::FFNN, Arch::LSTM, Arch::GRU, Arch::TCN, Arch::NN_HMM};

std::string_view to_string(Arch a);
Arch parse_arch(std::string_view s);

struct ModelSpec {
  Arch arch = Arch::FFNN;
  std::size_t input_dim = 1;  // features per timestep
  std::size_t window = 5;     // timesteps per row
  std::size_t output_dim = 1;
  std::size_t hidden_dim = 32;
  std::size_t num_hidden_layers = 1;
  double dropout = 0.3;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 500;
  std::uint64_t seed = 0;
  // TCN
  std::size_t kernel_size = 3;
  std::size_t num_blocks = 3;
  std::size_t dilation_base = 2;
  // NN_HMM
  std::size_t num_states = 4;

  void validate() const;
  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

ModelSpec spec_for(Arch arch, const DatasetVariant& variant);

// Named tensors plus adaptive-moment optimizer state.
struct ParameterSet {
  std::vector<std::string> names;
  std::vector<Eigen::MatrixXd> values;
  std::vector<Eigen::MatrixXd> first_moment;
  std::vector<Eigen::MatrixXd> second_moment;
  std::size_t step = 0;

  std::size_t index_of(std::string_view name) const;
  const Eigen::MatrixXd& operator[](std::string_view name) const { return values[index_of(name)]; }
  Eigen::MatrixXd& operator[](std::string_view name) { return values[index_of(name)]; }
  std::size_t scalar_count() const;
  bool all_finite() const;
};

using Gradients = std::vector<Eigen::MatrixXd>;

// Closed-form count of trainable scalars for a spec.
std::size_t parameter_count(const ModelSpec& spec);

// Xavier-uniform weights, zero biases and zero mixture log-weights.
ParameterSet init_params(const ModelSpec& spec);

// One B x input_dim matrix per timestep.
using SequenceBatch = std::vector<Eigen::MatrixXd>;

SequenceBatch make_batch(const DatasetVariant& v, std::span<const std::size_t> rows);
Eigen::MatrixXd make_targets(const DatasetVariant& v, std::span<const std::size_t> rows);

enum class Mode { Inference, Training };

// B x output_dim predictions. Training mode draws inverted-dropout masks from
// a generator seeded with `dropout_seed`.
Eigen::MatrixXd forward(const ModelSpec& spec, const ParameterSet& params, const SequenceBatch& batch,
                        Mode mode = Mode::Inference, std::uint64_t dropout_seed = 0);

// Per-state emission outputs (B x K) and mixture weights (1 x K) of an NN_HMM.
struct MixtureParts {
  Eigen::MatrixXd emissions;
  Eigen::RowVectorXd weights;
};
MixtureParts nnhmm_parts(const ModelSpec& spec, const ParameterSet& params, const SequenceBatch& batch);

struct LossAndGrad {
  double loss = 0.0;
  Gradients grads;  // aligned with ParameterSet::values
};

LossAndGrad loss_and_grad(const ModelSpec& spec, const ParameterSet& params, const SequenceBatch& batch,
                          const Eigen::MatrixXd& targets, Mode mode = Mode::Training,
                          std::uint64_t dropout_seed = 0);

struct TrainingHistory {
  std::vector<double> train_loss;
  std::vector<double> validation_loss;  // empty without a fold
};

struct TrainedModel {
  ModelSpec spec;
  ParameterSet params;
  TrainingHistory history;
};

// Mini-batch adaptive-moment descent for spec.epochs epochs over the variant's
// train rows, or fold->fit when a fold is given (validation loss then tracked
// on fold->validate). Throws NumericError on a non-finite loss.
TrainedModel train(const ModelSpec& spec, const DatasetVariant& variant, const Fold* fold = nullptr);

std::vector<double> predict(const TrainedModel& model, const SequenceBatch& batch);
std::vector<double> predict_rows(const TrainedModel& model, const DatasetVariant& v,
                                 std::span<const std::size_t> rows);

struct SearchSpace {
  std::vector<std::size_t> hidden_dims{16, 32, 64, 128};
  double dropout_min = 0.0;
  double dropout_max = 0.5;
  double lr_min = 1e-4;
  double lr_max = 1e-2;
  std::vector<std::size_t> batch_sizes{16, 32, 64};
};

struct Trial {
  ModelSpec spec;
  double score = 0.0;  // mean final validation MSE over folds
  bool diverged = false;
  std::string error;
};

struct SearchResult {
  ModelSpec best;
  double best_score = 0.0;
  std::vector<Trial> trials;
};

// Seeded random search scored by k-fold validation loss. `search_epochs`
// overrides base.epochs during the search when set.
SearchResult hyperparameter_search(const ModelSpec& base, const SearchSpace& space, std::size_t budget,
                                   const DatasetVariant& variant, std::uint64_t seed, std::size_t folds = 5,
                                   std::optional<std::size_t> search_epochs = std::nullopt);

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);

// Writes <stem>.json (spec, history, tensor names/shapes) and <stem>.bin (weights).
void save_model(const TrainedModel& model, const std::filesystem::path& stem);
TrainedModel load_model(const std::filesystem::path& stem);

}  // namespace newscast
