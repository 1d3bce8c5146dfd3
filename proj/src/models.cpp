#include "newscast/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "newscast/autodiff.hpp"
#include "newscast/error.hpp"
#include "newscast/hash.hpp"

namespace newscast {

std::string_view to_string(Arch a) {
  switch (a) {
    case Arch::FFNN:
      return "FFNN";
    case Arch::LSTM:
      return "LSTM";
    case Arch::GRU:
      return "GRU";
    case Arch::TCN:
      return "TCN";
    case Arch::NN_HMM:
      return "NN_HMM";
  }
  return "?";
}

Arch parse_arch(std::string_view s) {
  for (auto a : kAllArchs) {
    if (to_string(a) == s) return a;
  }
  throw ConfigError("unknown architecture '" + std::string(s) + "'");
}

void ModelSpec::validate() const {
  if (input_dim < 1 || window < 1 || output_dim < 1 || hidden_dim < 1) {
    throw ParameterError("model spec: all dimensions must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ParameterError("model spec: dropout must be in [0, 1)");
  if (!(learning_rate > 0.0)) throw ParameterError("model spec: learning rate must be positive");
  if (batch_size < 1) throw ParameterError("model spec: batch size must be positive");
  if (arch == Arch::TCN && (kernel_size < 1 || num_blocks < 1 || dilation_base < 1)) {
    throw ParameterError("model spec: TCN sizes must be positive");
  }
  if (arch == Arch::NN_HMM && num_states < 1) throw ParameterError("model spec: NN_HMM needs >= 1 state");
  if ((arch == Arch::LSTM || arch == Arch::GRU) && num_hidden_layers < 1) {
    throw ParameterError("model spec: recurrent models need >= 1 layer");
  }
}

ModelSpec spec_for(Arch arch, const DatasetVariant& variant) {
  ModelSpec s;
  s.arch = arch;
  s.input_dim = variant.features;
  s.window = variant.window;
  return s;
}

// ---------------------------------------------------------------------------
// Parameter layout

namespace {

enum class Init { Xavier, Zero };

struct TensorDecl {
  std::string name;
  Eigen::Index rows;
  Eigen::Index cols;
  Init init;
};

std::vector<TensorDecl> layout(const ModelSpec& s) {
  const auto H = static_cast<Eigen::Index>(s.hidden_dim);
  const auto F = static_cast<Eigen::Index>(s.input_dim);
  const auto O = static_cast<Eigen::Index>(s.output_dim);
  std::vector<TensorDecl> t;
  const auto dense = [&](const std::string& name, Eigen::Index out, Eigen::Index in) {
    t.push_back({name + ".W", out, in, Init::Xavier});
    t.push_back({name + ".b", 1, out, Init::Zero});
  };

  if (s.arch == Arch::FFNN) {
    dense("in", H, F * static_cast<Eigen::Index>(s.window));
  } else {
    dense("in", H, F);
  }

  switch (s.arch) {
    case Arch::FFNN:
      for (std::size_t l = 0; l < s.num_hidden_layers; ++l) dense("h" + std::to_string(l), H, H);
      dense("out", O, H);
      break;
    case Arch::LSTM:
      for (std::size_t l = 0; l < s.num_hidden_layers; ++l) {
        for (const char* g : {"i", "f", "g", "o"}) {
          const std::string p = "lstm" + std::to_string(l) + "." + g;
          t.push_back({p + ".Wx", H, H, Init::Xavier});
          t.push_back({p + ".Wh", H, H, Init::Xavier});
          t.push_back({p + ".b", 1, H, Init::Zero});
        }
      }
      dense("out", O, H);
      break;
    case Arch::GRU:
      for (std::size_t l = 0; l < s.num_hidden_layers; ++l) {
        const std::string p = "gru" + std::to_string(l);
        for (const char* g : {"r", "z"}) {
          t.push_back({p + "." + g + ".Wx", H, H, Init::Xavier});
          t.push_back({p + "." + g + ".Wh", H, H, Init::Xavier});
          t.push_back({p + "." + g + ".b", 1, H, Init::Zero});
        }
        t.push_back({p + ".n.Wx", H, H, Init::Xavier});
        t.push_back({p + ".n.Wh", H, H, Init::Xavier});
        t.push_back({p + ".n.bx", 1, H, Init::Zero});
        t.push_back({p + ".n.bh", 1, H, Init::Zero});
      }
      dense("out", O, H);
      break;
    case Arch::TCN:
      for (std::size_t b = 0; b < s.num_blocks; ++b) {
        for (const char* c : {"conv1", "conv2"}) {
          const std::string p = "tcn" + std::to_string(b) + "." + c;
          for (std::size_t j = 0; j < s.kernel_size; ++j) t.push_back({p + ".W" + std::to_string(j), H, H, Init::Xavier});
          t.push_back({p + ".b", 1, H, Init::Zero});
        }
      }
      dense("out", O, H);
      break;
    case Arch::NN_HMM:
      for (std::size_t k = 0; k < s.num_states; ++k) {
        const std::string p = "emit" + std::to_string(k);
        for (std::size_t l = 0; l < s.num_hidden_layers; ++l) dense(p + ".h" + std::to_string(l), H, H);
        dense(p + ".out", O, H);
      }
      t.push_back({"mix.logits", 1, static_cast<Eigen::Index>(s.num_states), Init::Zero});
      break;
  }
  return t;
}

}  // namespace

std::size_t ParameterSet::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return i;
  }
  throw ParameterError("no parameter named '" + std::string(name) + "'");
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : values) n += static_cast<std::size_t>(v.size());
  return n;
}

bool ParameterSet::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](const Eigen::MatrixXd& m) { return m.allFinite(); });
}

std::size_t parameter_count(const ModelSpec& s) {
  const std::size_t H = s.hidden_dim, F = s.input_dim, O = s.output_dim, n = s.num_hidden_layers;
  const std::size_t head = O * H + O;
  switch (s.arch) {
    case Arch::FFNN:
      return H * F * s.window + H + n * (H * H + H) + head;
    case Arch::LSTM:
      return H * F + H + n * 4 * (2 * H * H + H) + head;
    case Arch::GRU:
      return H * F + H + n * (6 * H * H + 4 * H) + head;
    case Arch::TCN:
      return H * F + H + s.num_blocks * 2 * (s.kernel_size * H * H + H) + head;
    case Arch::NN_HMM:
      return H * F + H + s.num_states * (n * (H * H + H) + head) + s.num_states;
  }
  return 0;
}

ParameterSet init_params(const ModelSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  ParameterSet p;
  for (const auto& d : layout(spec)) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d.rows, d.cols);
    if (d.init == Init::Xavier) {
      const double bound = std::sqrt(6.0 / static_cast<double>(d.rows + d.cols));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = u(rng);
      }
    }
    p.names.push_back(d.name);
    p.first_moment.push_back(Eigen::MatrixXd::Zero(d.rows, d.cols));
    p.second_moment.push_back(Eigen::MatrixXd::Zero(d.rows, d.cols));
    p.values.push_back(std::move(m));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Graph construction

namespace {

using ad::Var;

class Graph {
 public:
  Graph(const ModelSpec& spec, const ParameterSet& params, Gradients* grads, Mode mode, std::uint64_t seed)
      : spec_(spec), params_(params), grads_(grads), mode_(mode), rng_(seed), vars_(params.values.size()) {}

  ad::Tape tape;

  Var param(const std::string& name) {
    const std::size_t i = params_.index_of(name);
    if (!vars_[i]) vars_[i] = tape.parameter(params_.values[i], grads_ ? &(*grads_)[i] : nullptr);
    return *vars_[i];
  }

  Var dense(Var x, const std::string& name) { return tape.linear(x, param(name + ".W"), param(name + ".b")); }

  Var dropout(Var x) {
    if (mode_ != Mode::Training || spec_.dropout <= 0.0) return x;
    const auto& v = tape.value(x);
    const double keep = 1.0 - spec_.dropout;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ad::Matrix m(v.rows(), v.cols());
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = u(rng_) < keep ? 1.0 / keep : 0.0;
    }
    return tape.mask(x, std::move(m));
  }

  Var checked(Var x, const std::string& layer) {
    if (!tape.value(x).allFinite()) throw NumericError("non-finite activation in layer '" + layer + "'");
    return x;
  }

  Var zeros(Eigen::Index rows, Eigen::Index cols) { return tape.constant(ad::Matrix::Zero(rows, cols)); }

  Var build(const SequenceBatch& batch) {
    if (batch.size() != spec_.window) {
      throw ParameterError("forward: expected " + std::to_string(spec_.window) + " timesteps, got " +
                           std::to_string(batch.size()));
    }
    for (const auto& step : batch) {
      if (static_cast<std::size_t>(step.cols()) != spec_.input_dim || step.rows() != batch[0].rows()) {
        throw ParameterError("forward: batch shape mismatch (expected " + std::to_string(spec_.input_dim) +
                             " features per timestep)");
      }
    }
    std::vector<Var> steps;
    for (const auto& s : batch) steps.push_back(tape.constant(s));

    switch (spec_.arch) {
      case Arch::FFNN:
        return ffnn(steps);
      case Arch::LSTM:
        return lstm(steps);
      case Arch::GRU:
        return gru(steps);
      case Arch::TCN:
        return tcn(steps);
      case Arch::NN_HMM:
        return nnhmm(steps, nullptr);
    }
    throw ParameterError("unknown architecture");
  }

  Var nnhmm(const std::vector<Var>& steps, MixtureParts* parts) {
    const Var x = checked(tape.relu(dense(steps.back(), "in")), "in");
    std::vector<Var> emissions;
    for (std::size_t k = 0; k < spec_.num_states; ++k) {
      const std::string p = "emit" + std::to_string(k);
      Var e = x;
      for (std::size_t l = 0; l < spec_.num_hidden_layers; ++l) {
        e = dropout(tape.relu(dense(e, p + ".h" + std::to_string(l))));
      }
      emissions.push_back(checked(dense(e, p + ".out"), p));
    }
    const Var w = tape.softmax_row(param("mix.logits"));
    if (parts) {
      parts->emissions.resize(tape.value(emissions[0]).rows(), static_cast<Eigen::Index>(emissions.size()));
      for (std::size_t k = 0; k < emissions.size(); ++k) {
        parts->emissions.col(static_cast<Eigen::Index>(k)) = tape.value(emissions[k]).col(0);
      }
      parts->weights = tape.value(w).row(0);
    }
    return checked(tape.weighted_sum(emissions, w), "mixture");
  }

 private:
  Var ffnn(const std::vector<Var>& steps) {
    Var h = checked(dense(tape.concat_cols(steps), "in"), "in");
    for (std::size_t l = 0; l < spec_.num_hidden_layers; ++l) {
      const std::string name = "h" + std::to_string(l);
      h = checked(dropout(tape.relu(dense(h, name))), name);
    }
    return checked(dense(h, "out"), "out");
  }

  Var lstm(const std::vector<Var>& steps) {
    std::vector<Var> seq;
    for (auto s : steps) seq.push_back(dense(s, "in"));
    const auto B = tape.value(steps[0]).rows();
    const auto H = static_cast<Eigen::Index>(spec_.hidden_dim);
    for (std::size_t l = 0; l < spec_.num_hidden_layers; ++l) {
      const std::string p = "lstm" + std::to_string(l);
      const auto gate = [&](Var x, Var h, const char* g) {
        const std::string q = p + "." + g;
        return tape.add(tape.linear(x, param(q + ".Wx"), param(q + ".b")), tape.linear_nobias(h, param(q + ".Wh")));
      };
      Var h = zeros(B, H);
      Var c = zeros(B, H);
      std::vector<Var> out;
      for (auto x : seq) {
        const Var i = tape.sigmoid(gate(x, h, "i"));
        const Var f = tape.sigmoid(gate(x, h, "f"));
        const Var g = tape.tanh(gate(x, h, "g"));
        const Var o = tape.sigmoid(gate(x, h, "o"));
        c = tape.add(tape.mul(f, c), tape.mul(i, g));
        h = tape.mul(o, tape.tanh(c));
        out.push_back(h);
      }
      checked(h, p);
      seq = std::move(out);
    }
    return checked(dense(dropout(seq.back()), "out"), "out");
  }

  Var gru(const std::vector<Var>& steps) {
    std::vector<Var> seq;
    for (auto s : steps) seq.push_back(tape.relu(dense(s, "in")));
    const auto B = tape.value(steps[0]).rows();
    const auto H = static_cast<Eigen::Index>(spec_.hidden_dim);
    for (std::size_t l = 0; l < spec_.num_hidden_layers; ++l) {
      const std::string p = "gru" + std::to_string(l);
      Var h = zeros(B, H);
      std::vector<Var> out;
      for (auto x : seq) {
        const auto gate = [&](const char* g) {
          const std::string q = p + "." + g;
          return tape.sigmoid(
              tape.add(tape.linear(x, param(q + ".Wx"), param(q + ".b")), tape.linear_nobias(h, param(q + ".Wh"))));
        };
        const Var r = gate("r");
        const Var z = gate("z");
        const Var hn = tape.linear(h, param(p + ".n.Wh"), param(p + ".n.bh"));
        const Var n = tape.tanh(tape.add(tape.linear(x, param(p + ".n.Wx"), param(p + ".n.bx")), tape.mul(r, hn)));
        h = tape.add(tape.mul(tape.one_minus(z), n), tape.mul(z, h));
        out.push_back(h);
      }
      checked(h, p);
      seq = std::move(out);
    }
    return checked(dense(dropout(seq.back()), "out"), "out");
  }

  // Causal dilated convolution: out_t = b + sum_j in_{t - j*d} W_j^T, taps
  // reaching before the first timestep contribute nothing.
  std::vector<Var> causal_conv(const std::vector<Var>& in, const std::string& p, std::size_t dilation) {
    std::vector<Var> out;
    for (std::size_t t = 0; t < in.size(); ++t) {
      Var acc = tape.linear(in[t], param(p + ".W0"), param(p + ".b"));
      for (std::size_t j = 1; j < spec_.kernel_size && j * dilation <= t; ++j) {
        acc = tape.add(acc, tape.linear_nobias(in[t - j * dilation], param(p + ".W" + std::to_string(j))));
      }
      out.push_back(acc);
    }
    return out;
  }

  Var tcn(const std::vector<Var>& steps) {
    std::vector<Var> seq;
    for (auto s : steps) seq.push_back(dense(s, "in"));
    std::size_t dilation = 1;
    for (std::size_t b = 0; b < spec_.num_blocks; ++b) {
      const std::string p = "tcn" + std::to_string(b);
      auto h = causal_conv(seq, p + ".conv1", dilation);
      for (auto& v : h) v = dropout(tape.relu(v));
      h = causal_conv(h, p + ".conv2", dilation);
      for (auto& v : h) v = dropout(tape.relu(v));
      for (std::size_t t = 0; t < seq.size(); ++t) h[t] = tape.relu(tape.add(h[t], seq[t]));
      checked(h.back(), p);
      seq = std::move(h);
      dilation *= spec_.dilation_base;
    }
    return checked(dense(seq.back(), "out"), "out");
  }

  const ModelSpec& spec_;
  const ParameterSet& params_;
  Gradients* grads_;
  Mode mode_;
  std::mt19937_64 rng_;
  std::vector<std::optional<Var>> vars_;
};

Gradients zero_grads(const ParameterSet& p) {
  Gradients g;
  g.reserve(p.values.size());
  for (const auto& v : p.values) g.push_back(Eigen::MatrixXd::Zero(v.rows(), v.cols()));
  return g;
}

}  // namespace

SequenceBatch make_batch(const DatasetVariant& v, std::span<const std::size_t> rows) {
  SequenceBatch batch(v.window, Eigen::MatrixXd(static_cast<Eigen::Index>(rows.size()),
                                                static_cast<Eigen::Index>(v.features)));
  for (std::size_t b = 0; b < rows.size(); ++b) {
    for (std::size_t t = 0; t < v.window; ++t) {
      for (std::size_t f = 0; f < v.features; ++f) {
        batch[t](static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(f)) = v.at(rows[b], t, f);
      }
    }
  }
  return batch;
}

Eigen::MatrixXd make_targets(const DatasetVariant& v, std::span<const std::size_t> rows) {
  Eigen::MatrixXd y(static_cast<Eigen::Index>(rows.size()), 1);
  for (std::size_t b = 0; b < rows.size(); ++b) y(static_cast<Eigen::Index>(b), 0) = v.y[rows[b]];
  return y;
}

Eigen::MatrixXd forward(const ModelSpec& spec, const ParameterSet& params, const SequenceBatch& batch, Mode mode,
                        std::uint64_t dropout_seed) {
  Graph g(spec, params, nullptr, mode, dropout_seed);
  return g.tape.value(g.build(batch));
}

MixtureParts nnhmm_parts(const ModelSpec& spec, const ParameterSet& params, const SequenceBatch& batch) {
  if (spec.arch != Arch::NN_HMM) throw ParameterError("nnhmm_parts: not an NN_HMM spec");
  Graph g(spec, params, nullptr, Mode::Inference, 0);
  std::vector<Var> steps;
  for (const auto& s : batch) steps.push_back(g.tape.constant(s));
  MixtureParts parts;
  g.nnhmm(steps, &parts);
  return parts;
}

LossAndGrad loss_and_grad(const ModelSpec& spec, const ParameterSet& params, const SequenceBatch& batch,
                          const Eigen::MatrixXd& targets, Mode mode, std::uint64_t dropout_seed) {
  LossAndGrad out;
  out.grads = zero_grads(params);
  Graph g(spec, params, &out.grads, mode, dropout_seed);
  const Var pred = g.build(batch);
  const Var loss = g.tape.mse(pred, targets);
  out.loss = g.tape.value(loss)(0, 0);
  if (!std::isfinite(out.loss)) throw NumericError("non-finite loss");
  g.tape.backward(loss);
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kEpsilon = 1e-8;

void adam_step(ParameterSet& p, const Gradients& g, double lr) {
  ++p.step;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(p.step));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(p.step));
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    p.first_moment[i] = kBeta1 * p.first_moment[i] + (1.0 - kBeta1) * g[i];
    p.second_moment[i] = kBeta2 * p.second_moment[i] + (1.0 - kBeta2) * g[i].cwiseProduct(g[i]);
    p.values[i].array() -=
        lr * (p.first_moment[i].array() / c1) / ((p.second_moment[i].array() / c2).sqrt() + kEpsilon);
  }
}

double validation_mse(const TrainedModel& m, const DatasetVariant& v, std::span<const std::size_t> rows) {
  const auto pred = predict_rows(m, v, rows);
  double s = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) s += (pred[i] - v.y[rows[i]]) * (pred[i] - v.y[rows[i]]);
  return s / static_cast<double>(rows.size());
}

}  // namespace

TrainedModel train(const ModelSpec& spec, const DatasetVariant& variant, const Fold* fold) {
  spec.validate();
  if (spec.input_dim != variant.features || spec.window != variant.window) {
    throw ParameterError("train: spec shape does not match the variant");
  }
  const std::vector<std::size_t>& rows = fold ? fold->fit : variant.train;
  if (rows.empty()) throw DataError("train: no training rows");
  if (spec.batch_size > rows.size()) throw ParameterError("train: batch size exceeds training rows");
  if (fold && fold->validate.empty()) throw DataError("train: empty validation fold");

  TrainedModel model{spec, init_params(spec), {}};
  std::mt19937_64 rng(hash_combine(spec.seed, 0x747261696eULL));
  std::vector<std::size_t> order = rows;

  for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
    if (variant.shuffle_train) std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t lo = 0; lo < order.size(); lo += spec.batch_size) {
      const std::size_t hi = std::min(order.size(), lo + spec.batch_size);
      const std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      const std::uint64_t mask_seed = rng();
      LossAndGrad lg;
      try {
        lg = loss_and_grad(spec, model.params, make_batch(variant, idx), make_targets(variant, idx), Mode::Training,
                           mask_seed);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
      }
      adam_step(model.params, lg.grads, spec.learning_rate);
      total += lg.loss * static_cast<double>(idx.size());
    }
    const double epoch_loss = total / static_cast<double>(order.size());
    if (!std::isfinite(epoch_loss) || !model.params.all_finite()) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch));
    }
    model.history.train_loss.push_back(epoch_loss);
    if (fold) model.history.validation_loss.push_back(validation_mse(model, variant, fold->validate));
  }
  return model;
}

std::vector<double> predict(const TrainedModel& model, const SequenceBatch& batch) {
  const Eigen::MatrixXd out = forward(model.spec, model.params, batch, Mode::Inference);
  std::vector<double> pred(static_cast<std::size_t>(out.rows()));
  for (Eigen::Index i = 0; i < out.rows(); ++i) pred[static_cast<std::size_t>(i)] = out(i, 0);
  return pred;
}

std::vector<double> predict_rows(const TrainedModel& model, const DatasetVariant& v,
                                 std::span<const std::size_t> rows) {
  constexpr std::size_t kChunk = 512;
  std::vector<double> out;
  out.reserve(rows.size());
  for (std::size_t lo = 0; lo < rows.size(); lo += kChunk) {
    const auto part = rows.subspan(lo, std::min(kChunk, rows.size() - lo));
    const auto p = predict(model, make_batch(v, part));
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

SearchResult hyperparameter_search(const ModelSpec& base, const SearchSpace& space, std::size_t budget,
                                   const DatasetVariant& variant, std::uint64_t seed, std::size_t folds,
                                   std::optional<std::size_t> search_epochs) {
  if (budget < 1) throw ParameterError("hyperparameter_search: budget must be >= 1");
  if (space.hidden_dims.empty() || space.batch_sizes.empty()) throw ParameterError("empty search space");
  const auto fold_set = kfold_split(variant.train, folds, seed, !variant.shuffle_train);

  std::mt19937_64 rng(seed);
  SearchResult result;
  std::optional<std::size_t> best;
  for (std::size_t t = 0; t < budget; ++t) {
    Trial trial;
    trial.spec = base;
    trial.spec.hidden_dim = space.hidden_dims[std::uniform_int_distribution<std::size_t>(0, space.hidden_dims.size() - 1)(rng)];
    trial.spec.dropout = std::uniform_real_distribution<double>(space.dropout_min, space.dropout_max)(rng);
    trial.spec.learning_rate =
        std::exp(std::uniform_real_distribution<double>(std::log(space.lr_min), std::log(space.lr_max))(rng));
    trial.spec.batch_size =
        space.batch_sizes[std::uniform_int_distribution<std::size_t>(0, space.batch_sizes.size() - 1)(rng)];
    trial.spec.seed = hash_combine(seed, t);
    if (trial.spec.dropout >= 1.0) trial.spec.dropout = 0.0;

    ModelSpec run_spec = trial.spec;
    if (search_epochs) run_spec.epochs = *search_epochs;
    try {
      double score = 0.0;
      for (const auto& fold : fold_set) {
        ModelSpec fs = run_spec;
        fs.batch_size = std::min(fs.batch_size, fold.fit.size());
        const TrainedModel m = train(fs, variant, &fold);
        score += m.history.validation_loss.empty() ? validation_mse(m, variant, fold.validate)
                                                   : m.history.validation_loss.back();
      }
      trial.score = score / static_cast<double>(fold_set.size());
      if (!std::isfinite(trial.score)) throw NumericError("non-finite validation score");
    } catch (const NumericError& e) {
      trial.diverged = true;
      trial.error = e.what();
      trial.score = std::numeric_limits<double>::infinity();
    }
    if (!trial.diverged && (!best || trial.score < result.trials[*best].score)) best = result.trials.size();
    result.trials.push_back(std::move(trial));
  }
  if (!best) {
    std::string log = "hyperparameter search: all " + std::to_string(budget) + " trials diverged:";
    for (const auto& tr : result.trials) log += "\n  " + tr.error;
    throw NumericError(log);
  }
  result.best = result.trials[*best].spec;
  result.best_score = result.trials[*best].score;
  return result;
}

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json to_json(const ModelSpec& s) {
  return {{"arch", std::string(to_string(s.arch))},
          {"input_dim", s.input_dim},
          {"window", s.window},
          {"output_dim", s.output_dim},
          {"hidden_dim", s.hidden_dim},
          {"num_hidden_layers", s.num_hidden_layers},
          {"dropout", s.dropout},
          {"learning_rate", s.learning_rate},
          {"batch_size", s.batch_size},
          {"epochs", s.epochs},
          {"seed", s.seed},
          {"kernel_size", s.kernel_size},
          {"num_blocks", s.num_blocks},
          {"dilation_base", s.dilation_base},
          {"num_states", s.num_states}};
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
  ModelSpec s;
  s.arch = parse_arch(j.at("arch").get<std::string>());
  s.input_dim = j.at("input_dim").get<std::size_t>();
  s.window = j.at("window").get<std::size_t>();
  s.output_dim = j.value("output_dim", std::size_t{1});
  s.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  s.num_hidden_layers = j.at("num_hidden_layers").get<std::size_t>();
  s.dropout = j.at("dropout").get<double>();
  s.learning_rate = j.at("learning_rate").get<double>();
  s.batch_size = j.at("batch_size").get<std::size_t>();
  s.epochs = j.at("epochs").get<std::size_t>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.kernel_size = j.value("kernel_size", std::size_t{3});
  s.num_blocks = j.value("num_blocks", std::size_t{3});
  s.dilation_base = j.value("dilation_base", std::size_t{2});
  s.num_states = j.value("num_states", std::size_t{4});
  return s;
}

namespace {
constexpr char kBlobMagic[8] = {'N', 'C', 'W', 'E', 'I', 'G', 'H', 'T'};
constexpr int kModelFormat = 1;
}  // namespace

void save_model(const TrainedModel& model, const std::filesystem::path& stem) {
  nlohmann::json j;
  j["format"] = kModelFormat;
  j["spec"] = to_json(model.spec);
  j["history"] = {{"train_loss", model.history.train_loss}, {"validation_loss", model.history.validation_loss}};
  j["optimizer_step"] = model.params.step;
  auto tensors = nlohmann::json::array();
  for (std::size_t i = 0; i < model.params.values.size(); ++i) {
    tensors.push_back({{"name", model.params.names[i]},
                       {"rows", model.params.values[i].rows()},
                       {"cols", model.params.values[i].cols()}});
  }
  j["tensors"] = tensors;
  std::filesystem::path json_path = stem;
  json_path += ".json";
  std::filesystem::path bin_path = stem;
  bin_path += ".bin";
  std::ofstream js(json_path);
  if (!js) throw DataError("cannot write " + json_path.string());
  js << j.dump(2) << '\n';
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw DataError("cannot write " + bin_path.string());
  bin.write(kBlobMagic, sizeof kBlobMagic);
  for (const auto* group : {&model.params.values, &model.params.first_moment, &model.params.second_moment}) {
    for (const auto& m : *group) {
      bin.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    }
  }
  if (!bin) throw DataError("write failed for " + bin_path.string());
}

TrainedModel load_model(const std::filesystem::path& stem) {
  std::filesystem::path json_path = stem;
  json_path += ".json";
  std::filesystem::path bin_path = stem;
  bin_path += ".bin";
  std::ifstream js(json_path);
  if (!js) throw DataError("cannot read " + json_path.string());
  const auto j = nlohmann::json::parse(js);
  if (j.value("format", 0) != kModelFormat) throw DataError("unsupported model format in " + json_path.string());
  TrainedModel m;
  m.spec = model_spec_from_json(j.at("spec"));
  m.history.train_loss = j.at("history").at("train_loss").get<std::vector<double>>();
  m.history.validation_loss = j.at("history").at("validation_loss").get<std::vector<double>>();
  m.params = init_params(m.spec);
  m.params.step = j.value("optimizer_step", std::size_t{0});
  const auto& tensors = j.at("tensors");
  if (tensors.size() != m.params.values.size()) throw DataError("model tensor count mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].at("name").get<std::string>() != m.params.names[i] ||
        tensors[i].at("rows").get<Eigen::Index>() != m.params.values[i].rows() ||
        tensors[i].at("cols").get<Eigen::Index>() != m.params.values[i].cols()) {
      throw DataError("model tensor layout mismatch at " + m.params.names[i]);
    }
  }
  std::ifstream bin(bin_path, std::ios::binary);
  char magic[sizeof kBlobMagic];
  bin.read(magic, sizeof magic);
  if (!bin || std::memcmp(magic, kBlobMagic, sizeof magic) != 0) throw DataError("bad weight blob " + bin_path.string());
  for (auto* group : {&m.params.values, &m.params.first_moment, &m.params.second_moment}) {
    for (auto& t : *group) {
      bin.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
  }
  if (!bin) throw DataError("weight blob truncated: " + bin_path.string());
  return m;
}

}  // namespace newscast
