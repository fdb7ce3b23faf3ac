#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cohere/corpus.hpp"
#include "cohere/embeddings.hpp"
#include "cohere/ppd.hpp"

namespace cohere {

struct ModelConfig {
  int q = 15;
  std::vector<int> layer_widths = {256, 256};  // hidden units per direction
  std::vector<double> layer_dropouts = {0.5, 0.25};
  int input_dim = 900;
  int l_max = 25;
  std::uint64_t seed = 0;

  /// Throws InvalidConfig.
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Location of one weight tensor inside the flat parameter vector. Matrices
/// are stored column-major; gate blocks are ordered input, forget, cell,
/// output.
struct ParameterBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

/// Stacked bidirectional LSTM with a dense softmax head.
///
/// Parameter order (also the serialization order): for each layer, the
/// forward cell then the backward cell, each as input weights
/// (in x 4H), recurrent weights (H x 4H), bias (1 x 4H); then the output
/// weights (2H_top x q) and output bias (1 x q).
class PositionModel {
 public:
  PositionModel() = default;
  /// All parameters zero; see init_model for the trained-from-scratch start.
  explicit PositionModel(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  std::size_t parameter_count() const { return params_.size(); }
  const std::vector<ParameterBlock>& blocks() const { return blocks_; }
  const ParameterBlock& block(const std::string& name) const;

  /// Rounds every parameter to the nearest float. Parameters are kept
  /// float-representable so the float32 model file round-trips exactly.
  void round_to_float();

  bool all_finite() const;

 private:
  ModelConfig config_;
  std::vector<double> params_;
  std::vector<ParameterBlock> blocks_;
};

/// Input weights: Glorot-uniform; recurrent weights: orthogonal; biases zero
/// except the forget gate (1.0). Deterministic in config.seed.
PositionModel init_model(const ModelConfig& config);

/// Throws DegenerateInput when the mask is empty.
Ppd forward(const PositionModel& model, const EncodedSentence& xs);

/// Batched inference. Each output depends only on its own input.
std::vector<Ppd> forward_batch(const PositionModel& model, std::span<const EncodedSentence* const> batch);

/// -log(ppd[label]) with the probability floored at 1e-12.
double cross_entropy_loss(const Ppd& ppd, int label);

struct TrainingSample {
  EncodedSentence input;
  int label = 0;
};

/// One sample per non-degenerate sentence, labelled with its quantile.
std::vector<TrainingSample> build_dataset(std::span<const Document> docs, const VectorStore& store,
                                          const Vocab& vocab, int q, std::size_t l_max);

struct AdamaxParams {
  double learning_rate = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

/// Adamax: first moment with bias correction, infinity-norm second moment.
class AdamaxOptimizer {
 public:
  AdamaxOptimizer(std::size_t n_params, AdamaxParams params);
  void step(std::span<double> values, std::span<const double> gradient);
  std::size_t steps() const { return t_; }

 private:
  AdamaxParams p_;
  std::vector<double> m_;
  std::vector<double> u_;
  std::size_t t_ = 0;
};

struct EpochStats {
  double train_loss = 0;
  double train_accuracy = 0;
  std::optional<double> validation_loss;
  std::optional<double> validation_accuracy;

  friend bool operator==(const EpochStats&, const EpochStats&) = default;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  std::size_t optimizer_steps = 0;

  nlohmann::json to_json() const;
  friend bool operator==(const TrainHistory&, const TrainHistory&) = default;
};

struct TrainConfig {
  int epochs = 10;
  int batch_size = 32;
  AdamaxParams optimizer;
  std::uint64_t shuffle_seed = 0;
  /// Called after every epoch with the 0-based epoch index.
  std::function<void(int, const EpochStats&)> on_epoch;
};

struct TrainResult {
  PositionModel model;
  TrainHistory history;
};

/// Minibatch BPTT with per-layer output dropout and Adamax. Throws
/// NonFiniteLoss if a batch loss is not finite.
TrainResult train(PositionModel model, std::span<const TrainingSample> dataset, const TrainConfig& tc,
                  std::span<const TrainingSample> validation = {});

struct EvalStats {
  double loss = 0;
  double accuracy = 0;
};

EvalStats evaluate(const PositionModel& model, std::span<const TrainingSample> dataset, std::size_t batch_size = 64);

/// Loss of a single sample with dropout off.
double sample_loss(const PositionModel& model, const TrainingSample& sample);

/// Analytic gradient of sample_loss with respect to every parameter.
std::vector<double> loss_gradient(const PositionModel& model, const TrainingSample& sample);

using ParameterLossFn = std::function<double(std::span<const double>)>;

/// max |g_a - g_n| / max(|g_a| + |g_n|, 1e-8) over `indices`, where g_n is
/// the central difference of `loss` with step epsilon.
double compare_gradients(const ParameterLossFn& loss, std::vector<double> params, std::span<const double> analytic,
                         std::span<const std::size_t> indices, double epsilon);

struct GradientCheckOptions {
  double epsilon = 1e-4;
  std::size_t max_checked = 200;
  std::uint64_t seed = 0;
};

/// Indices to check: min(max_checked, |params|) distinct parameters, at least
/// one from every block.
std::vector<std::size_t> gradient_check_indices(const PositionModel& model, std::size_t max_checked,
                                                std::uint64_t seed);

double gradient_check(const PositionModel& model, const TrainingSample& sample,
                      const GradientCheckOptions& options = {});

}  // namespace cohere
