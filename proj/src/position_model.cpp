#include "cohere/position_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include <Eigen/Dense>

#include "cohere/errors.hpp"

namespace cohere {

namespace {

using Mat = Eigen::MatrixXd;
using ConstMap = Eigen::Map<const Mat>;
using MutMap = Eigen::Map<Mat>;
using ConstRowMap = Eigen::Map<const Eigen::RowVectorXd>;
using MutRowMap = Eigen::Map<Eigen::RowVectorXd>;

constexpr std::size_t kBlocksPerCell = 3;
constexpr double kProbabilityFloor = 1e-12;

std::string cell_prefix(std::size_t layer, int direction) {
  return "layer" + std::to_string(layer) + (direction == 0 ? ".forward." : ".backward.");
}

std::size_t cell_block_index(std::size_t layer, int direction) {
  return (layer * 2 + static_cast<std::size_t>(direction)) * kBlocksPerCell;
}

struct CellView {
  ConstMap input;
  ConstMap recurrent;
  ConstRowMap bias;
  Eigen::Index hidden;
};

CellView cell_view(const PositionModel& model, std::size_t layer, int direction) {
  const auto& blocks = model.blocks();
  const auto base = cell_block_index(layer, direction);
  const double* p = model.parameters().data();
  const auto& w = blocks[base];
  const auto& u = blocks[base + 1];
  const auto& b = blocks[base + 2];
  return {ConstMap(p + w.offset, static_cast<Eigen::Index>(w.rows), static_cast<Eigen::Index>(w.cols)),
          ConstMap(p + u.offset, static_cast<Eigen::Index>(u.rows), static_cast<Eigen::Index>(u.cols)),
          ConstRowMap(p + b.offset, static_cast<Eigen::Index>(b.cols)), static_cast<Eigen::Index>(u.rows)};
}

struct CellGrad {
  MutMap input;
  MutMap recurrent;
  MutRowMap bias;
};

CellGrad cell_grad(const PositionModel& model, std::vector<double>& grad, std::size_t layer, int direction) {
  const auto& blocks = model.blocks();
  const auto base = cell_block_index(layer, direction);
  double* p = grad.data();
  const auto& w = blocks[base];
  const auto& u = blocks[base + 1];
  const auto& b = blocks[base + 2];
  return {MutMap(p + w.offset, static_cast<Eigen::Index>(w.rows), static_cast<Eigen::Index>(w.cols)),
          MutMap(p + u.offset, static_cast<Eigen::Index>(u.rows), static_cast<Eigen::Index>(u.cols)),
          MutRowMap(p + b.offset, static_cast<Eigen::Index>(b.cols))};
}

Mat sigmoid(const Mat& x) { return (1.0 + (-x.array()).exp()).inverse().matrix(); }

/// Padded batch: inputs[t] is B x input_dim, rows past a sample's length are zero.
struct Batch {
  std::vector<Mat> inputs;
  std::vector<std::vector<std::uint8_t>> active;  // [t][b]
  Eigen::Index size = 0;
  std::size_t steps = 0;
};

Batch make_batch(std::span<const EncodedSentence* const> samples, int input_dim) {
  Batch batch;
  batch.size = static_cast<Eigen::Index>(samples.size());
  std::vector<std::size_t> lengths;
  lengths.reserve(samples.size());
  for (const auto* s : samples) {
    if (s->features.cols() != input_dim) {
      throw std::invalid_argument("encoded sentence has " + std::to_string(s->features.cols()) +
                                  " features, model expects " + std::to_string(input_dim));
    }
    const auto len = s->length();
    if (len == 0) throw DegenerateInput("sentence has no tokens");
    lengths.push_back(len);
    batch.steps = std::max(batch.steps, len);
  }
  batch.inputs.assign(batch.steps, Mat::Zero(batch.size, input_dim));
  batch.active.assign(batch.steps, std::vector<std::uint8_t>(samples.size(), 0));
  for (std::size_t b = 0; b < samples.size(); ++b) {
    for (std::size_t t = 0; t < lengths[b]; ++t) {
      batch.inputs[t].row(static_cast<Eigen::Index>(b)) =
          samples[b]->features.row(static_cast<Eigen::Index>(t)).cast<double>();
      batch.active[t][b] = 1;
    }
  }
  return batch;
}

struct DirectionTrace {
  std::vector<Mat> gates;   // post-activation [i f g o], B x 4H
  std::vector<Mat> cells;   // c_t
  std::vector<Mat> hidden;  // h_t
};

struct LayerTrace {
  std::vector<Mat> inputs;  // what this layer consumed, after the previous layer's dropout
  DirectionTrace forward;
  DirectionTrace backward;
  std::vector<Mat> dropout;  // masks on this layer's per-step outputs (lower layers only)
};

struct ForwardTrace {
  std::vector<LayerTrace> layers;
  Mat readout;       // after dropout
  Mat readout_mask;  // empty when dropout is off
  Mat probs;
};

// Runs one direction. Inactive rows carry their previous state unchanged, so
// the forward direction ends holding the state at the last real token and the
// backward direction stays at zero until it reaches real tokens.
void run_direction(const CellView& cell, const std::vector<Mat>& xs, const std::vector<std::vector<std::uint8_t>>& active,
                   bool reverse, DirectionTrace& trace) {
  const auto steps = xs.size();
  const Eigen::Index batch = xs.front().rows();
  const Eigen::Index h = cell.hidden;
  trace.gates.resize(steps);
  trace.cells.resize(steps);
  trace.hidden.resize(steps);
  Mat hs = Mat::Zero(batch, h);
  Mat cs = Mat::Zero(batch, h);
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t t = reverse ? steps - 1 - k : k;
    Mat z = xs[t] * cell.input + hs * cell.recurrent;
    z.rowwise() += cell.bias;
    Mat gates(batch, 4 * h);
    gates.leftCols(2 * h) = sigmoid(z.leftCols(2 * h));
    gates.middleCols(2 * h, h) = z.middleCols(2 * h, h).array().tanh().matrix();
    gates.rightCols(h) = sigmoid(z.rightCols(h));
    Mat c_new = (gates.middleCols(h, h).array() * cs.array() +
                 gates.leftCols(h).array() * gates.middleCols(2 * h, h).array())
                    .matrix();
    Mat h_new = (gates.rightCols(h).array() * c_new.array().tanh()).matrix();
    for (Eigen::Index b = 0; b < batch; ++b) {
      if (!active[t][static_cast<std::size_t>(b)]) {
        c_new.row(b) = cs.row(b);
        h_new.row(b) = hs.row(b);
      }
    }
    trace.gates[t] = std::move(gates);
    trace.cells[t] = c_new;
    trace.hidden[t] = h_new;
    cs = std::move(c_new);
    hs = std::move(h_new);
  }
}

Mat sample_dropout(Eigen::Index rows, Eigen::Index cols, double rate, std::mt19937_64& rng) {
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  Mat mask(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) mask(i, j) = keep(rng) ? scale : 0.0;
  }
  return mask;
}

// dropout_rng == nullptr means inference mode.
ForwardTrace run_forward(const PositionModel& model, const Batch& batch, std::mt19937_64* dropout_rng) {
  const auto& cfg = model.config();
  const auto n_layers = cfg.layer_widths.size();
  ForwardTrace trace;
  trace.layers.resize(n_layers);
  std::vector<Mat> xs = batch.inputs;
  for (std::size_t l = 0; l < n_layers; ++l) {
    auto& layer = trace.layers[l];
    layer.inputs = std::move(xs);
    run_direction(cell_view(model, l, 0), layer.inputs, batch.active, false, layer.forward);
    run_direction(cell_view(model, l, 1), layer.inputs, batch.active, true, layer.backward);
    const Eigen::Index h = cfg.layer_widths[l];
    const double rate = cfg.layer_dropouts[l];
    const bool drop = dropout_rng != nullptr && rate > 0.0;
    if (l + 1 < n_layers) {
      xs.assign(batch.steps, Mat());
      if (drop) layer.dropout.resize(batch.steps);
      for (std::size_t t = 0; t < batch.steps; ++t) {
        Mat y(batch.size, 2 * h);
        y << layer.forward.hidden[t], layer.backward.hidden[t];
        if (drop) {
          layer.dropout[t] = sample_dropout(batch.size, 2 * h, rate, *dropout_rng);
          y.array() *= layer.dropout[t].array();
        }
        xs[t] = std::move(y);
      }
    } else {
      trace.readout.resize(batch.size, 2 * h);
      trace.readout << layer.forward.hidden[batch.steps - 1], layer.backward.hidden[0];
      if (drop) {
        trace.readout_mask = sample_dropout(batch.size, 2 * h, rate, *dropout_rng);
        trace.readout.array() *= trace.readout_mask.array();
      }
    }
  }
  const auto& wb = model.blocks()[model.blocks().size() - 2];
  const auto& bb = model.blocks().back();
  const double* p = model.parameters().data();
  ConstMap w_out(p + wb.offset, static_cast<Eigen::Index>(wb.rows), static_cast<Eigen::Index>(wb.cols));
  ConstRowMap b_out(p + bb.offset, static_cast<Eigen::Index>(bb.cols));
  Mat logits = trace.readout * w_out;
  logits.rowwise() += b_out;
  Eigen::VectorXd row_max = logits.rowwise().maxCoeff();
  Mat e = (logits.colwise() - row_max).array().exp().matrix();
  Eigen::VectorXd sums = e.rowwise().sum();
  trace.probs = e.array().colwise() / sums.array();
  return trace;
}

void backprop_direction(const CellView& cell, CellGrad& grad, const std::vector<Mat>& xs,
                        const std::vector<std::vector<std::uint8_t>>& active, const DirectionTrace& trace,
                        const std::vector<Mat>& external, bool reverse, std::vector<Mat>& dxs) {
  const auto steps = xs.size();
  const Eigen::Index batch = xs.front().rows();
  const Eigen::Index h = cell.hidden;
  const Mat zero = Mat::Zero(batch, h);
  Mat dh_next = zero;
  Mat dc_next = zero;
  for (std::size_t k = 0; k < steps; ++k) {
    // Visit steps in the reverse of the order the direction ran them.
    const std::size_t t = reverse ? k : steps - 1 - k;
    const bool has_prev = reverse ? t + 1 < steps : t > 0;
    const Mat& h_prev = has_prev ? trace.hidden[reverse ? t + 1 : t - 1] : zero;
    const Mat& c_prev = has_prev ? trace.cells[reverse ? t + 1 : t - 1] : zero;
    const Mat& g = trace.gates[t];
    const auto gi = g.leftCols(h).array();
    const auto gf = g.middleCols(h, h).array();
    const auto gg = g.middleCols(2 * h, h).array();
    const auto go = g.rightCols(h).array();

    Mat dh = dh_next + external[t];
    const Eigen::ArrayXXd tc = trace.cells[t].array().tanh();
    const Eigen::ArrayXXd dc = dc_next.array() + dh.array() * go * (1.0 - tc.square());
    Mat dz(batch, 4 * h);
    dz.leftCols(h) = (dc * gg * gi * (1.0 - gi)).matrix();
    dz.middleCols(h, h) = (dc * c_prev.array() * gf * (1.0 - gf)).matrix();
    dz.middleCols(2 * h, h) = (dc * gi * (1.0 - gg.square())).matrix();
    dz.rightCols(h) = (dh.array() * tc * go * (1.0 - go)).matrix();
    Mat dc_prev = (dc * gf).matrix();
    for (Eigen::Index b = 0; b < batch; ++b) {
      if (!active[t][static_cast<std::size_t>(b)]) {
        dz.row(b).setZero();
        dc_prev.row(b) = dc_next.row(b);
      }
    }
    grad.input.noalias() += xs[t].transpose() * dz;
    grad.recurrent.noalias() += h_prev.transpose() * dz;
    grad.bias += dz.colwise().sum();
    dxs[t].noalias() += dz * cell.input.transpose();
    Mat dh_prev = dz * cell.recurrent.transpose();
    for (Eigen::Index b = 0; b < batch; ++b) {
      if (!active[t][static_cast<std::size_t>(b)]) dh_prev.row(b) = dh.row(b);
    }
    dh_next = std::move(dh_prev);
    dc_next = std::move(dc_prev);
  }
}

struct BatchOutcome {
  double loss_sum = 0;
  std::size_t correct = 0;
};

int argmax(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  Eigen::Index best = 0;
  row.maxCoeff(&best);
  return static_cast<int>(best);
}

// Mean-over-batch cross-entropy. Accumulates its gradient into `grad` when
// non-null.
BatchOutcome forward_backward(const PositionModel& model, std::span<const TrainingSample* const> samples,
                              std::vector<double>* grad, std::mt19937_64* dropout_rng) {
  const auto& cfg = model.config();
  std::vector<const EncodedSentence*> inputs;
  inputs.reserve(samples.size());
  for (const auto* s : samples) {
    if (s->label < 0 || s->label >= cfg.q) throw InvalidLabel("label " + std::to_string(s->label) + " outside [0, q)");
    inputs.push_back(&s->input);
  }
  const Batch batch = make_batch(inputs, cfg.input_dim);
  ForwardTrace trace = run_forward(model, batch, dropout_rng);

  BatchOutcome out;
  for (std::size_t b = 0; b < samples.size(); ++b) {
    const auto row = static_cast<Eigen::Index>(b);
    out.loss_sum += -std::log(std::max(trace.probs(row, samples[b]->label), kProbabilityFloor));
    if (argmax(trace.probs.row(row)) == samples[b]->label) ++out.correct;
  }
  if (grad == nullptr) return out;

  const auto n_layers = cfg.layer_widths.size();
  Mat dlogits = trace.probs;
  for (std::size_t b = 0; b < samples.size(); ++b) dlogits(static_cast<Eigen::Index>(b), samples[b]->label) -= 1.0;
  dlogits /= static_cast<double>(samples.size());

  const auto& wb = model.blocks()[model.blocks().size() - 2];
  const auto& bb = model.blocks().back();
  ConstMap w_out(model.parameters().data() + wb.offset, static_cast<Eigen::Index>(wb.rows),
                 static_cast<Eigen::Index>(wb.cols));
  MutMap gw_out(grad->data() + wb.offset, static_cast<Eigen::Index>(wb.rows), static_cast<Eigen::Index>(wb.cols));
  MutRowMap gb_out(grad->data() + bb.offset, static_cast<Eigen::Index>(bb.cols));
  gw_out.noalias() += trace.readout.transpose() * dlogits;
  gb_out += dlogits.colwise().sum();
  Mat dreadout = dlogits * w_out.transpose();
  if (trace.readout_mask.size() != 0) dreadout.array() *= trace.readout_mask.array();

  // External gradients into each direction's hidden states, per step.
  const Eigen::Index h_top = cfg.layer_widths.back();
  std::vector<Mat> ext_fwd(batch.steps, Mat::Zero(batch.size, h_top));
  std::vector<Mat> ext_bwd(batch.steps, Mat::Zero(batch.size, h_top));
  ext_fwd[batch.steps - 1] = dreadout.leftCols(h_top);
  ext_bwd[0] = dreadout.rightCols(h_top);

  for (std::size_t l = n_layers; l-- > 0;) {
    const auto& layer = trace.layers[l];
    const Eigen::Index in_dim = layer.inputs.front().cols();
    std::vector<Mat> dxs(batch.steps, Mat::Zero(batch.size, in_dim));
    auto gf = cell_grad(model, *grad, l, 0);
    auto gbk = cell_grad(model, *grad, l, 1);
    backprop_direction(cell_view(model, l, 0), gf, layer.inputs, batch.active, layer.forward, ext_fwd, false, dxs);
    backprop_direction(cell_view(model, l, 1), gbk, layer.inputs, batch.active, layer.backward, ext_bwd, true, dxs);
    if (l == 0) break;
    const auto& below = trace.layers[l - 1];
    const Eigen::Index h = cfg.layer_widths[l - 1];
    ext_fwd.assign(batch.steps, Mat());
    ext_bwd.assign(batch.steps, Mat());
    for (std::size_t t = 0; t < batch.steps; ++t) {
      if (!below.dropout.empty()) dxs[t].array() *= below.dropout[t].array();
      ext_fwd[t] = dxs[t].leftCols(h);
      ext_bwd[t] = dxs[t].rightCols(h);
    }
  }
  return out;
}

}  // namespace

void ModelConfig::validate() const {
  if (q < 2) throw InvalidConfig("q must be >= 2");
  if (layer_widths.empty()) throw InvalidConfig("at least one layer is required");
  if (layer_widths.size() != layer_dropouts.size()) {
    throw InvalidConfig("layer_widths and layer_dropouts must have the same length");
  }
  for (int w : layer_widths) {
    if (w < 1) throw InvalidConfig("layer widths must be >= 1");
  }
  for (double d : layer_dropouts) {
    if (!(d >= 0.0 && d < 1.0)) throw InvalidConfig("dropout rates must lie in [0, 1)");
  }
  if (input_dim < 1) throw InvalidConfig("input_dim must be >= 1");
  if (l_max < 1) throw InvalidConfig("l_max must be >= 1");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"q", q},           {"layer_widths", layer_widths}, {"layer_dropouts", layer_dropouts},
          {"input_dim", input_dim}, {"l_max", l_max},           {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.q = j.at("q").get<int>();
    c.layer_widths = j.at("layer_widths").get<std::vector<int>>();
    c.layer_dropouts = j.at("layer_dropouts").get<std::vector<double>>();
    c.input_dim = j.at("input_dim").get<int>();
    c.l_max = j.at("l_max").get<int>();
    c.seed = j.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(std::string("bad model config: ") + e.what());
  }
  c.validate();
  return c;
}

PositionModel::PositionModel(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  std::size_t offset = 0;
  auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
    blocks_.push_back({std::move(name), offset, rows, cols});
    offset += rows * cols;
  };
  auto in = static_cast<std::size_t>(config_.input_dim);
  for (std::size_t l = 0; l < config_.layer_widths.size(); ++l) {
    const auto h = static_cast<std::size_t>(config_.layer_widths[l]);
    for (int dir = 0; dir < 2; ++dir) {
      const auto prefix = cell_prefix(l, dir);
      add(prefix + "input", in, 4 * h);
      add(prefix + "recurrent", h, 4 * h);
      add(prefix + "bias", 1, 4 * h);
    }
    in = 2 * h;
  }
  add("output.weights", in, static_cast<std::size_t>(config_.q));
  add("output.bias", 1, static_cast<std::size_t>(config_.q));
  params_.assign(offset, 0.0);
}

const ParameterBlock& PositionModel::block(const std::string& name) const {
  for (const auto& b : blocks_) {
    if (b.name == name) return b;
  }
  throw std::out_of_range("no parameter block named " + name);
}

void PositionModel::round_to_float() {
  for (double& p : params_) p = static_cast<double>(static_cast<float>(p));
}

bool PositionModel::all_finite() const {
  return std::all_of(params_.begin(), params_.end(), [](double p) { return std::isfinite(p); });
}

PositionModel init_model(const ModelConfig& config) {
  PositionModel model(config);
  std::mt19937_64 rng(config.seed);
  auto params = model.parameters();
  auto glorot = [&](const ParameterBlock& b) {
    const double limit = std::sqrt(6.0 / static_cast<double>(b.rows + b.cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (std::size_t k = 0; k < b.size(); ++k) params[b.offset + k] = dist(rng);
  };
  auto orthogonal = [&](const ParameterBlock& b) {
    // QR of a (cols x rows) Gaussian matrix gives orthonormal columns; its
    // transpose has orthonormal rows.
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto r = static_cast<Eigen::Index>(b.rows);
    const auto c = static_cast<Eigen::Index>(b.cols);
    Mat a(c, r);
    for (Eigen::Index j = 0; j < r; ++j) {
      for (Eigen::Index i = 0; i < c; ++i) a(i, j) = normal(rng);
    }
    Eigen::HouseholderQR<Mat> qr(a);
    Mat q = qr.householderQ() * Mat::Identity(c, r);
    const Mat upper = qr.matrixQR().topRows(r).triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < r; ++j) {
      if (upper(j, j) < 0) q.col(j) *= -1.0;
    }
    MutMap(params.data() + b.offset, r, c) = q.transpose();
  };
  for (std::size_t l = 0; l < config.layer_widths.size(); ++l) {
    const auto h = static_cast<std::size_t>(config.layer_widths[l]);
    for (int dir = 0; dir < 2; ++dir) {
      const auto base = cell_block_index(l, dir);
      glorot(model.blocks()[base]);
      orthogonal(model.blocks()[base + 1]);
      const auto& bias = model.blocks()[base + 2];
      for (std::size_t k = h; k < 2 * h; ++k) params[bias.offset + k] = 1.0;
    }
  }
  glorot(model.blocks()[model.blocks().size() - 2]);
  model.round_to_float();
  return model;
}

std::vector<Ppd> forward_batch(const PositionModel& model, std::span<const EncodedSentence* const> batch) {
  if (batch.empty()) return {};
  const Batch b = make_batch(batch, model.config().input_dim);
  const ForwardTrace trace = run_forward(model, b, nullptr);
  std::vector<Ppd> out(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto row = trace.probs.row(static_cast<Eigen::Index>(i));
    out[i].probs.resize(static_cast<std::size_t>(row.size()));
    for (Eigen::Index k = 0; k < row.size(); ++k) out[i].probs[static_cast<std::size_t>(k)] = row(k);
  }
  return out;
}

Ppd forward(const PositionModel& model, const EncodedSentence& xs) {
  const EncodedSentence* one[] = {&xs};
  return forward_batch(model, one).front();
}

double cross_entropy_loss(const Ppd& ppd, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= ppd.q()) {
    throw InvalidLabel("label " + std::to_string(label) + " outside [0, " + std::to_string(ppd.q()) + ")");
  }
  return -std::log(std::max(ppd.probs[static_cast<std::size_t>(label)], kProbabilityFloor));
}

std::vector<TrainingSample> build_dataset(std::span<const Document> docs, const VectorStore& store,
                                          const Vocab& vocab, int q, std::size_t l_max) {
  std::vector<TrainingSample> out;
  for (const auto& doc : docs) {
    auto encoded = encode_document(doc, store, vocab, l_max);
    for (std::size_t i = 0; i < encoded.size(); ++i) {
      if (encoded[i].degenerate()) continue;
      out.push_back({std::move(encoded[i]), quantile_label(i, doc.size(), q)});
    }
  }
  return out;
}

AdamaxOptimizer::AdamaxOptimizer(std::size_t n_params, AdamaxParams params)
    : p_(params), m_(n_params, 0.0), u_(n_params, 0.0) {}

void AdamaxOptimizer::step(std::span<double> values, std::span<const double> gradient) {
  ++t_;
  const double lr_t = p_.learning_rate / (1.0 - std::pow(p_.beta1, static_cast<double>(t_)));
  for (std::size_t k = 0; k < values.size(); ++k) {
    m_[k] = p_.beta1 * m_[k] + (1.0 - p_.beta1) * gradient[k];
    u_[k] = std::max(p_.beta2 * u_[k], std::abs(gradient[k]));
    values[k] -= lr_t * m_[k] / (u_[k] + p_.epsilon);
  }
}

nlohmann::json TrainHistory::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : epochs) {
    nlohmann::json row{{"train_loss", e.train_loss}, {"train_accuracy", e.train_accuracy}};
    row["validation_loss"] = e.validation_loss ? nlohmann::json(*e.validation_loss) : nlohmann::json();
    row["validation_accuracy"] = e.validation_accuracy ? nlohmann::json(*e.validation_accuracy) : nlohmann::json();
    rows.push_back(std::move(row));
  }
  return {{"epochs", rows}, {"optimizer_steps", optimizer_steps}};
}

TrainResult train(PositionModel model, std::span<const TrainingSample> dataset, const TrainConfig& tc,
                  std::span<const TrainingSample> validation) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  if (tc.epochs < 1 || tc.batch_size < 1) throw InvalidConfig("epochs and batch_size must be >= 1");
  for (const auto& s : dataset) {
    if (s.input.degenerate()) throw DegenerateInput("training set contains a sentence without tokens");
  }
  const auto& cfg = model.config();
  std::mt19937_64 shuffle_rng(tc.shuffle_seed);
  std::seed_seq dropout_seed{cfg.seed, tc.shuffle_seed, std::uint64_t{0x5eed}};
  std::mt19937_64 dropout_rng(dropout_seed);
  AdamaxOptimizer optimizer(model.parameter_count(), tc.optimizer);
  std::vector<double> grad(model.parameter_count());
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch_size = static_cast<std::size_t>(tc.batch_size);

  TrainResult result;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0;
    std::size_t correct = 0;
    std::vector<const TrainingSample*> batch;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + batch_size); ++k) {
        batch.push_back(&dataset[order[k]]);
      }
      std::fill(grad.begin(), grad.end(), 0.0);
      const auto outcome = forward_backward(model, batch, &grad, &dropout_rng);
      if (!std::isfinite(outcome.loss_sum)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch + 1 << ", batch " << start / batch_size + 1
            << " (batch loss " << outcome.loss_sum << ", parameters "
            << (model.all_finite() ? "finite" : "non-finite") << ")";
        throw NonFiniteLoss(msg.str());
      }
      optimizer.step(model.parameters(), grad);
      model.round_to_float();
      loss_sum += outcome.loss_sum;
      correct += outcome.correct;
    }
    EpochStats stats;
    stats.train_loss = loss_sum / static_cast<double>(dataset.size());
    stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(dataset.size());
    if (!validation.empty()) {
      const auto v = evaluate(model, validation);
      stats.validation_loss = v.loss;
      stats.validation_accuracy = v.accuracy;
    }
    result.history.epochs.push_back(stats);
    if (tc.on_epoch) tc.on_epoch(epoch, stats);
  }
  result.history.optimizer_steps = optimizer.steps();
  result.model = std::move(model);
  return result;
}

EvalStats evaluate(const PositionModel& model, std::span<const TrainingSample> dataset, std::size_t batch_size) {
  if (dataset.empty()) return {};
  batch_size = std::max<std::size_t>(batch_size, 1);
  double loss_sum = 0;
  std::size_t correct = 0;
  std::vector<const TrainingSample*> batch;
  for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
    batch.clear();
    for (std::size_t k = start; k < std::min(dataset.size(), start + batch_size); ++k) batch.push_back(&dataset[k]);
    const auto outcome = forward_backward(model, batch, nullptr, nullptr);
    loss_sum += outcome.loss_sum;
    correct += outcome.correct;
  }
  const auto n = static_cast<double>(dataset.size());
  return {loss_sum / n, static_cast<double>(correct) / n};
}

double sample_loss(const PositionModel& model, const TrainingSample& sample) {
  return cross_entropy_loss(forward(model, sample.input), sample.label);
}

std::vector<double> loss_gradient(const PositionModel& model, const TrainingSample& sample) {
  std::vector<double> grad(model.parameter_count(), 0.0);
  const TrainingSample* one[] = {&sample};
  forward_backward(model, one, &grad, nullptr);
  return grad;
}

double compare_gradients(const ParameterLossFn& loss, std::vector<double> params, std::span<const double> analytic,
                         std::span<const std::size_t> indices, double epsilon) {
  if (!(epsilon > 0)) throw std::invalid_argument("epsilon must be positive");
  double worst = 0.0;
  for (auto idx : indices) {
    const double original = params[idx];
    params[idx] = original + epsilon;
    const double up = loss(params);
    params[idx] = original - epsilon;
    const double down = loss(params);
    params[idx] = original;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double err = std::abs(analytic[idx] - numeric) / std::max(std::abs(analytic[idx]) + std::abs(numeric), 1e-8);
    worst = std::max(worst, err);
  }
  return worst;
}

std::vector<std::size_t> gradient_check_indices(const PositionModel& model, std::size_t max_checked,
                                                std::uint64_t seed) {
  const auto n = model.parameter_count();
  const auto want = std::min(max_checked, n);
  std::mt19937_64 rng(seed);
  std::set<std::size_t> chosen;
  for (const auto& b : model.blocks()) {
    if (chosen.size() >= want) break;
    std::uniform_int_distribution<std::size_t> pick(b.offset, b.offset + b.size() - 1);
    chosen.insert(pick(rng));
  }
  std::uniform_int_distribution<std::size_t> any(0, n - 1);
  while (chosen.size() < want) chosen.insert(any(rng));
  return {chosen.begin(), chosen.end()};
}

double gradient_check(const PositionModel& model, const TrainingSample& sample, const GradientCheckOptions& options) {
  const auto analytic = loss_gradient(model, sample);
  const auto indices = gradient_check_indices(model, options.max_checked, options.seed);
  PositionModel probe = model;
  auto loss = [&](std::span<const double> params) {
    std::copy(params.begin(), params.end(), probe.parameters().begin());
    return sample_loss(probe, sample);
  };
  return compare_gradients(loss, {model.parameters().begin(), model.parameters().end()}, analytic, indices,
                           options.epsilon);
}

}  // namespace cohere
