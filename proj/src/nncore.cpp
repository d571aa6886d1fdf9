#include "amal/nncore.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "amal/losses.hpp"
#include "amal/rng.hpp"

namespace amal {

namespace {

void check_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw ShapeError(std::string(what) + ": non-finite entries");
}

Matrix apply_activation(const Matrix& z, Activation act) {
  if (act == Activation::relu) return z.cwiseMax(0.0);
  return z.array().tanh();
}

// Derivative expressed through the activation output (relu: a>0; tanh: 1-a^2).
Matrix activation_deriv_from_output(const Matrix& a, Activation act) {
  if (act == Activation::relu)
    return (a.array() > 0.0).cast<double>();
  return 1.0 - a.array().square();
}

}  // namespace

void MlpParams::validate() const {
  if (layer_dims.size() < 2) throw ShapeError("MlpParams: need at least input and output dims");
  if (weights.size() + 1 != layer_dims.size() || biases.size() != weights.size())
    throw ShapeError("MlpParams: layer count mismatch");
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (weights[k].rows() != layer_dims[k] || weights[k].cols() != layer_dims[k + 1])
      throw ShapeError("MlpParams: weight shape mismatch at layer " + std::to_string(k));
    if (biases[k].size() != layer_dims[k + 1])
      throw ShapeError("MlpParams: bias length mismatch at layer " + std::to_string(k));
    if (!weights[k].allFinite() || !biases[k].allFinite())
      throw ShapeError("MlpParams: non-finite parameters at layer " + std::to_string(k));
  }
}

MlpGrads MlpGrads::zeros_like(const MlpParams& params) {
  MlpGrads g;
  g.weights.reserve(params.weights.size());
  g.biases.reserve(params.biases.size());
  for (const auto& w : params.weights) g.weights.push_back(Matrix::Zero(w.rows(), w.cols()));
  for (const auto& b : params.biases) g.biases.push_back(Vector::Zero(b.size()));
  return g;
}

void MlpGrads::set_zero() {
  for (auto& w : weights) w.setZero();
  for (auto& b : biases) b.setZero();
}

void MlpGrads::add_scaled(const MlpGrads& other, double scale) {
  for (std::size_t k = 0; k < weights.size(); ++k) {
    weights[k] += scale * other.weights[k];
    biases[k] += scale * other.biases[k];
  }
}

double MlpGrads::dot(const MlpGrads& other) const {
  double s = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    s += (weights[k].array() * other.weights[k].array()).sum();
    s += biases[k].dot(other.biases[k]);
  }
  return s;
}

double MlpGrads::squared_norm() const { return dot(*this); }

SgdState SgdState::for_params(const MlpParams& params, double lr0, double momentum,
                              double weight_decay, std::vector<int> milestones, double gamma) {
  if (lr0 <= 0.0) throw ConfigError("SgdState: lr0 must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("SgdState: momentum must be in [0,1)");
  if (weight_decay < 0.0) throw ConfigError("SgdState: weight_decay must be non-negative");
  if (gamma <= 0.0) throw ConfigError("SgdState: gamma must be positive");
  for (std::size_t i = 1; i < milestones.size(); ++i)
    if (milestones[i] <= milestones[i - 1])
      throw ConfigError("SgdState: milestones must be strictly increasing");
  SgdState s;
  s.lr0 = lr0;
  s.momentum = momentum;
  s.weight_decay = weight_decay;
  s.milestones = std::move(milestones);
  s.gamma = gamma;
  s.velocity = MlpGrads::zeros_like(params);
  return s;
}

MlpParams init_mlp(const std::vector<Index>& dims, Activation activation, std::uint64_t seed) {
  if (dims.size() < 2) throw ConfigError("init_mlp: need at least input and output dims");
  for (Index d : dims)
    if (d < 1) throw ConfigError("init_mlp: all layer dims must be positive");
  MlpParams p;
  p.layer_dims = dims;
  p.activation = activation;
  Rng rng = make_rng(seed);
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    Index fan_in = dims[k], fan_out = dims[k + 1];
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Matrix w(fan_in, fan_out);
    for (Index r = 0; r < fan_in; ++r)
      for (Index c = 0; c < fan_out; ++c) w(r, c) = uniform_range(rng, -bound, bound);
    p.weights.push_back(std::move(w));
    p.biases.push_back(Vector::Zero(fan_out));
  }
  return p;
}

ForwardTrace forward_trace(const MlpParams& params, const Matrix& features) {
  params.validate();
  if (features.cols() != params.input_dim())
    throw ShapeError("forward: features have " + std::to_string(features.cols()) +
                     " columns, expected " + std::to_string(params.input_dim()));
  ForwardTrace trace;
  const Index layers = params.layer_count();
  trace.layer_inputs.reserve(static_cast<std::size_t>(layers));
  trace.layer_inputs.push_back(features);
  for (Index k = 0; k < layers; ++k) {
    const Matrix& a = trace.layer_inputs.back();
    Matrix z = (a * params.weights[static_cast<std::size_t>(k)]).rowwise() +
               params.biases[static_cast<std::size_t>(k)].transpose();
    if (k + 1 == layers) {
      trace.logits = std::move(z);
    } else {
      trace.layer_inputs.push_back(apply_activation(z, params.activation));
    }
  }
  check_finite(trace.logits, "forward");
  return trace;
}

Matrix forward(const MlpParams& params, const Matrix& features) {
  return forward_trace(params, features).logits;
}

MlpGrads backward(const MlpParams& params, const ForwardTrace& trace, const Matrix& dlogits,
                  Index first_trainable_layer) {
  const Index layers = params.layer_count();
  MlpGrads grads = MlpGrads::zeros_like(params);
  Matrix delta = dlogits;  // gradient w.r.t. pre-activation of the current layer
  for (Index k = layers - 1; k >= 0; --k) {
    const Matrix& a = trace.layer_inputs[static_cast<std::size_t>(k)];
    if (k >= first_trainable_layer) {
      grads.weights[static_cast<std::size_t>(k)] = a.transpose() * delta;
      grads.biases[static_cast<std::size_t>(k)] = delta.colwise().sum().transpose();
    }
    if (k == 0 || k <= first_trainable_layer) break;
    Matrix da = delta * params.weights[static_cast<std::size_t>(k)].transpose();
    delta = da.array() * activation_deriv_from_output(a, params.activation).array();
  }
  return grads;
}

MlpGrads backward_single(const MlpParams& params, const ForwardTrace& trace, Index row,
                         const RowVector& dlogits, Index first_trainable_layer) {
  const Index layers = params.layer_count();
  MlpGrads grads = MlpGrads::zeros_like(params);
  RowVector delta = dlogits;
  for (Index k = layers - 1; k >= 0; --k) {
    RowVector a = trace.layer_inputs[static_cast<std::size_t>(k)].row(row);
    if (k >= first_trainable_layer) {
      grads.weights[static_cast<std::size_t>(k)] = a.transpose() * delta;
      grads.biases[static_cast<std::size_t>(k)] = delta.transpose();
    }
    if (k == 0 || k <= first_trainable_layer) break;
    RowVector da = delta * params.weights[static_cast<std::size_t>(k)].transpose();
    RowVector deriv = (params.activation == Activation::relu)
                          ? (a.array() > 0.0).cast<double>().matrix().eval()
                          : (1.0 - a.array().square()).matrix().eval();
    delta = da.array() * deriv.array();
  }
  return grads;
}

namespace {

// Evaluate the loss for every batch row, with finiteness attribution.
Matrix eval_dlogits(const Batch& batch, const ForwardTrace& trace, const InstanceLoss& loss) {
  const Index n = batch.size();
  Matrix dlogits(n, trace.logits.cols());
  for (Index i = 0; i < n; ++i) {
    LossEval e = loss.eval(i, batch.indices[static_cast<std::size_t>(i)], trace.logits.row(i));
    if (!std::isfinite(e.value) || !e.dlogits.allFinite())
      throw NumericError("per-instance loss is non-finite",
                         batch.indices[static_cast<std::size_t>(i)]);
    dlogits.row(i) = e.dlogits;
  }
  return dlogits;
}

}  // namespace

MlpGrads per_instance_grads(const MlpParams& params, const Batch& batch, const InstanceLoss& loss,
                            Index first_trainable_layer) {
  if (batch.size() < 1) throw ShapeError("per_instance_grads: empty batch");
  ForwardTrace trace = forward_trace(params, batch.features);
  Matrix dlogits = eval_dlogits(batch, trace, loss);
  MlpGrads grads = backward(params, trace, dlogits, first_trainable_layer);
  double inv_n = 1.0 / static_cast<double>(batch.size());
  for (auto& w : grads.weights) w *= inv_n;
  for (auto& b : grads.biases) b *= inv_n;
  return grads;
}

std::vector<LayerGrads> last_layer_grads(const MlpParams& params, const Batch& batch,
                                         const InstanceLoss& loss) {
  ForwardTrace trace = forward_trace(params, batch.features);
  Matrix dlogits = eval_dlogits(batch, trace, loss);
  const Matrix& last_in = trace.layer_inputs.back();
  std::vector<LayerGrads> out;
  out.reserve(static_cast<std::size_t>(batch.size()));
  for (Index i = 0; i < batch.size(); ++i) {
    LayerGrads g;
    g.weight = last_in.row(i).transpose() * dlogits.row(i);
    g.bias = dlogits.row(i).transpose();
    out.push_back(std::move(g));
  }
  return out;
}

void maybe_reset_velocity(SgdState& state, int epoch) {
  if (!state.reset_velocity_at_milestones) return;
  for (int m : state.milestones)
    if (m == epoch) {
      state.velocity.set_zero();
      return;
    }
}

double lr_at_epoch(const SgdState& state, int epoch) {
  if (epoch < 0) throw ConfigError("lr_at_epoch: epoch must be non-negative");
  int hit = 0;
  for (int m : state.milestones)
    if (m <= epoch) ++hit;
  return state.lr0 * std::pow(state.gamma, hit);
}

void sgd_step(MlpParams& params, const MlpGrads& grads, SgdState& state, int epoch) {
  const double lr = lr_at_epoch(state, epoch);
  for (std::size_t k = 0; k < params.weights.size(); ++k) {
    state.velocity.weights[k] = state.momentum * state.velocity.weights[k] + grads.weights[k] +
                                state.weight_decay * params.weights[k];
    state.velocity.biases[k] = state.momentum * state.velocity.biases[k] + grads.biases[k] +
                               state.weight_decay * params.biases[k];
    params.weights[k] -= lr * state.velocity.weights[k];
    params.biases[k] -= lr * state.velocity.biases[k];
  }
}

double mean_ce(const MlpParams& params, const Matrix& features, const std::vector<int>& labels) {
  Matrix logits = forward(params, features);
  double s = 0.0;
  for (Index i = 0; i < logits.rows(); ++i)
    s += ce_loss(logits.row(i), labels[static_cast<std::size_t>(i)]);
  return s / static_cast<double>(logits.rows());
}

double accuracy(const MlpParams& params, const Matrix& features, const std::vector<int>& labels) {
  Matrix logits = forward(params, features);
  Index correct = 0;
  for (Index i = 0; i < logits.rows(); ++i) {
    Index pred;
    logits.row(i).maxCoeff(&pred);
    if (static_cast<int>(pred) == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

namespace {

constexpr char kMagic[8] = {'A', 'M', 'A', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_raw(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& is, const std::string& path) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw ParseError("checkpoint truncated: " + path);
  return v;
}

}  // namespace

void save_checkpoint(const MlpParams& params, const std::string& path) {
  params.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  write_raw(os, kVersion);
  write_raw(os, static_cast<std::uint8_t>(params.activation));
  write_raw(os, static_cast<std::uint8_t>(params.layer_dims.size()));
  for (Index d : params.layer_dims) write_raw(os, static_cast<std::uint32_t>(d));
  for (std::size_t k = 0; k < params.weights.size(); ++k) {
    const Matrix& w = params.weights[k];
    os.write(reinterpret_cast<const char*>(w.data()),
             static_cast<std::streamsize>(sizeof(double)) * w.size());
    const Vector& b = params.biases[k];
    os.write(reinterpret_cast<const char*>(b.data()),
             static_cast<std::streamsize>(sizeof(double)) * b.size());
  }
  if (!os) throw IoError("failed writing checkpoint: " + path);
}

MlpParams load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw ParseError("bad checkpoint magic: " + path);
  auto version = read_raw<std::uint32_t>(is, path);
  if (version != kVersion)
    throw ParseError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
  auto act = read_raw<std::uint8_t>(is, path);
  if (act > 1) throw ParseError("unknown activation tag in checkpoint: " + path);
  auto ndims = read_raw<std::uint8_t>(is, path);
  if (ndims < 2) throw ParseError("checkpoint has fewer than two layer dims: " + path);
  MlpParams p;
  p.activation = static_cast<Activation>(act);
  p.layer_dims.resize(ndims);
  for (auto& d : p.layer_dims) d = static_cast<Index>(read_raw<std::uint32_t>(is, path));
  for (std::size_t k = 0; k + 1 < p.layer_dims.size(); ++k) {
    Matrix w(p.layer_dims[k], p.layer_dims[k + 1]);
    is.read(reinterpret_cast<char*>(w.data()),
            static_cast<std::streamsize>(sizeof(double)) * w.size());
    Vector b(p.layer_dims[k + 1]);
    is.read(reinterpret_cast<char*>(b.data()),
            static_cast<std::streamsize>(sizeof(double)) * b.size());
    if (!is) throw ParseError("checkpoint truncated: " + path);
    p.weights.push_back(std::move(w));
    p.biases.push_back(std::move(b));
  }
  p.validate();
  return p;
}

}  // namespace amal
