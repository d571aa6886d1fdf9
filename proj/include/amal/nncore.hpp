#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "amal/types.hpp"

namespace amal {

enum class Activation : std::uint8_t { relu = 0, tanh = 1 };

struct MlpParams {
  std::vector<Index> layer_dims;  // input d, hidden..., output C
  std::vector<Matrix> weights;    // weights[k]: (layer_dims[k], layer_dims[k+1])
  std::vector<Vector> biases;     // biases[k]: layer_dims[k+1]
  Activation activation = Activation::relu;

  Index layer_count() const { return static_cast<Index>(weights.size()); }
  Index input_dim() const { return layer_dims.front(); }
  Index output_dim() const { return layer_dims.back(); }
  void validate() const;
};

// Gradient (or velocity) buffers shaped like a parameter set.
struct MlpGrads {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  static MlpGrads zeros_like(const MlpParams& params);
  void set_zero();
  void add_scaled(const MlpGrads& other, double scale);
  double dot(const MlpGrads& other) const;
  double squared_norm() const;
};

struct SgdState {
  double lr0 = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<int> milestones;  // strictly increasing epochs
  double gamma = 0.1;
  bool reset_velocity_at_milestones = false;
  MlpGrads velocity;

  static SgdState for_params(const MlpParams& params, double lr0, double momentum,
                             double weight_decay, std::vector<int> milestones, double gamma);
};

// Zeroes the momentum buffers when entering a milestone epoch, if enabled.
// Call once at the start of each epoch.
void maybe_reset_velocity(SgdState& state, int epoch);

struct Batch {
  std::vector<Index> indices;  // instance ids into the owning dataset
  Matrix features;             // n x d
  std::vector<int> labels;     // length n

  Index size() const { return features.rows(); }
};

// Per-instance loss value and its gradient w.r.t. that instance's logits.
struct LossEval {
  double value = 0.0;
  RowVector dlogits;
};

// Weighted per-instance training loss as a function of the instance's logits.
// pos is the row within the batch, id the dataset instance id.
class InstanceLoss {
 public:
  virtual ~InstanceLoss() = default;
  virtual LossEval eval(Index pos, Index id, const RowVector& logits) const = 0;
};

struct ForwardTrace {
  std::vector<Matrix> layer_inputs;  // layer_inputs[k]: activations entering layer k (n x dims[k])
  Matrix logits;                     // n x C
};

// Glorot-uniform init, deterministic per seed.
MlpParams init_mlp(const std::vector<Index>& dims, Activation activation, std::uint64_t seed);

Matrix forward(const MlpParams& params, const Matrix& features);
ForwardTrace forward_trace(const MlpParams& params, const Matrix& features);

// Backprop of summed upstream logit gradients (one row per batch instance).
// Layers below first_trainable_layer get zero gradient blocks.
MlpGrads backward(const MlpParams& params, const ForwardTrace& trace, const Matrix& dlogits,
                  Index first_trainable_layer = 0);

// Single-row variant for per-instance gradients.
MlpGrads backward_single(const MlpParams& params, const ForwardTrace& trace, Index row,
                         const RowVector& dlogits, Index first_trainable_layer = 0);

// (1/n) * sum_i grad of the weighted loss of instance i.
MlpGrads per_instance_grads(const MlpParams& params, const Batch& batch,
                            const InstanceLoss& loss, Index first_trainable_layer = 0);

struct LayerGrads {
  Matrix weight;
  Vector bias;
};

// Per-instance (not batch-averaged) gradients restricted to the final layer.
std::vector<LayerGrads> last_layer_grads(const MlpParams& params, const Batch& batch,
                                         const InstanceLoss& loss);

double lr_at_epoch(const SgdState& state, int epoch);

// velocity <- momentum*velocity + grads + weight_decay*params;
// params <- params - lr_at_epoch * velocity
void sgd_step(MlpParams& params, const MlpGrads& grads, SgdState& state, int epoch);

// Plain evaluation helpers.
double mean_ce(const MlpParams& params, const Matrix& features, const std::vector<int>& labels);
double accuracy(const MlpParams& params, const Matrix& features, const std::vector<int>& labels);

// Checkpoint file: magic "AMALCKPT", u32 version, u8 activation, u8 dim count,
// u32 dims, then little-endian f64 weights (row-major) and biases per layer.
void save_checkpoint(const MlpParams& params, const std::string& path);
MlpParams load_checkpoint(const std::string& path);

}  // namespace amal
