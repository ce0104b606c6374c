#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cmhe {

// Affine map y = W x + b. A layer without bias keeps `bias` empty.
struct Linear {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }
  bool has_bias() const { return bias.size() > 0; }
};

struct NetworkShape {
  int input_dim = 0;
  std::vector<int> hidden;  // tanh layer widths; empty means identity encoder
  int k = 1;                // baseline survival clusters (Z)
  int m = 1;                // treatment effect groups (phi)

  int repr_dim() const { return hidden.empty() ? input_dim : hidden.back(); }
  void validate() const;
};

// Encoder trunk with three heads and the per-group treatment log hazard ratios.
//   head_f : Z-gate logits          (K, with bias)
//   head_g : phi-gate logits        (M, with bias)
//   head_h : per-cluster log hazard (K, no bias; a shift is absorbed by the baseline)
struct CmheParams {
  std::vector<Linear> encoder;
  Linear head_f;
  Linear head_g;
  Linear head_h;
  Eigen::VectorXd omega;

  struct Block {
    std::string name;
    std::span<double> values;
  };
  struct ConstBlock {
    std::string name;
    std::span<const double> values;
  };

  NetworkShape shape() const;
  std::size_t parameter_count() const;
  CmheParams zeros_like() const;

  // Every parameter array in a fixed order; spans alias the storage.
  std::vector<Block> blocks();
  std::vector<ConstBlock> blocks() const;
};

// Closed-form count for a shape, independent of any allocated parameters.
std::size_t parameter_count(const NetworkShape& shape);

// Weights ~ Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases and omega zero.
CmheParams init_params(const NetworkShape& shape, std::uint64_t seed);

// Batched outputs, one row per sample. `activations[0]` is the input and
// `activations.back()` the representation.
struct ForwardOutput {
  std::vector<Eigen::MatrixXd> activations;
  Eigen::MatrixXd f_logits;
  Eigen::MatrixXd g_logits;
  Eigen::MatrixXd h_values;

  const Eigen::MatrixXd& repr() const { return activations.back(); }
};

ForwardOutput forward(const CmheParams& params, const Eigen::MatrixXd& x);

// d(loss)/d(output) for each head, shaped like the forward outputs.
struct UpstreamGradients {
  Eigen::MatrixXd f_logits;
  Eigen::MatrixXd g_logits;
  Eigen::MatrixXd h_values;
};

// Gradients of the composed loss w.r.t. encoder and head parameters. The
// omega block of the result is zero: omega does not pass through the network.
CmheParams backward(const CmheParams& params, const Eigen::MatrixXd& x,
                    const UpstreamGradients& upstream);

// Row-wise normalized exponentials, computed with max subtraction.
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);
Eigen::MatrixXd log_softmax_rows(const Eigen::MatrixXd& logits);

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  AdamOptions options;
  std::vector<Eigen::VectorXd> first_moment;
  std::vector<Eigen::VectorXd> second_moment;
  long step = 0;
};

OptimizerState make_optimizer_state(const CmheParams& params, const AdamOptions& options);

// One bias-corrected Adam step that *descends* along `grads`. Throws before
// touching anything if a gradient entry is not finite.
void adam_step(CmheParams& params, const CmheParams& grads, OptimizerState& state);

// Single-array form used by adam_step; `step` is the 1-based step index.
void adam_update(std::span<double> params, std::span<const double> grads, std::span<double> m,
                 std::span<double> v, long step, const AdamOptions& options);

}  // namespace cmhe
