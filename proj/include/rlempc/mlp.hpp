#pragma once

// Fully connected network with rectified-linear hidden layers and a tanh or
// identity output layer, exact reverse-mode gradients, and Adam.

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace rlempc {

enum class OutputActivation { tanh, identity };

std::string to_string(OutputActivation a);
OutputActivation parse_output_activation(const std::string& s);

class MlpNet {
 public:
  /// Per-layer pre-activations and activations from one forward pass.
  struct Cache {
    std::vector<std::vector<double>> pre;
    std::vector<std::vector<double>> act;  // act[0] is the input
  };

  MlpNet() = default;
  MlpNet(std::vector<int> layer_sizes, OutputActivation output);

  const std::vector<int>& layer_sizes() const { return sizes_; }
  OutputActivation output_activation() const { return output_; }
  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  std::size_t parameter_count() const { return params_.size(); }

  /// Flat view: layer by layer, weights (row-major, out x in) then biases.
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  /// Hidden layers U(-1/sqrt(fan_in), 1/sqrt(fan_in)); output layer
  /// U(-final_scale, final_scale).
  void initialize(std::mt19937_64& rng, double final_scale = 3e-3);

  std::vector<double> forward(std::span<const double> input) const;
  std::vector<double> forward(std::span<const double> input, Cache& cache) const;

  /// Accumulates dL/dparams into `param_grad` (same layout as parameters())
  /// given dL/doutput and returns dL/dinput.
  std::vector<double> backward(const Cache& cache, std::span<const double> upstream,
                               std::span<double> param_grad) const;

  /// target <- rate * this + (1 - rate) * target.
  void soft_update_into(MlpNet& target, double rate) const;

 private:
  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }

  std::vector<int> sizes_;
  OutputActivation output_ = OutputActivation::identity;
  std::vector<double> params_;
  std::vector<std::size_t> offsets_;
};

class AdamOptimizer {
 public:
  AdamOptimizer() = default;
  AdamOptimizer(std::size_t n, double learning_rate, double weight_decay = 0.0);

  /// Gradient descent step on `params` with gradient `grad`.
  void step(std::span<double> params, std::span<const double> grad);

  double learning_rate() const { return lr_; }

 private:
  double lr_ = 1e-3;
  double weight_decay_ = 0.0;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  long t_ = 0;
  std::vector<double> m_, v_;
};

}  // namespace rlempc
