#include "rlempc/mlp.hpp"

#include <cmath>
#include <stdexcept>

namespace rlempc {

std::string to_string(OutputActivation a) { return a == OutputActivation::tanh ? "tanh" : "identity"; }

OutputActivation parse_output_activation(const std::string& s) {
  if (s == "tanh") return OutputActivation::tanh;
  if (s == "identity") return OutputActivation::identity;
  throw std::invalid_argument("unknown output activation '" + s + "'");
}

MlpNet::MlpNet(std::vector<int> layer_sizes, OutputActivation output)
    : sizes_(std::move(layer_sizes)), output_(output) {
  if (sizes_.size() < 2) throw std::invalid_argument("MlpNet: need at least input and output layers");
  for (int s : sizes_) {
    if (s < 1) throw std::invalid_argument("MlpNet: layer sizes must be positive");
  }
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    offsets_.push_back(n);
    n += static_cast<std::size_t>(sizes_[l + 1]) * (static_cast<std::size_t>(sizes_[l]) + 1);
  }
  params_.assign(n, 0.0);
}

void MlpNet::initialize(std::mt19937_64& rng, double final_scale) {
  const std::size_t layers = sizes_.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = sizes_[l], out = sizes_[l + 1];
    const double bound = (l + 1 == layers) ? final_scale : 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> uni(-bound, bound);
    double* p = params_.data() + offsets_[l];
    for (std::size_t i = 0; i < out * (in + 1); ++i) p[i] = uni(rng);
  }
}

std::vector<double> MlpNet::forward(std::span<const double> input) const {
  Cache cache;
  return forward(input, cache);
}

std::vector<double> MlpNet::forward(std::span<const double> input, Cache& cache) const {
  if (static_cast<int>(input.size()) != sizes_.front()) {
    throw std::invalid_argument("MlpNet::forward: expected " + std::to_string(sizes_.front()) +
                                " inputs, got " + std::to_string(input.size()));
  }
  const std::size_t layers = sizes_.size() - 1;
  cache.pre.resize(layers);
  cache.act.resize(layers + 1);
  cache.act[0].assign(input.begin(), input.end());
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = sizes_[l], out = sizes_[l + 1];
    const double* W = params_.data() + offsets_[l];
    const double* b = W + out * in;
    const std::vector<double>& a = cache.act[l];
    std::vector<double>& z = cache.pre[l];
    z.assign(out, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      const double* row = W + o * in;
      for (std::size_t i = 0; i < in; ++i) s += row[i] * a[i];
      z[o] = s;
    }
    std::vector<double>& y = cache.act[l + 1];
    y.resize(out);
    const bool last = l + 1 == layers;
    for (std::size_t o = 0; o < out; ++o) {
      if (!last) {
        y[o] = z[o] > 0.0 ? z[o] : 0.0;
      } else {
        y[o] = output_ == OutputActivation::tanh ? std::tanh(z[o]) : z[o];
      }
    }
  }
  return cache.act.back();
}

std::vector<double> MlpNet::backward(const Cache& cache, std::span<const double> upstream,
                                     std::span<double> param_grad) const {
  if (static_cast<int>(upstream.size()) != sizes_.back()) {
    throw std::invalid_argument("MlpNet::backward: upstream gradient has wrong size");
  }
  if (param_grad.size() != params_.size()) {
    throw std::invalid_argument("MlpNet::backward: parameter gradient has wrong size");
  }
  const std::size_t layers = sizes_.size() - 1;
  std::vector<double> delta(upstream.begin(), upstream.end());
  // Through the output activation.
  if (output_ == OutputActivation::tanh) {
    const std::vector<double>& y = cache.act.back();
    for (std::size_t o = 0; o < delta.size(); ++o) delta[o] *= 1.0 - y[o] * y[o];
  }
  for (std::size_t l = layers; l-- > 0;) {
    const std::size_t in = sizes_[l], out = sizes_[l + 1];
    const double* W = params_.data() + offsets_[l];
    double* gW = param_grad.data() + offsets_[l];
    double* gb = gW + out * in;
    const std::vector<double>& a = cache.act[l];
    std::vector<double> prev(in, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      gb[o] += d;
      const double* row = W + o * in;
      double* grow = gW + o * in;
      for (std::size_t i = 0; i < in; ++i) {
        grow[i] += d * a[i];
        prev[i] += d * row[i];
      }
    }
    if (l > 0) {
      const std::vector<double>& z = cache.pre[l - 1];
      for (std::size_t i = 0; i < in; ++i) {
        if (!(z[i] > 0.0)) prev[i] = 0.0;
      }
    }
    delta = std::move(prev);
  }
  return delta;
}

void MlpNet::soft_update_into(MlpNet& target, double rate) const {
  if (target.params_.size() != params_.size()) {
    throw std::invalid_argument("soft_update: network shapes differ");
  }
  if (rate == 1.0) {
    target.params_ = params_;
    return;
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    target.params_[i] = rate * params_[i] + (1.0 - rate) * target.params_[i];
  }
}

AdamOptimizer::AdamOptimizer(std::size_t n, double learning_rate, double weight_decay)
    : lr_(learning_rate), weight_decay_(weight_decay), m_(n, 0.0), v_(n, 0.0) {}

void AdamOptimizer::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw std::invalid_argument("AdamOptimizer::step: size mismatch");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i] + weight_decay_ * params[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

}  // namespace rlempc
