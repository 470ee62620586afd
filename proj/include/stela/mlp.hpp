#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "stela/common.hpp"
#include "stela/error.hpp"
#include "stela/rng.hpp"

namespace stela {

// Dense layer: y = x W^T + b, optionally through a rectifier. Weight rows are
// output channels.
template <class S>
struct MlpLayer {
  MatX<S> weight;  // out x in
  VecX<S> bias;    // out
  bool relu = false;

  int in_dim() const { return static_cast<int>(weight.cols()); }
  int out_dim() const { return static_cast<int>(weight.rows()); }
};

template <class S>
struct Mlp {
  std::vector<MlpLayer<S>> layers;

  int input_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  int output_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

  void validate() const {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& layer = layers[l];
      if (layer.weight.rows() != layer.bias.size())
        throw ConfigError("mlp layer " + std::to_string(l) + ": bias/weight rows disagree");
      if (!layer.weight.allFinite() || !layer.bias.allFinite())
        throw ConfigError("mlp layer " + std::to_string(l) + ": non-finite parameters");
      if (l > 0 && layers[l - 1].out_dim() != layer.in_dim())
        throw ConfigError("mlp layer " + std::to_string(l) + ": width does not chain");
    }
  }
};

// Glorot-uniform weights, zero bias, rectifiers between layers and a linear
// output layer. Deterministic in (seed).
template <class S>
Mlp<S> make_mlp(const std::vector<int>& widths, std::uint64_t seed,
                std::string_view tag = "mlp") {
  if (widths.size() < 2) throw ConfigError("mlp needs at least input and output widths");
  Rng rng = Rng::derive(seed, tag);
  Mlp<S> mlp;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int fan_in = widths[l];
    const int fan_out = widths[l + 1];
    if (fan_in < 1 || fan_out < 1) throw ConfigError("mlp widths must be >= 1");
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    MlpLayer<S> layer;
    layer.weight.resize(fan_out, fan_in);
    for (int r = 0; r < fan_out; ++r)
      for (int c = 0; c < fan_in; ++c)
        layer.weight(r, c) = static_cast<S>(rng.uniform(-bound, bound));
    layer.bias = VecX<S>::Zero(fan_out);
    layer.relu = (l + 2 < widths.size());
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

template <class S>
Mlp<S> identity_mlp(int dim) {
  Mlp<S> mlp;
  MlpLayer<S> layer;
  layer.weight = MatX<S>::Identity(dim, dim);
  layer.bias = VecX<S>::Zero(dim);
  layer.relu = false;
  mlp.layers.push_back(std::move(layer));
  return mlp;
}

// Per-layer inputs and pre-activations, kept for the backward pass.
template <class S>
struct MlpCache {
  std::vector<MatX<S>> inputs;       // a_0 .. a_{L-1}
  std::vector<MatX<S>> pre_acts;     // z_1 .. z_L (only retained for relu layers)
};

template <class S>
struct MlpGrad {
  std::vector<MatX<S>> weight;
  std::vector<VecX<S>> bias;

  static MlpGrad zeros_like(const Mlp<S>& mlp) {
    MlpGrad g;
    for (const auto& layer : mlp.layers) {
      g.weight.push_back(MatX<S>::Zero(layer.weight.rows(), layer.weight.cols()));
      g.bias.push_back(VecX<S>::Zero(layer.bias.size()));
    }
    return g;
  }

  MlpGrad& operator+=(const MlpGrad& other) {
    for (std::size_t l = 0; l < weight.size(); ++l) {
      weight[l] += other.weight[l];
      bias[l] += other.bias[l];
    }
    return *this;
  }
};

template <class S>
MatX<S> mlp_forward(const Mlp<S>& mlp, const MatX<S>& x, MlpCache<S>* cache = nullptr) {
  if (!mlp.layers.empty() && x.cols() != mlp.input_dim())
    throw ConfigError("mlp input width " + std::to_string(x.cols()) + " != expected " +
                      std::to_string(mlp.input_dim()));
  MatX<S> a = x;
  if (cache) {
    cache->inputs.clear();
    cache->pre_acts.clear();
  }
  for (const auto& layer : mlp.layers) {
    if (cache) cache->inputs.push_back(a);
    MatX<S> z = a * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    if (layer.relu) {
      if (cache) cache->pre_acts.push_back(z);
      a = z.cwiseMax(S(0));
    } else {
      if (cache) cache->pre_acts.push_back(MatX<S>());
      a = std::move(z);
    }
  }
  return a;
}

// Accumulates parameter gradients into `grad` and returns d(loss)/d(input).
template <class S>
MatX<S> mlp_backward(const Mlp<S>& mlp, const MlpCache<S>& cache, const MatX<S>& d_out,
                     MlpGrad<S>& grad) {
  if (cache.inputs.size() != mlp.layers.size())
    throw UsageError("mlp_backward: cache does not match network");
  MatX<S> d = d_out;
  for (int l = static_cast<int>(mlp.layers.size()) - 1; l >= 0; --l) {
    const auto& layer = mlp.layers[l];
    if (layer.relu) {
      const MatX<S>& z = cache.pre_acts[l];
      d = d.cwiseProduct((z.array() > S(0)).template cast<S>().matrix());
    }
    grad.weight[l] += d.transpose() * cache.inputs[l];
    grad.bias[l] += d.colwise().sum().transpose();
    d = d * layer.weight;
  }
  return d;
}

// Plain gradient-descent step: p -= lr * g.
template <class S>
void mlp_apply_gradient(Mlp<S>& mlp, const MlpGrad<S>& grad, S lr) {
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    mlp.layers[l].weight -= lr * grad.weight[l];
    mlp.layers[l].bias -= lr * grad.bias[l];
  }
}

}  // namespace stela
