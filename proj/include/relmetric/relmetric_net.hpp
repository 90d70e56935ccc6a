#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "relmetric/ops.hpp"
#include "relmetric/tape.hpp"

namespace relmetric {

struct NetDims {
  std::size_t context = 200;      // rho
  std::size_t channels = 15;      // kappa
  std::size_t layers = 8;         // lambda
  std::size_t dep_tags = 2;       // |V^dep| including reserved entries
  std::size_t dep_dim = 10;       // beta
  std::size_t max_offset = 1;     // n_max; offsets -n_max..n_max
  std::size_t position_dim = 25;  // gamma
  std::size_t tags = 1;           // |Z|
  std::size_t conv_window = 3;
  bool batch_norm = true;
};

// Scale/shift plus running statistics of one normalization site. The running
// statistics and update counter are buffers, not trained.
struct BatchNormParams {
  Parameter scale, shift, running_mean, running_var, updates;

  BatchNormParams() = default;
  BatchNormParams(const std::string& prefix, std::size_t channels)
      : scale(prefix + ".scale", Tensor({channels}, Real{1})),
        shift(prefix + ".shift", Tensor({channels})),
        running_mean(prefix + ".running_mean", Tensor({channels}), false),
        running_var(prefix + ".running_var", Tensor({channels}, Real{1}), false),
        updates(prefix + ".updates", Tensor({1}), false) {}

  bool has_running_stats() const { return updates.value[0] > Real{0}; }

  void update_running(const ops::BatchNormStats& stats, Real momentum) {
    for (std::size_t k = 0; k < stats.mean.size(); ++k) {
      running_mean.value[k] = momentum * running_mean.value[k] + (Real{1} - momentum) * stats.mean[k];
      running_var.value[k] = momentum * running_var.value[k] + (Real{1} - momentum) * stats.var[k];
    }
    updates.value[0] += Real{1};
  }
};

struct ConvLayerParams {
  Parameter filters;  // [t x t x in x out]
  Parameter bias;     // [out]
};

struct NetParams {
  Parameter metrics;        // R: [kappa x rho x rho]
  Parameter dep_tags;       // F^dep: [|V^dep| x beta]
  Parameter dep_null;       // phi: [beta]
  Parameter positions;      // F^dist: [2 n_max + 1 x gamma]
  std::vector<ConvLayerParams> convs;
  std::optional<BatchNormParams> metric_norm;  // on G
  std::vector<BatchNormParams> layer_norms;    // on L^1 .. L^{lambda-1}

  NetParams() = default;

  NetParams(const NetDims& d, std::mt19937_64& rng, Real stddev) {
    if (d.layers < 2) throw ConfigError("pool stack: at least two layers are required");
    auto normal = [&](std::string name, Shape shape) {
      Tensor t(std::move(shape));
      std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
      for (Real& v : t.values()) v = static_cast<Real>(dist(rng));
      return Parameter(std::move(name), std::move(t));
    };
    metrics = normal("net.metrics", {d.channels, d.context, d.context});
    dep_tags = normal("net.dep_tags", {d.dep_tags, d.dep_dim});
    dep_null = normal("net.dep_null", {d.dep_dim});
    positions = normal("net.positions", {2 * d.max_offset + 1, d.position_dim});
    const std::size_t side = d.dep_dim + d.position_dim;
    for (std::size_t i = 0; i < d.layers; ++i) {
      const std::size_t out = i + 1 == d.layers ? d.tags : d.channels;
      const std::string prefix = "net.conv" + std::to_string(i + 1);
      convs.push_back({normal(prefix + ".filters", {d.conv_window, d.conv_window, d.channels + side, out}),
                       normal(prefix + ".bias", {out})});
    }
    if (d.batch_norm) {
      metric_norm.emplace("net.norm_metric", d.channels);
      for (std::size_t i = 0; i + 1 < d.layers; ++i) layer_norms.emplace_back("net.norm" + std::to_string(i + 1), d.channels);
    }
  }

  std::size_t layers() const { return convs.size(); }

  template <typename Fn>
  void for_each(Fn&& fn) {
    fn(metrics);
    fn(dep_tags);
    fn(dep_null);
    fn(positions);
    for (auto& c : convs) fn(c.filters), fn(c.bias);
    auto norm = [&](BatchNormParams& b) {
      fn(b.scale), fn(b.shift), fn(b.running_mean), fn(b.running_var), fn(b.updates);
    };
    if (metric_norm) norm(*metric_norm);
    for (auto& b : layer_norms) norm(b);
  }
};

// G[i,j,k] = h_i^T R^k h_j.
inline Var metric_tables(Var hidden, Var metrics) { return ops::bilinear_tables(hidden, metrics); }

inline Var dependency_table(Var tag_embeddings, Var null_vector, const std::vector<ops::DepEdge>& edges, std::size_t n) {
  return ops::dependency_table(tag_embeddings, null_vector, edges, n);
}

inline Var position_table(Var offsets, std::size_t n) { return ops::position_table(offsets, n); }

// Normalization site: batch statistics (and a running-average update) while
// training, frozen running statistics at inference.
template <typename Norm>
Var apply_norm(Tape& tape, Norm& norm, Var x, ops::Mode mode, Real momentum) {
  Var scale = tape.parameter(norm.scale);
  Var shift = tape.parameter(norm.shift);
  if (mode == ops::Mode::train) {
    ops::BatchNormStats stats;
    Var out = ops::batch_norm_train(x, scale, shift, &stats);
    if constexpr (!std::is_const_v<Norm>) norm.update_running(stats, momentum);
    return out;
  }
  if (!norm.has_running_stats()) {
    throw ContractError("batch_norm: inference requested before any running statistics were recorded");
  }
  return ops::batch_norm_infer(x, scale, shift, norm.running_mean.value, norm.running_var.value);
}

struct PoolTrace {
  std::vector<Var> layers;  // L^1 .. L^lambda (hidden layers after relu, last layer is the logits)
  Var probs;                // Q
};

// Runs convolution layers `first..lambda` (1-based) of the pooling stack
// starting from `input`, which is G for first == 1 and L^{first-1} otherwise.
// D and P are re-concatenated before every convolution.
template <typename Net>
PoolTrace pool_forward(Tape& tape, Net& net, Var input, Var deps, Var positions, ops::Mode mode, Real momentum,
                       std::size_t first = 1) {
  const std::size_t lambda = net.convs.size();
  if (lambda < 2) throw ConfigError("pool stack: at least two layers are required");
  if (first < 1 || first > lambda) throw ContractError("pool stack: start layer out of range");
  PoolTrace trace;
  Var current = input;
  if (first == 1 && net.metric_norm) current = apply_norm(tape, *net.metric_norm, current, mode, momentum);
  for (std::size_t i = first; i <= lambda; ++i) {
    auto& conv = net.convs[i - 1];
    Var stacked = ops::concat_last({current, deps, positions});
    Var out = ops::conv2d_padded(stacked, tape.parameter(conv.filters), tape.parameter(conv.bias));
    if (i == lambda) {
      trace.layers.push_back(out);
      break;
    }
    out = ops::relu(out);
    trace.layers.push_back(out);
    current = net.layer_norms.empty() ? out : apply_norm(tape, net.layer_norms[i - 1], out, mode, momentum);
  }
  trace.probs = ops::softmax_last(trace.layers.back());
  return trace;
}

// Per-example loss: cell-wise cross-entropy summed over the table, divided by n.
inline Var table_loss(Var probs, const Tensor& one_hot_target) { return ops::table_cross_entropy(probs, one_hot_target); }

}  // namespace relmetric
