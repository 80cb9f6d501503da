#pragma once

// Dense multilayer perceptrons with forward-propagated derivative jets and
// reverse accumulation through those jets, plus an Adam optimizer.
//
// A jet batch is stored as one matrix of shape (width x blocks*batch). Block 0
// holds values; blocks 1..3 hold first derivatives with respect to the seed
// coordinates (t, x, y); blocks 4..5 hold the pure second derivatives d2/dx2
// and d2/dy2. Every affine layer acts on all blocks with a single product and
// adds the bias to the value block only.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace pir {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;

enum class Activation { Tanh, Identity };

std::string_view to_string(Activation act);
Activation activation_from_string(std::string_view name);

enum Seed : int { kSeedT = 0, kSeedX = 1, kSeedY = 2 };
inline constexpr int kNumSeeds = 3;
inline constexpr int kNumSecond = 2;
// Seed differentiated twice by second-order block j.
inline constexpr std::array<int, kNumSecond> kSecondSeed = {kSeedX, kSeedY};
inline constexpr int kJetBlocks = 1 + kNumSeeds + kNumSecond;

inline constexpr int d1_block(int seed) { return 1 + seed; }
inline constexpr int d2_block(int j) { return 1 + kNumSeeds + j; }

/// Weights (out x in) and biases for every layer. Doubles as the gradient and
/// optimizer-moment container so all three share one shape.
template <typename Scalar>
struct ParamSet {
  std::vector<Matrix<Scalar>> weights;
  std::vector<Vector<Scalar>> biases;

  ParamSet zeros_like() const {
    ParamSet out;
    for (const auto& w : weights) out.weights.push_back(Matrix<Scalar>::Zero(w.rows(), w.cols()));
    for (const auto& b : biases) out.biases.push_back(Vector<Scalar>::Zero(b.size()));
    return out;
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& w : weights) n += static_cast<std::size_t>(w.size());
    for (const auto& b : biases) n += static_cast<std::size_t>(b.size());
    return n;
  }

  // Flat indexing walks all weight matrices (column-major) and then all biases.
  Scalar& at(std::size_t i) {
    for (auto& w : weights) {
      if (i < static_cast<std::size_t>(w.size())) return w.data()[i];
      i -= static_cast<std::size_t>(w.size());
    }
    for (auto& b : biases) {
      if (i < static_cast<std::size_t>(b.size())) return b.data()[i];
      i -= static_cast<std::size_t>(b.size());
    }
    throw std::out_of_range("ParamSet::at: flat index out of range");
  }
  Scalar at(std::size_t i) const { return const_cast<ParamSet&>(*this).at(i); }

  ParamSet& operator+=(const ParamSet& other) {
    for (std::size_t l = 0; l < weights.size(); ++l) weights[l] += other.weights[l];
    for (std::size_t l = 0; l < biases.size(); ++l) biases[l] += other.biases[l];
    return *this;
  }

  ParamSet& operator*=(Scalar s) {
    for (auto& w : weights) w *= s;
    for (auto& b : biases) b *= s;
    return *this;
  }

  bool all_finite() const {
    for (const auto& w : weights)
      if (!w.allFinite()) return false;
    for (const auto& b : biases)
      if (!b.allFinite()) return false;
    return true;
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    if (a.weights.size() != b.weights.size() || a.biases.size() != b.biases.size()) return false;
    for (std::size_t l = 0; l < a.weights.size(); ++l) {
      const auto& x = a.weights[l];
      const auto& y = b.weights[l];
      if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
      if (std::memcmp(x.data(), y.data(), sizeof(Scalar) * x.size()) != 0) return false;
    }
    for (std::size_t l = 0; l < a.biases.size(); ++l) {
      const auto& x = a.biases[l];
      const auto& y = b.biases[l];
      if (x.size() != y.size()) return false;
      if (std::memcmp(x.data(), y.data(), sizeof(Scalar) * x.size()) != 0) return false;
    }
    return true;
  }
};

/// FNV-1a over the raw parameter bytes; equal hashes for bitwise-equal sets.
template <typename Scalar>
std::uint64_t param_hash(const ParamSet<Scalar>& p) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t bytes) {
    const auto* c = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= c[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& w : p.weights) mix(w.data(), sizeof(Scalar) * w.size());
  for (const auto& b : p.biases) mix(b.data(), sizeof(Scalar) * b.size());
  return h;
}

template <typename Scalar>
class Mlp {
 public:
  Mlp() = default;

  // Zero-initialized network. The output layer is always affine; `hidden`
  // applies to every other layer.
  Mlp(std::vector<int> layer_sizes, Activation hidden)
      : layer_sizes_(std::move(layer_sizes)), activation_(hidden) {
    if (layer_sizes_.size() < 2)
      throw std::invalid_argument("Mlp: need at least an input and an output layer");
    for (int n : layer_sizes_)
      if (n <= 0) throw std::invalid_argument("Mlp: layer sizes must be positive");
    for (std::size_t l = 0; l + 1 < layer_sizes_.size(); ++l) {
      params_.weights.push_back(Matrix<Scalar>::Zero(layer_sizes_[l + 1], layer_sizes_[l]));
      params_.biases.push_back(Vector<Scalar>::Zero(layer_sizes_[l + 1]));
    }
  }

  /// Glorot-uniform weights, zero biases.
  template <typename Rng>
  static Mlp xavier(std::vector<int> layer_sizes, Activation hidden, Rng& rng) {
    Mlp net(std::move(layer_sizes), hidden);
    for (auto& w : net.params_.weights) {
      const double a = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
      std::uniform_real_distribution<double> dist(-a, a);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Scalar>(dist(rng));
    }
    return net;
  }

  const std::vector<int>& layer_sizes() const { return layer_sizes_; }
  int num_layers() const { return static_cast<int>(params_.weights.size()); }
  int input_size() const { return layer_sizes_.front(); }
  int output_size() const { return layer_sizes_.back(); }
  Activation activation() const { return activation_; }

  bool is_hidden_tanh(int layer) const {
    return activation_ == Activation::Tanh && layer + 1 < num_layers();
  }

  const ParamSet<Scalar>& params() const { return params_; }
  ParamSet<Scalar>& params() { return params_; }

  Matrix<Scalar>& weight(int l) { return params_.weights[l]; }
  const Matrix<Scalar>& weight(int l) const { return params_.weights[l]; }
  Vector<Scalar>& bias(int l) { return params_.biases[l]; }
  const Vector<Scalar>& bias(int l) const { return params_.biases[l]; }

  // Checks shapes against layer_sizes and that every parameter is finite.
  void validate() const {
    if (params_.weights.size() + 1 != layer_sizes_.size() || params_.biases.size() != params_.weights.size())
      throw std::invalid_argument("Mlp: layer count does not match layer_sizes");
    for (int l = 0; l < num_layers(); ++l) {
      if (weight(l).rows() != layer_sizes_[l + 1] || weight(l).cols() != layer_sizes_[l] ||
          bias(l).size() != layer_sizes_[l + 1])
        throw std::invalid_argument("Mlp: parameter shape mismatch at layer " + std::to_string(l));
    }
    if (!params_.all_finite()) throw std::invalid_argument("Mlp: non-finite parameter");
  }

 private:
  std::vector<int> layer_sizes_;
  Activation activation_ = Activation::Tanh;
  ParamSet<Scalar> params_;
};

/// A batch of jets: one column per batch member in each derivative block.
template <typename Scalar>
class Jet {
 public:
  Jet() = default;
  Jet(int width, int batch) : data_(Matrix<Scalar>::Zero(width, kJetBlocks * batch)), batch_(batch) {}

  // Jet of constants: values set, every derivative zero.
  static Jet constant(const Matrix<Scalar>& values) {
    Jet j(static_cast<int>(values.rows()), static_cast<int>(values.cols()));
    j.value() = values;
    return j;
  }

  // Wraps an already stacked (width x blocks*batch) matrix.
  static Jet from_stacked(Matrix<Scalar> stacked, int batch) {
    if (batch <= 0 || stacked.cols() != kJetBlocks * batch)
      throw std::invalid_argument("Jet: stacked matrix has wrong column count");
    Jet j;
    j.data_ = std::move(stacked);
    j.batch_ = batch;
    return j;
  }

  int width() const { return static_cast<int>(data_.rows()); }
  int batch() const { return batch_; }

  auto block(int b) { return data_.middleCols(b * batch_, batch_); }
  auto block(int b) const { return data_.middleCols(b * batch_, batch_); }
  auto value() { return block(0); }
  auto value() const { return block(0); }
  auto d1(int seed) { return block(d1_block(seed)); }
  auto d1(int seed) const { return block(d1_block(seed)); }
  auto d2(int j) { return block(d2_block(j)); }
  auto d2(int j) const { return block(d2_block(j)); }

  // Marks input row `row` as an affine function of `seed` with slope `scale`.
  void seed(int row, int seed, Scalar scale = Scalar(1)) { d1(seed).row(row).setConstant(scale); }

  const Matrix<Scalar>& stacked() const { return data_; }
  Matrix<Scalar>& stacked() { return data_; }

 private:
  Matrix<Scalar> data_;
  int batch_ = 0;
};

/// Per-layer record of a forward pass, consumed by backward().
template <typename Scalar>
struct Trace {
  std::vector<int> layer_sizes;
  int blocks = 0;
  int batch = 0;
  std::vector<Matrix<Scalar>> inputs;  // input of layer l; inputs[l+1] is its activation output
  std::vector<Matrix<Scalar>> pre;     // affine output of layer l

  bool empty() const { return pre.empty(); }
};

template <typename Scalar>
struct Backprop {
  ParamSet<Scalar> grads;
  Matrix<Scalar> input_grad;  // same stacked layout as the forward input
};

namespace detail {

template <typename Scalar>
Matrix<Scalar> tanh_forward(const Matrix<Scalar>& a, int blocks, int batch) {
  Matrix<Scalar> h(a.rows(), a.cols());
  auto A = [&](int b) { return a.middleCols(b * batch, batch).array(); };
  auto H = [&](int b) { return h.middleCols(b * batch, batch).array(); };
  const auto f = A(0).tanh().eval();
  H(0) = f;
  if (blocks == 1) return h;
  const auto f1 = (Scalar(1) - f.square()).eval();
  const auto f2 = (Scalar(-2) * f * f1).eval();
  for (int k = 0; k < kNumSeeds; ++k) H(d1_block(k)) = f1 * A(d1_block(k));
  for (int j = 0; j < kNumSecond; ++j)
    H(d2_block(j)) = f2 * A(d1_block(kSecondSeed[j])).square() + f1 * A(d2_block(j));
  return h;
}

// Gradient w.r.t. the pre-activation jet given the gradient w.r.t. the tanh
// output jet. `h` is the layer output (its value block is tanh(a)).
template <typename Scalar>
Matrix<Scalar> tanh_backward(const Matrix<Scalar>& g, const Matrix<Scalar>& a, const Matrix<Scalar>& h,
                             int blocks, int batch) {
  Matrix<Scalar> ga(g.rows(), g.cols());
  auto G = [&](int b) { return g.middleCols(b * batch, batch).array(); };
  auto A = [&](int b) { return a.middleCols(b * batch, batch).array(); };
  auto GA = [&](int b) { return ga.middleCols(b * batch, batch).array(); };
  const auto f = h.leftCols(batch).array().eval();
  const auto f1 = (Scalar(1) - f.square()).eval();
  if (blocks == 1) {
    GA(0) = G(0) * f1;
    return ga;
  }
  const auto f2 = (Scalar(-2) * f * f1).eval();

  Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> g_f1 = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Zero(g.rows(), batch);
  Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> g_f2 = g_f1;

  for (int k = 0; k < kNumSeeds; ++k) {
    GA(d1_block(k)) = G(d1_block(k)) * f1;
    g_f1 += G(d1_block(k)) * A(d1_block(k));
  }
  for (int j = 0; j < kNumSecond; ++j) {
    const int s = d1_block(kSecondSeed[j]);
    GA(d2_block(j)) = G(d2_block(j)) * f1;
    GA(s) += Scalar(2) * G(d2_block(j)) * f2 * A(s);
    g_f1 += G(d2_block(j)) * A(d2_block(j));
    g_f2 += G(d2_block(j)) * A(s).square();
  }
  // f1 = 1 - f^2, f2 = -2f + 2f^3
  const auto g_f = (G(0) - Scalar(2) * f * g_f1 + (Scalar(6) * f.square() - Scalar(2)) * g_f2).eval();
  GA(0) = g_f * f1;
  return ga;
}

template <typename Scalar>
Matrix<Scalar> propagate(const Mlp<Scalar>& net, Matrix<Scalar> h, int blocks, int batch, Trace<Scalar>* trace) {
  if (h.rows() != net.input_size())
    throw std::invalid_argument("Mlp: input size " + std::to_string(h.rows()) + " does not match network input " +
                                std::to_string(net.input_size()));
  if (trace) {
    *trace = Trace<Scalar>{};
    trace->layer_sizes = net.layer_sizes();
    trace->blocks = blocks;
    trace->batch = batch;
  }
  for (int l = 0; l < net.num_layers(); ++l) {
    Matrix<Scalar> a = net.weight(l) * h;
    a.leftCols(batch).colwise() += net.bias(l);
    if (trace) trace->inputs.push_back(std::move(h));
    if (net.is_hidden_tanh(l)) {
      h = tanh_forward<Scalar>(a, blocks, batch);
    } else {
      h = a;
    }
    if (trace) trace->pre.push_back(std::move(a));
  }
  if (trace) trace->inputs.push_back(h);
  return h;
}

}  // namespace detail

template <typename Scalar>
Vector<Scalar> forward(const Mlp<Scalar>& net, const std::type_identity_t<Vector<Scalar>>& input) {
  return detail::propagate<Scalar>(net, input, 1, 1, nullptr);
}

/// Column-batched evaluation. Pass a trace to allow backward().
template <typename Scalar>
Matrix<Scalar> forward_batch(const Mlp<Scalar>& net, const std::type_identity_t<Matrix<Scalar>>& inputs, Trace<Scalar>* trace = nullptr) {
  return detail::propagate<Scalar>(net, inputs, 1, static_cast<int>(inputs.cols()), trace);
}

template <typename Scalar>
Jet<Scalar> forward_jet(const Mlp<Scalar>& net, const Jet<Scalar>& input, Trace<Scalar>* trace = nullptr) {
  return Jet<Scalar>::from_stacked(detail::propagate<Scalar>(net, input.stacked(), kJetBlocks, input.batch(), trace),
                                   input.batch());
}

/// Parameter and input gradients of a scalar loss, given d(loss)/d(output) in
/// the same stacked layout as the traced forward pass produced.
template <typename Scalar>
Backprop<Scalar> backward(const Mlp<Scalar>& net, const Trace<Scalar>& trace,
                          const std::type_identity_t<Matrix<Scalar>>& grad_output) {
  if (trace.empty() || trace.layer_sizes != net.layer_sizes() ||
      static_cast<int>(trace.pre.size()) != net.num_layers())
    throw std::logic_error("backward: no matching forward trace for this network");
  const Eigen::Index cols = static_cast<Eigen::Index>(trace.blocks) * trace.batch;
  if (grad_output.rows() != net.output_size() || grad_output.cols() != cols)
    throw std::invalid_argument("backward: output gradient shape does not match the trace");

  Backprop<Scalar> out;
  out.grads = net.params().zeros_like();
  Matrix<Scalar> g = grad_output;
  for (int l = net.num_layers() - 1; l >= 0; --l) {
    if (net.is_hidden_tanh(l))
      g = detail::tanh_backward<Scalar>(g, trace.pre[l], trace.inputs[l + 1], trace.blocks, trace.batch);
    out.grads.weights[l].noalias() = g * trace.inputs[l].transpose();
    out.grads.biases[l] = g.leftCols(trace.batch).rowwise().sum();
    g = net.weight(l).transpose() * g;
  }
  out.input_grad = std::move(g);
  return out;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct AdamState {
  ParamSet<Scalar> m;
  ParamSet<Scalar> v;
  std::int64_t step = 0;
  AdamConfig config;

  static AdamState for_params(const ParamSet<Scalar>& params, AdamConfig config = {}) {
    return AdamState{params.zeros_like(), params.zeros_like(), 0, config};
  }
};

/// Bias-corrected Adam update in place. Throws if any gradient block is
/// non-finite, naming it `<name>.weights[l]` or `<name>.biases[l]`.
template <typename Scalar>
void adam_step(ParamSet<Scalar>& params, const ParamSet<Scalar>& grads, AdamState<Scalar>& state,
               std::string_view name = "params") {
  if (grads.weights.size() != params.weights.size() || state.m.weights.size() != params.weights.size())
    throw std::invalid_argument("adam_step: parameter/gradient/state layer counts differ");
  for (std::size_t l = 0; l < grads.weights.size(); ++l) {
    if (grads.weights[l].rows() != params.weights[l].rows() || grads.weights[l].cols() != params.weights[l].cols() ||
        grads.biases[l].size() != params.biases[l].size())
      throw std::invalid_argument("adam_step: shape mismatch in " + std::string(name) + " layer " + std::to_string(l));
    if (!grads.weights[l].allFinite())
      throw std::domain_error("adam_step: non-finite gradient in " + std::string(name) + ".weights[" +
                              std::to_string(l) + "]");
    if (!grads.biases[l].allFinite())
      throw std::domain_error("adam_step: non-finite gradient in " + std::string(name) + ".biases[" +
                              std::to_string(l) + "]");
  }
  ++state.step;
  const auto& c = state.config;
  const Scalar b1 = static_cast<Scalar>(c.beta1);
  const Scalar b2 = static_cast<Scalar>(c.beta2);
  const Scalar corr1 = Scalar(1) - static_cast<Scalar>(std::pow(c.beta1, static_cast<double>(state.step)));
  const Scalar corr2 = Scalar(1) - static_cast<Scalar>(std::pow(c.beta2, static_cast<double>(state.step)));
  const Scalar lr = static_cast<Scalar>(c.lr);
  const Scalar eps = static_cast<Scalar>(c.eps);
  auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v.array() + (Scalar(1) - b2) * g.array().square();
    p.array() -= lr * (m.array() / corr1) / ((v.array() / corr2).sqrt() + eps);
  };
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    update(params.weights[l], grads.weights[l], state.m.weights[l], state.v.weights[l]);
    update(params.biases[l], grads.biases[l], state.m.biases[l], state.v.biases[l]);
  }
}

}  // namespace pir
