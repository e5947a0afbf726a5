#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "tcond/error.hpp"

namespace tcond::nn {

using Matrix = Eigen::MatrixXd;
using Rng = std::mt19937_64;

// Uniform double in [0, 1) from the top 53 bits; the same on every platform.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

enum class Activation { Identity, Relu };

enum class Mode {
  Inference,     // running batch-norm statistics, no dropout
  Training,      // batch statistics (running stats updated), dropout on
  Deterministic, // batch statistics, no dropout, no running-stat update
};

// y = [x[:, :in] W + b | x[:, in:]]. The trailing `passthrough` columns are
// copied unchanged, which is how side inputs ride along to a later fusion.
struct Linear {
  std::size_t in = 0, out = 0, passthrough = 0;
  bool has_bias = true;
  bool frozen = false;
  Matrix weight; // in x out
  Matrix bias;   // 1 x out
};

struct BatchNorm {
  std::size_t width = 0;
  double momentum = 0.1;
  double eps = 1e-5;
  Matrix gamma, beta;                       // 1 x width, trainable
  Eigen::RowVectorXd running_mean, running_var;
};

struct Dropout {
  std::size_t width = 0;
  double rate = 0.0;
};

struct Act {
  std::size_t width = 0;
  Activation fn = Activation::Relu;
};

using Layer = std::variant<Linear, BatchNorm, Dropout, Act>;

struct ParamRef {
  Matrix* value;
  bool trainable;
  bool decays; // weight decay applies (linear weights only)
};

class Network {
public:
  Network() = default;
  explicit Network(std::size_t input_width) : input_width_(input_width) {}

  std::size_t input_width() const noexcept { return input_width_; }
  std::size_t output_width() const {
    return layers_.empty() ? input_width_ : width_after(layers_.size() - 1);
  }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::vector<Layer>& layers() noexcept { return layers_; }

  void add(Layer layer) { layers_.push_back(std::move(layer)); }

  std::size_t width_after(std::size_t i) const {
    return std::visit(
        [](const auto& l) -> std::size_t {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, Linear>)
            return l.out + l.passthrough;
          else
            return l.width;
        },
        layers_.at(i));
  }

  // Parameter tensors in a fixed order: per layer, linear (weight, bias) and
  // batch norm (gamma, beta).
  std::vector<ParamRef> parameters() {
    std::vector<ParamRef> ps;
    for (auto& layer : layers_) {
      if (auto* l = std::get_if<Linear>(&layer)) {
        ps.push_back({&l->weight, !l->frozen, true});
        if (l->has_bias) ps.push_back({&l->bias, !l->frozen, false});
      } else if (auto* b = std::get_if<BatchNorm>(&layer)) {
        ps.push_back({&b->gamma, true, false});
        ps.push_back({&b->beta, true, false});
      }
    }
    return ps;
  }

  std::size_t parameter_count(bool trainable_only = false) const {
    std::size_t n = 0;
    for (const auto& layer : layers_) {
      if (const auto* l = std::get_if<Linear>(&layer)) {
        if (!(trainable_only && l->frozen))
          n += static_cast<std::size_t>(l->weight.size() + l->bias.size());
      } else if (const auto* b = std::get_if<BatchNorm>(&layer)) {
        n += static_cast<std::size_t>(b->gamma.size() + b->beta.size());
      }
    }
    return n;
  }

private:
  std::size_t input_width_ = 0;
  std::vector<Layer> layers_;
};

// Fluent construction with seeded fan-in uniform initialisation,
// W ~ U(-sqrt(3/fan_in), sqrt(3/fan_in)), zero bias.
class NetworkBuilder {
public:
  NetworkBuilder(std::size_t input_width, std::uint64_t seed)
      : net_(input_width), rng_(seed), width_(input_width) {}

  struct LinearOptions {
    bool bias = true;
    bool frozen = false;
    std::size_t passthrough = 0;
  };

  NetworkBuilder& linear(std::size_t out, LinearOptions opt) {
    if (out == 0) throw InvalidInput("linear width must be >= 1");
    if (opt.passthrough >= width_) throw InvalidInput("passthrough exceeds layer input");
    Linear l;
    l.in = width_ - opt.passthrough;
    l.out = out;
    l.passthrough = opt.passthrough;
    l.has_bias = opt.bias;
    l.frozen = opt.frozen;
    const double limit = std::sqrt(3.0 / static_cast<double>(l.in));
    l.weight.resize(static_cast<Eigen::Index>(l.in), static_cast<Eigen::Index>(out));
    for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
        l.weight(r, c) = (2.0 * uniform01(rng_) - 1.0) * limit;
    l.bias = Matrix::Zero(1, opt.bias ? static_cast<Eigen::Index>(out) : 0);
    width_ = out + opt.passthrough;
    net_.add(std::move(l));
    return *this;
  }
  NetworkBuilder& linear(std::size_t out) { return linear(out, LinearOptions{}); }

  NetworkBuilder& batch_norm() {
    BatchNorm b;
    b.width = width_;
    const auto w = static_cast<Eigen::Index>(width_);
    b.gamma = Matrix::Ones(1, w);
    b.beta = Matrix::Zero(1, w);
    b.running_mean = Eigen::RowVectorXd::Zero(w);
    b.running_var = Eigen::RowVectorXd::Ones(w);
    net_.add(std::move(b));
    return *this;
  }

  NetworkBuilder& dropout(double rate) {
    if (!(rate >= 0.0 && rate < 1.0)) throw InvalidInput("dropout rate must lie in [0,1)");
    net_.add(Dropout{width_, rate});
    return *this;
  }

  NetworkBuilder& activation(Activation fn) {
    net_.add(Act{width_, fn});
    return *this;
  }
  NetworkBuilder& relu() { return activation(Activation::Relu); }

  // Replaces the weights of the most recent linear layer.
  NetworkBuilder& set_weights(const Matrix& w) {
    auto* l = std::get_if<Linear>(&net_.layers().back());
    if (!l) throw InvalidInput("set_weights needs a linear layer last");
    if (w.rows() != l->weight.rows() || w.cols() != l->weight.cols())
      throw DimensionMismatch("weight shape", static_cast<std::size_t>(l->weight.size()),
                              static_cast<std::size_t>(w.size()));
    l->weight = w;
    return *this;
  }

  std::size_t width() const noexcept { return width_; }
  Network build() && { return std::move(net_); }
  Network build() const& { return net_; }

private:
  Network net_;
  Rng rng_;
  std::size_t width_;
};

// Per-layer values saved by a forward pass for the backward pass.
struct LayerCache {
  Matrix input;
  Matrix aux;                  // dropout mask / batch-norm x-hat
  Eigen::RowVectorXd inv_std;  // batch norm
};

struct Tape {
  std::vector<LayerCache> caches;
  Matrix output;
};

namespace detail {

inline Matrix linear_forward(const Linear& l, const Matrix& x) {
  const auto in = static_cast<Eigen::Index>(l.in);
  const auto out = static_cast<Eigen::Index>(l.out);
  const auto pass = static_cast<Eigen::Index>(l.passthrough);
  Matrix y(x.rows(), out + pass);
  y.leftCols(out).noalias() = x.leftCols(in) * l.weight;
  if (l.has_bias) y.leftCols(out).rowwise() += l.bias.row(0);
  if (pass) y.rightCols(pass) = x.rightCols(pass);
  return y;
}

} // namespace detail

// Forward pass. With a tape the intermediate values are recorded for backward().
// Training mode updates batch-norm running statistics, hence the mutable net.
inline Matrix forward(Network& net, const Matrix& x, Mode mode, Rng* rng = nullptr,
                      Tape* tape = nullptr) {
  if (static_cast<std::size_t>(x.cols()) != net.input_width())
    throw DimensionMismatch("network input width", net.input_width(),
                            static_cast<std::size_t>(x.cols()));
  if (tape) tape->caches.assign(net.layers().size(), {});
  Matrix h = x;
  const double batch = static_cast<double>(x.rows());
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    auto& layer = net.layers()[i];
    LayerCache* cache = tape ? &tape->caches[i] : nullptr;
    if (cache) cache->input = h;
    if (auto* l = std::get_if<Linear>(&layer)) {
      h = detail::linear_forward(*l, h);
    } else if (auto* b = std::get_if<BatchNorm>(&layer)) {
      if (mode == Mode::Inference) {
        const Eigen::RowVectorXd inv = (b->running_var.array() + b->eps).rsqrt();
        h = ((h.rowwise() - b->running_mean).array().rowwise() * inv.array()).matrix();
      } else {
        const Eigen::RowVectorXd mean = h.colwise().mean();
        h.rowwise() -= mean;
        const Eigen::RowVectorXd var = h.colwise().squaredNorm() / batch;
        const Eigen::RowVectorXd inv = (var.array() + b->eps).rsqrt();
        h = (h.array().rowwise() * inv.array()).matrix();
        if (cache) {
          cache->aux = h;
          cache->inv_std = inv;
        }
        if (mode == Mode::Training) {
          b->running_mean = (1.0 - b->momentum) * b->running_mean + b->momentum * mean;
          b->running_var = (1.0 - b->momentum) * b->running_var + b->momentum * var;
        }
      }
      h = (h.array().rowwise() * b->gamma.row(0).array()).matrix();
      h.rowwise() += b->beta.row(0);
    } else if (auto* d = std::get_if<Dropout>(&layer)) {
      if (mode == Mode::Training && d->rate > 0.0) {
        if (!rng) throw InvalidInput("training-mode dropout needs a generator");
        const double keep = 1.0 - d->rate;
        Matrix mask(h.rows(), h.cols());
        for (Eigen::Index c = 0; c < mask.cols(); ++c)
          for (Eigen::Index r = 0; r < mask.rows(); ++r)
            mask(r, c) = uniform01(*rng) < keep ? 1.0 / keep : 0.0;
        h = h.cwiseProduct(mask);
        if (cache) cache->aux = std::move(mask);
      }
    } else if (auto* a = std::get_if<Act>(&layer)) {
      if (a->fn == Activation::Relu) h = h.cwiseMax(0.0);
    }
  }
  if (tape) tape->output = h;
  return h;
}

// Inference on a const network (running statistics, no dropout). Inference
// mode never writes to the network.
inline Matrix infer(const Network& net, const Matrix& x) {
  return forward(const_cast<Network&>(net), x, Mode::Inference);
}

// Gradients of the loss w.r.t. every tensor of net.parameters(), given the
// gradient w.r.t. the network output. `mode` must match the forward pass.
inline std::vector<Matrix> backward(Network& net, const Tape& tape, Matrix grad, Mode mode) {
  auto params = net.parameters();
  std::vector<Matrix> grads(params.size());
  std::size_t p = params.size();
  const double batch = static_cast<double>(grad.rows());
  for (std::size_t i = net.layers().size(); i-- > 0;) {
    const auto& cache = tape.caches[i];
    auto& layer = net.layers()[i];
    if (auto* l = std::get_if<Linear>(&layer)) {
      const auto in = static_cast<Eigen::Index>(l->in);
      const auto out = static_cast<Eigen::Index>(l->out);
      const auto pass = static_cast<Eigen::Index>(l->passthrough);
      if (l->has_bias) grads[--p] = grad.leftCols(out).colwise().sum();
      grads[--p] = cache.input.leftCols(in).transpose() * grad.leftCols(out);
      Matrix dx(grad.rows(), in + pass);
      dx.leftCols(in).noalias() = grad.leftCols(out) * l->weight.transpose();
      if (pass) dx.rightCols(pass) = grad.rightCols(pass);
      grad = std::move(dx);
    } else if (auto* b = std::get_if<BatchNorm>(&layer)) {
      if (mode == Mode::Inference) {
        const Eigen::RowVectorXd inv = (b->running_var.array() + b->eps).rsqrt();
        const Matrix xhat =
            ((cache.input.rowwise() - b->running_mean).array().rowwise() * inv.array()).matrix();
        grads[--p] = grad.colwise().sum();
        grads[--p] = grad.cwiseProduct(xhat).colwise().sum();
        grad = (grad.array().rowwise() * (b->gamma.row(0).array() * inv.array())).matrix();
      } else {
        const Matrix& xhat = cache.aux;
        grads[--p] = grad.colwise().sum();
        grads[--p] = grad.cwiseProduct(xhat).colwise().sum();
        Matrix dxhat = (grad.array().rowwise() * b->gamma.row(0).array()).matrix();
        const Eigen::RowVectorXd sum_d = dxhat.colwise().sum();
        const Eigen::RowVectorXd sum_dx = dxhat.cwiseProduct(xhat).colwise().sum();
        Matrix dx = batch * dxhat;
        dx.rowwise() -= sum_d;
        dx -= (xhat.array().rowwise() * sum_dx.array()).matrix();
        grad = (dx.array().rowwise() * (cache.inv_std.array() / batch)).matrix();
      }
    } else if (auto* d = std::get_if<Dropout>(&layer)) {
      if (mode == Mode::Training && d->rate > 0.0) grad = grad.cwiseProduct(cache.aux);
    } else if (auto* a = std::get_if<Act>(&layer)) {
      if (a->fn == Activation::Relu)
        grad = (cache.input.array() > 0.0).select(grad, 0.0);
    }
  }
  return grads;
}

// Mean squared error over every element.
inline double mse(const Matrix& pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw DimensionMismatch("prediction vs target size", static_cast<std::size_t>(target.size()),
                            static_cast<std::size_t>(pred.size()));
  return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

inline Matrix mse_gradient(const Matrix& pred, const Matrix& target) {
  return 2.0 * (pred - target) / static_cast<double>(pred.size());
}

} // namespace tcond::nn
