#include "noisytail/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "noisytail/errors.hpp"

namespace noisytail {

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw InvalidInput("dot: length " + std::to_string(a.size()) + " vs " +
                       std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

bool all_finite(std::span<const double> a) {
  return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

Vec normalized(std::span<const double> a) {
  const double n = l2_norm(a);
  if (!(n > 0.0) || !std::isfinite(n)) throw InvalidInput("cannot normalise a zero vector");
  Vec out(a.begin(), a.end());
  for (double& v : out) v /= n;
  return out;
}

Vec normalized_backward(std::span<const double> x, std::span<const double> grad_y) {
  const double n = l2_norm(x);
  const Vec y = normalized(x);
  const double proj = dot(y, grad_y);
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = (grad_y[i] - y[i] * proj) / n;
  return g;
}

namespace {

void check_logits(std::span<const double> logits) {
  if (logits.empty()) throw InvalidInput("softmax of empty vector");
  if (!all_finite(logits)) throw InvalidInput("softmax of non-finite logits");
}

}  // namespace

Vec softmax(std::span<const double> logits) {
  check_logits(logits);
  const double m = *std::max_element(logits.begin(), logits.end());
  Vec out(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

Vec log_softmax(std::span<const double> logits) {
  check_logits(logits);
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - m);
  const double lse = m + std::log(z);
  Vec out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw InvalidInput("argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

// ---------------------------------------------------------------------------

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stage) {
  return splitmix64(fnv1a64(stage) ^ splitmix64(seed));
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t Rng::next_u64() {
  ++counter_;
  return splitmix64(seed_ + counter_ * 0x9e3779b97f4a7c15ULL);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::size_t Rng::uniform_index(std::size_t n) {
  if (n == 0) throw InvalidInput("uniform_index(0)");
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return static_cast<std::size_t>(x % n);
}

// ---------------------------------------------------------------------------

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kTanh:
      return "tanh";
    case Activation::kSigmoid:
      return "sigmoid";
  }
  return "tanh";
}

Activation activation_from_string(std::string_view name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "sigmoid") return Activation::kSigmoid;
  throw InvalidSpec("unknown activation '" + std::string(name) + "'");
}

namespace {

double activate(Activation a, double x) {
  return a == Activation::kTanh ? std::tanh(x) : 1.0 / (1.0 + std::exp(-x));
}

double activate_derivative(Activation a, double x) {
  if (a == Activation::kTanh) {
    const double t = std::tanh(x);
    return 1.0 - t * t;
  }
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 - s);
}

void check_dims(const std::vector<std::size_t>& dims) {
  if (dims.size() < 2) throw InvalidSpec("an MLP needs at least input and output dims");
  for (std::size_t d : dims) {
    if (d == 0) throw InvalidSpec("MLP layer dims must be positive");
  }
}

}  // namespace

Mlp::Mlp(std::vector<std::size_t> dims, Activation activation, Rng& rng)
    : dims_(std::move(dims)), activation_(activation) {
  check_dims(dims_);
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    Layer layer{Matrix(dims_[l + 1], dims_[l]), Vec(dims_[l + 1], 0.0)};
    const double scale = 1.0 / std::sqrt(static_cast<double>(dims_[l]));
    for (double& w : layer.weight.data) w = rng.normal() * scale;
    layers_.push_back(std::move(layer));
  }
}

Mlp Mlp::zeros(std::vector<std::size_t> dims, Activation activation) {
  check_dims(dims);
  Mlp net;
  net.dims_ = std::move(dims);
  net.activation_ = activation;
  for (std::size_t l = 0; l + 1 < net.dims_.size(); ++l) {
    net.layers_.push_back({Matrix(net.dims_[l + 1], net.dims_[l]), Vec(net.dims_[l + 1], 0.0)});
  }
  return net;
}

Mlp Mlp::from_layers(std::vector<Layer> layers, Activation activation) {
  if (layers.empty()) throw InvalidSpec("MLP needs at least one layer");
  Mlp net;
  net.activation_ = activation;
  net.dims_.push_back(layers.front().weight.cols);
  for (const Layer& l : layers) {
    if (l.weight.cols != net.dims_.back()) throw InvalidSpec("incompatible consecutive layer dims");
    if (l.bias.size() != l.weight.rows) throw InvalidSpec("bias length differs from layer rows");
    if (l.weight.data.size() != l.weight.rows * l.weight.cols) {
      throw InvalidSpec("weight buffer size differs from rows*cols");
    }
    if (!all_finite(l.weight.data) || !all_finite(l.bias)) throw InvalidSpec("non-finite weights");
    net.dims_.push_back(l.weight.rows);
  }
  check_dims(net.dims_);
  net.layers_ = std::move(layers);
  return net;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers_) n += l.weight.data.size() + l.bias.size();
  return n;
}

MlpGrad MlpGrad::zeros_like(const Mlp& net) {
  MlpGrad g;
  for (const Layer& l : net.layers()) {
    g.layers.push_back({Matrix(l.weight.rows, l.weight.cols), Vec(l.bias.size(), 0.0)});
  }
  g.input.assign(net.input_dim(), 0.0);
  return g;
}

void MlpGrad::add(const MlpGrad& other, double s) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& w = layers[l].weight.data;
    const auto& ow = other.layers[l].weight.data;
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += s * ow[i];
    auto& b = layers[l].bias;
    const auto& ob = other.layers[l].bias;
    for (std::size_t i = 0; i < b.size(); ++i) b[i] += s * ob[i];
  }
  for (std::size_t i = 0; i < input.size() && i < other.input.size(); ++i) {
    input[i] += s * other.input[i];
  }
}

void MlpGrad::scale(double s) {
  for (Layer& l : layers) {
    for (double& w : l.weight.data) w *= s;
    for (double& b : l.bias) b *= s;
  }
  for (double& v : input) v *= s;
}

Vec mlp_forward(const Mlp& net, std::span<const double> input) {
  MlpCache cache;
  return mlp_forward(net, input, cache);
}

Vec mlp_forward(const Mlp& net, std::span<const double> input, MlpCache& cache) {
  if (input.size() != net.input_dim()) {
    throw InvalidInput("mlp input length " + std::to_string(input.size()) + ", expected " +
                       std::to_string(net.input_dim()));
  }
  const auto& layers = net.layers();
  cache.layer_inputs.resize(layers.size());
  cache.pre_activations.resize(layers.size());
  Vec x(input.begin(), input.end());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Layer& layer = layers[l];
    Vec z(layer.bias);
    for (std::size_t r = 0; r < layer.weight.rows; ++r) {
      const double* row = &layer.weight.data[r * layer.weight.cols];
      double s = 0.0;
      for (std::size_t c = 0; c < layer.weight.cols; ++c) s += row[c] * x[c];
      z[r] += s;
    }
    cache.layer_inputs[l] = std::move(x);
    cache.pre_activations[l] = z;
    if (l + 1 < layers.size()) {
      for (double& v : z) v = activate(net.activation(), v);
    }
    x = std::move(z);
  }
  return x;
}

void mlp_backward(const Mlp& net, const MlpCache& cache, std::span<const double> upstream,
                  MlpGrad& accum) {
  const auto& layers = net.layers();
  if (upstream.size() != net.output_dim()) {
    throw InvalidInput("upstream gradient length " + std::to_string(upstream.size()) +
                       ", expected " + std::to_string(net.output_dim()));
  }
  if (cache.layer_inputs.size() != layers.size() || accum.layers.size() != layers.size()) {
    throw InvalidInput("backward cache/gradient shape differs from network");
  }
  Vec delta(upstream.begin(), upstream.end());
  for (std::size_t l = layers.size(); l-- > 0;) {
    const Layer& layer = layers[l];
    if (l + 1 < layers.size()) {
      const Vec& pre = cache.pre_activations[l];
      for (std::size_t i = 0; i < delta.size(); ++i) {
        delta[i] *= activate_derivative(net.activation(), pre[i]);
      }
    }
    const Vec& x = cache.layer_inputs[l];
    Layer& g = accum.layers[l];
    for (std::size_t r = 0; r < layer.weight.rows; ++r) {
      const double d = delta[r];
      if (d == 0.0) continue;
      double* grow = &g.weight.data[r * layer.weight.cols];
      for (std::size_t c = 0; c < layer.weight.cols; ++c) grow[c] += d * x[c];
      g.bias[r] += d;
    }
    Vec prev(layer.weight.cols, 0.0);
    for (std::size_t r = 0; r < layer.weight.rows; ++r) {
      const double d = delta[r];
      if (d == 0.0) continue;
      const double* row = &layer.weight.data[r * layer.weight.cols];
      for (std::size_t c = 0; c < layer.weight.cols; ++c) prev[c] += d * row[c];
    }
    delta = std::move(prev);
  }
  accum.input = std::move(delta);
}

MlpGrad mlp_backward(const Mlp& net, std::span<const double> input,
                     std::span<const double> upstream) {
  MlpCache cache;
  mlp_forward(net, input, cache);
  MlpGrad g = MlpGrad::zeros_like(net);
  mlp_backward(net, cache, upstream, g);
  return g;
}

Vec flatten_parameters(const Mlp& net) {
  Vec flat;
  flat.reserve(net.parameter_count());
  for (const Layer& l : net.layers()) {
    flat.insert(flat.end(), l.weight.data.begin(), l.weight.data.end());
    flat.insert(flat.end(), l.bias.begin(), l.bias.end());
  }
  return flat;
}

void assign_parameters(Mlp& net, std::span<const double> flat) {
  if (flat.size() != net.parameter_count()) throw InvalidInput("parameter vector length mismatch");
  std::size_t k = 0;
  for (Layer& l : net.mutable_layers()) {
    for (double& w : l.weight.data) w = flat[k++];
    for (double& b : l.bias) b = flat[k++];
  }
}

Vec flatten_gradient(const MlpGrad& grad) {
  Vec flat;
  for (const Layer& l : grad.layers) {
    flat.insert(flat.end(), l.weight.data.begin(), l.weight.data.end());
    flat.insert(flat.end(), l.bias.begin(), l.bias.end());
  }
  return flat;
}

// ---------------------------------------------------------------------------

Sgd::Sgd(const Mlp& net, SgdConfig cfg) : cfg_(cfg) {
  for (const Layer& l : net.layers()) {
    velocity_.push_back({Matrix(l.weight.rows, l.weight.cols), Vec(l.bias.size(), 0.0)});
  }
}

void Sgd::step(Mlp& net, const MlpGrad& grad, double lr) {
  auto& layers = net.mutable_layers();
  if (grad.layers.size() != layers.size()) throw InvalidInput("gradient shape differs from network");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& w = layers[l].weight.data;
    auto& vw = velocity_[l].weight.data;
    const auto& gw = grad.layers[l].weight.data;
    for (std::size_t i = 0; i < w.size(); ++i) {
      vw[i] = cfg_.momentum * vw[i] + gw[i] + cfg_.weight_decay * w[i];
      w[i] -= lr * vw[i];
    }
    auto& b = layers[l].bias;
    auto& vb = velocity_[l].bias;
    const auto& gb = grad.layers[l].bias;
    for (std::size_t i = 0; i < b.size(); ++i) {
      vb[i] = cfg_.momentum * vb[i] + gb[i];
      b[i] -= lr * vb[i];
    }
    if (!all_finite(w) || !all_finite(b)) throw NumericError("non-finite parameters after SGD step");
  }
}

double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps) {
  if (total_steps == 0) return base_lr;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * t));
}

// ---------------------------------------------------------------------------

Vec finite_diff_grad(const std::function<double(const Vec&)>& f, const Vec& x, double eps) {
  if (!(eps > 0.0)) throw InvalidInput("finite difference step must be positive");
  Vec g(x.size());
  Vec probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = f(probe);
    probe[i] = x[i] - eps;
    const double down = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("non-finite function value at coordinate " + std::to_string(i));
    }
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)});
}

GradCheckReport compare_gradients(std::span<const double> analytic,
                                  std::span<const double> numeric, double tolerance) {
  if (analytic.size() != numeric.size()) throw InvalidInput("gradient lengths differ");
  GradCheckReport report;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double e = relative_error(analytic[i], numeric[i]);
    if (e > report.max_relative_error) {
      report.max_relative_error = e;
      report.worst_coordinate = i;
    }
  }
  report.passed = report.max_relative_error < tolerance;
  return report;
}

}  // namespace noisytail
