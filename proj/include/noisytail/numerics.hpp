#pragma once

// Dense numerics for desk-scale training: vectors, a small tanh MLP with
// hand-coded backprop, SGD with momentum, a counter-based RNG, and a
// central-difference gradient oracle.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace noisytail {

using Vec = std::vector<double>;

// ---------------------------------------------------------------------------
// Vector helpers

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);
bool all_finite(std::span<const double> a);

// Returns a / |a|. Throws InvalidInput for a zero vector.
Vec normalized(std::span<const double> a);

// Backprop through y = x / |x|: given dL/dy returns dL/dx.
Vec normalized_backward(std::span<const double> x, std::span<const double> grad_y);

// Numerically stable softmax (max-shift). Throws on empty or non-finite input.
Vec softmax(std::span<const double> logits);
Vec log_softmax(std::span<const double> logits);

// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> v);

// ---------------------------------------------------------------------------
// Rng

// SplitMix64 counter generator. The stream is a pure function of the seed, so
// results are identical across platforms and standard-library versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double normal();
  // Uniform on {0, ..., n-1}; n must be positive.
  std::size_t uniform_index(std::size_t n);
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[uniform_index(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);
// FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);
// Stable sub-seed for a named stage.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stage);
std::string hex64(std::uint64_t v);

// ---------------------------------------------------------------------------
// Matrix / MLP

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  bool operator==(const Matrix&) const = default;
};

enum class Activation { kTanh, kSigmoid };

std::string to_string(Activation a);
Activation activation_from_string(std::string_view name);

struct Layer {
  Matrix weight;  // out x in
  Vec bias;       // out
  bool operator==(const Layer&) const = default;
};

// Fully connected network. Hidden layers apply affine + activation; the final
// layer is affine only.
class Mlp {
 public:
  Mlp() = default;
  // Weights ~ N(0, 1/fan_in), biases zero.
  Mlp(std::vector<std::size_t> dims, Activation activation, Rng& rng);
  // All-zero parameters.
  static Mlp zeros(std::vector<std::size_t> dims, Activation activation);
  static Mlp from_layers(std::vector<Layer> layers, Activation activation);

  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t input_dim() const { return dims_.front(); }
  std::size_t output_dim() const { return dims_.back(); }
  Activation activation() const { return activation_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& mutable_layers() { return layers_; }
  std::size_t parameter_count() const;

  bool operator==(const Mlp&) const = default;

 private:
  std::vector<std::size_t> dims_;
  Activation activation_ = Activation::kTanh;
  std::vector<Layer> layers_;
};

// Per-layer inputs recorded during a forward pass.
struct MlpCache {
  std::vector<Vec> layer_inputs;
  std::vector<Vec> pre_activations;
};

// Parameter-shaped gradient buffer plus the input gradient.
struct MlpGrad {
  std::vector<Layer> layers;
  Vec input;

  static MlpGrad zeros_like(const Mlp& net);
  void add(const MlpGrad& other, double scale = 1.0);
  void scale(double s);
};

Vec mlp_forward(const Mlp& net, std::span<const double> input);
Vec mlp_forward(const Mlp& net, std::span<const double> input, MlpCache& cache);

// Gradient of dot(output, upstream) w.r.t. every parameter and the input.
MlpGrad mlp_backward(const Mlp& net, std::span<const double> input,
                     std::span<const double> upstream);
// Same, reusing a forward cache and accumulating into `accum` (input grad is
// overwritten).
void mlp_backward(const Mlp& net, const MlpCache& cache, std::span<const double> upstream,
                  MlpGrad& accum);

// Flatten / unflatten all parameters (layer order, weight then bias).
Vec flatten_parameters(const Mlp& net);
void assign_parameters(Mlp& net, std::span<const double> flat);
Vec flatten_gradient(const MlpGrad& grad);

// ---------------------------------------------------------------------------
// Optimiser

struct SgdConfig {
  double lr = 0.02;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

// Heavy-ball SGD with L2 weight decay applied to weights (not biases).
class Sgd {
 public:
  Sgd(const Mlp& net, SgdConfig cfg);
  void step(Mlp& net, const MlpGrad& grad, double lr);
  const SgdConfig& config() const { return cfg_; }

 private:
  SgdConfig cfg_;
  std::vector<Layer> velocity_;
};

// Cosine-annealed learning rate for step t of total (t in [0, total)).
double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps);

// ---------------------------------------------------------------------------
// Gradient checking

// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
Vec finite_diff_grad(const std::function<double(const Vec&)>& f, const Vec& x, double eps);

// |a - b| / max(1e-8, |a|, |b|)
double relative_error(double a, double b);

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_coordinate = 0;
  bool passed = true;
};

GradCheckReport compare_gradients(std::span<const double> analytic,
                                  std::span<const double> numeric, double tolerance);

}  // namespace noisytail
