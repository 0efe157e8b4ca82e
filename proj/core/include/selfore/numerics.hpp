#pragma once

// Dense numerics substrate shared by every trainer: row-major matrices,
// fully connected layers with hand-written backward passes, dropout,
// softmax cross-entropy, Adam with linear warm-up, and a finite-difference
// gradient checker.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace selfore {

using Dense2D = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

/// Mixes a base seed with stream identifiers (splitmix64 finalizer). Every
/// stochastic stage draws its generator from here so that any stage can be
/// replayed from (seed, iteration, stage) alone.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

/// Uniform double in [0, 1) built from the top 53 bits of one draw.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform integer in [0, n) by rejection; independent of the standard
/// library's distribution implementation.
std::size_t uniform_index(Rng& rng, std::size_t n);

/// In-place Fisher-Yates shuffle driven by uniform_index.
void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng);

Dense2D gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng);

bool all_finite(const Dense2D& m);

/// Per-column standardization (x - mean) / std. Empty means identity.
/// Columns with zero spread are only centered.
struct ColumnScaler {
  Vector mean;
  Vector stddev;

  bool empty() const { return mean.size() == 0; }
  static ColumnScaler fit(const Dense2D& x);
  Dense2D apply(const Dense2D& x) const;
};

enum class Activation { identity, relu };

struct LinearLayer {
  Dense2D weight;  // out x in
  Vector bias;     // out
  Activation activation = Activation::identity;

  std::size_t in_dim() const { return static_cast<std::size_t>(weight.cols()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(weight.rows()); }

  /// Weights ~ N(0, stddev^2), zero bias.
  static LinearLayer gaussian(std::size_t in, std::size_t out, Activation act, double stddev,
                              Rng& rng);
  static LinearLayer zeros(std::size_t in, std::size_t out, Activation act);
};

struct LinearGrads {
  Dense2D weight;
  Vector bias;

  explicit LinearGrads(const LinearLayer& layer)
      : weight(Dense2D::Zero(layer.weight.rows(), layer.weight.cols())),
        bias(Vector::Zero(layer.bias.size())) {}
  void zero() {
    weight.setZero();
    bias.setZero();
  }
};

/// activation(x W^T + b). Throws ShapeError when x.cols() != in_dim.
Dense2D linear_forward(const LinearLayer& layer, const Dense2D& x);

/// Backward pass of linear_forward given its input `x` and output `y`.
/// Accumulates parameter gradients into `grads` and returns dL/dx.
Dense2D linear_backward(const LinearLayer& layer, const Dense2D& x, const Dense2D& y,
                        const Dense2D& grad_y, LinearGrads& grads);

/// Runs a stack of layers, returning every intermediate activation
/// (element 0 is the input, the last element the output).
std::vector<Dense2D> stack_forward(std::span<const LinearLayer> layers, const Dense2D& x);

/// Backward through a stack given the activations from stack_forward.
Dense2D stack_backward(std::span<const LinearLayer> layers, std::span<const Dense2D> acts,
                       const Dense2D& grad_out, std::span<LinearGrads> grads);

/// Keep-mask with entries 0 or 1/(1-rate). Throws std::invalid_argument
/// unless 0 <= rate < 1.
Dense2D dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng);

/// Training-mode dropout with a fresh generator seeded by `seed`.
Dense2D dropout(const Dense2D& x, double rate, std::uint64_t seed);

/// Row-wise softmax, max-shifted.
Dense2D softmax_rows(const Dense2D& logits);

struct XentResult {
  double loss = 0.0;  // mean over rows, natural log
  Dense2D grad;       // (softmax - target) / N
};

/// Mean cross-entropy against one-hot target rows.
XentResult softmax_xent(const Dense2D& logits, const Dense2D& targets);
/// Same, with class indices instead of one-hot rows.
XentResult softmax_xent(const Dense2D& logits, std::span<const int> labels);

Dense2D one_hot(std::span<const int> labels, int classes);

struct AdamConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;  // decoupled
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double warmup_fraction = 0.0;  // of total_steps
  std::size_t total_steps = 0;
};

/// A parameter tensor and its gradient, both viewed as flat spans.
struct ParamRef {
  std::span<double> value;
  std::span<const double> grad;
};

inline ParamRef param_ref(Dense2D& value, const Dense2D& grad) {
  return {{value.data(), static_cast<std::size_t>(value.size())},
          {grad.data(), static_cast<std::size_t>(grad.size())}};
}
inline ParamRef param_ref(Vector& value, const Vector& grad) {
  return {{value.data(), static_cast<std::size_t>(value.size())},
          {grad.data(), static_cast<std::size_t>(grad.size())}};
}

/// Bias-corrected Adam with decoupled weight decay and a linear learning-rate
/// warm-up. Moments are keyed by position in the parameter list, so callers
/// must pass the same tensors in the same order on every step.
class Adam {
 public:
  explicit Adam(AdamConfig config = {});

  /// Applies one update. A non-finite gradient skips the step entirely
  /// (nothing changes, the step counter does not advance) and returns false.
  bool step(std::span<const ParamRef> params);

  /// Learning rate the given 1-based step uses after warm-up scaling.
  double learning_rate_at(std::size_t step) const;

  std::size_t steps() const { return step_; }
  std::size_t skipped() const { return skipped_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::size_t step_ = 0;
  std::size_t skipped_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

using ScalarFunction = std::function<double(std::span<const double>)>;

/// Central finite differences against an analytic gradient. Returns
/// max_i |fd_i - an_i| / max(1, |fd_i|, |an_i|). Throws NumericError when
/// f is non-finite at a perturbed point.
double grad_check(const ScalarFunction& f, std::span<const double> params,
                  std::span<const double> analytic, double h = 1e-5);

}  // namespace selfore
