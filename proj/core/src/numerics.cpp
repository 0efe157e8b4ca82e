#include "selfore/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "selfore/errors.hpp"

namespace selfore {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

std::size_t uniform_index(Rng& rng, std::size_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: empty range");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = Rng::max() - (Rng::max() % bound + 1) % bound;
  std::uint64_t x = rng();
  while (x > limit) x = rng();
  return static_cast<std::size_t>(x % bound);
}

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::swap(idx[i - 1], idx[uniform_index(rng, i)]);
  }
}

Dense2D gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Dense2D m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

bool all_finite(const Dense2D& m) { return m.allFinite(); }

ColumnScaler ColumnScaler::fit(const Dense2D& x) {
  ColumnScaler s;
  if (x.rows() == 0) throw std::invalid_argument("ColumnScaler::fit: no rows");
  s.mean = x.colwise().mean().transpose();
  s.stddev = ((x.rowwise() - s.mean.transpose()).array().square().colwise().mean().sqrt()).transpose();
  for (Eigen::Index c = 0; c < s.stddev.size(); ++c) {
    if (!(s.stddev[c] > 1e-12)) s.stddev[c] = 1.0;
  }
  return s;
}

Dense2D ColumnScaler::apply(const Dense2D& x) const {
  if (empty()) return x;
  if (x.cols() != mean.size()) throw ShapeError("ColumnScaler: column count mismatch");
  return ((x.rowwise() - mean.transpose()).array().rowwise() / stddev.transpose().array()).matrix();
}

LinearLayer LinearLayer::gaussian(std::size_t in, std::size_t out, Activation act, double stddev,
                                  Rng& rng) {
  LinearLayer layer;
  layer.weight = gaussian_matrix(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in),
                                 stddev, rng);
  layer.bias = Vector::Zero(static_cast<Eigen::Index>(out));
  layer.activation = act;
  return layer;
}

LinearLayer LinearLayer::zeros(std::size_t in, std::size_t out, Activation act) {
  LinearLayer layer;
  layer.weight = Dense2D::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
  layer.bias = Vector::Zero(static_cast<Eigen::Index>(out));
  layer.activation = act;
  return layer;
}

Dense2D linear_forward(const LinearLayer& layer, const Dense2D& x) {
  if (static_cast<std::size_t>(x.cols()) != layer.in_dim()) {
    std::ostringstream msg;
    msg << "linear_forward: input has " << x.cols() << " columns, layer expects "
        << layer.in_dim();
    throw ShapeError(msg.str());
  }
  Dense2D y = x * layer.weight.transpose();
  y.rowwise() += layer.bias.transpose();
  if (layer.activation == Activation::relu) y = y.cwiseMax(0.0);
  return y;
}

Dense2D linear_backward(const LinearLayer& layer, const Dense2D& x, const Dense2D& y,
                        const Dense2D& grad_y, LinearGrads& grads) {
  Dense2D g = grad_y;
  if (layer.activation == Activation::relu) {
    g = (y.array() > 0.0).select(grad_y, 0.0);
  }
  grads.weight.noalias() += g.transpose() * x;
  grads.bias += g.colwise().sum().transpose();
  return g * layer.weight;
}

std::vector<Dense2D> stack_forward(std::span<const LinearLayer> layers, const Dense2D& x) {
  std::vector<Dense2D> acts;
  acts.reserve(layers.size() + 1);
  acts.push_back(x);
  for (const auto& layer : layers) acts.push_back(linear_forward(layer, acts.back()));
  return acts;
}

Dense2D stack_backward(std::span<const LinearLayer> layers, std::span<const Dense2D> acts,
                       const Dense2D& grad_out, std::span<LinearGrads> grads) {
  Dense2D g = grad_out;
  for (std::size_t i = layers.size(); i-- > 0;) {
    g = linear_backward(layers[i], acts[i], acts[i + 1], g, grads[i]);
  }
  return g;
}

Dense2D dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("dropout rate must lie in [0, 1)");
  }
  Dense2D mask(rows, cols);
  if (rate == 0.0) {
    mask.setOnes();
    return mask;
  }
  const double keep = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = uniform01(rng) < rate ? 0.0 : keep;
  }
  return mask;
}

Dense2D dropout(const Dense2D& x, double rate, std::uint64_t seed) {
  Rng rng(seed);
  return x.cwiseProduct(dropout_mask(x.rows(), x.cols(), rate, rng));
}

Dense2D softmax_rows(const Dense2D& logits) {
  Dense2D out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

XentResult softmax_xent(const Dense2D& logits, const Dense2D& targets) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols()) {
    throw ShapeError("softmax_xent: logits and targets differ in shape");
  }
  const auto n = logits.rows();
  XentResult result;
  result.grad = softmax_rows(logits);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double m = logits.row(r).maxCoeff();
    const double lse = m + std::log((logits.row(r).array() - m).exp().sum());
    result.loss += (targets.row(r).array() * (lse - logits.row(r).array())).sum();
  }
  if (n > 0) {
    result.loss /= static_cast<double>(n);
    result.grad = (result.grad - targets) / static_cast<double>(n);
  }
  return result;
}

Dense2D one_hot(std::span<const int> labels, int classes) {
  Dense2D t = Dense2D::Zero(static_cast<Eigen::Index>(labels.size()), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) {
      throw DataError("one_hot: label " + std::to_string(labels[i]) + " outside [0, " +
                      std::to_string(classes) + ")");
    }
    t(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return t;
}

XentResult softmax_xent(const Dense2D& logits, std::span<const int> labels) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size()) {
    throw ShapeError("softmax_xent: label count differs from logit rows");
  }
  return softmax_xent(logits, one_hot(labels, static_cast<int>(logits.cols())));
}

Adam::Adam(AdamConfig config) : config_(config) {}

double Adam::learning_rate_at(std::size_t step) const {
  const double warm = config_.warmup_fraction * static_cast<double>(config_.total_steps);
  if (warm > 0.0 && static_cast<double>(step) < warm) {
    return config_.learning_rate * static_cast<double>(step) / warm;
  }
  return config_.learning_rate;
}

bool Adam::step(std::span<const ParamRef> params) {
  for (const auto& p : params) {
    if (p.value.size() != p.grad.size()) throw ShapeError("Adam: parameter/gradient size mismatch");
    for (double g : p.grad) {
      if (!std::isfinite(g)) {
        ++skipped_;
        return false;
      }
    }
  }
  if (m_.size() < params.size()) {
    m_.resize(params.size());
    v_.resize(params.size());
  }
  ++step_;
  const double lr = learning_rate_at(step_);
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto value = params[i].value;
    auto grad = params[i].grad;
    auto& m = m_[i];
    auto& v = v_[i];
    if (m.size() != value.size()) {
      m.assign(value.size(), 0.0);
      v.assign(value.size(), 0.0);
    }
    for (std::size_t j = 0; j < value.size(); ++j) {
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * grad[j];
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * grad[j] * grad[j];
      const double update = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + config_.epsilon);
      value[j] -= lr * (update + config_.weight_decay * value[j]);
    }
  }
  return true;
}

double grad_check(const ScalarFunction& f, std::span<const double> params,
                  std::span<const double> analytic, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
  if (params.size() != analytic.size()) throw ShapeError("grad_check: gradient size mismatch");
  std::vector<double> x(params.begin(), params.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f(x);
    x[i] = orig - h;
    const double down = f(x);
    x[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("grad_check: non-finite evaluation at coordinate " + std::to_string(i));
    }
    const double fd = (up - down) / (2.0 * h);
    const double an = analytic[i];
    const double err = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace selfore
