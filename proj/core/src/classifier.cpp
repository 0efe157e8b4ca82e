#include "selfore/classifier.hpp"

#include <cmath>
#include <functional>
#include <sstream>

#include "selfore/autoencoder.hpp"
#include "selfore/errors.hpp"
#include "selfore/log.hpp"

namespace selfore {

ClassifierParams make_classifier(std::size_t dim, int k, double dropout) {
  if (dim == 0 || k < 1) throw UsageError("classifier: dimension and K must be positive");
  return {LinearLayer::zeros(dim, static_cast<std::size_t>(k), Activation::identity), dropout};
}

Dense2D forward(const ClassifierParams& params, const Dense2D& features) {
  return linear_forward(params.head, features);
}

std::vector<int> predict(const ClassifierParams& params, const Dense2D& features) {
  const Dense2D logits = forward(params, features);
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < logits.cols(); ++k) {
      if (logits(r, k) > logits(r, best)) best = k;
    }
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

std::vector<int> predict(const ClassifierParams& params, const BuiltinEncoder& encoder,
                         std::span<const MarkedSentence> sentences) {
  return predict(params, encoder.encode(sentences));
}

namespace {

void check_labels(const ClassifierParams& params, std::size_t n, std::span<const int> labels) {
  if (labels.size() != n) {
    throw DataError("classifier: " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(n) + " samples");
  }
  for (int l : labels) {
    if (l < 0 || l >= params.k()) {
      throw DataError("classifier: label " + std::to_string(l) + " outside [0, " +
                      std::to_string(params.k()) + ")");
    }
  }
}

double accuracy(const std::vector<int>& pred, std::span<const int> labels) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return pred.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(pred.size());
}

// Shared mini-batch loop. `features_for` runs the training-mode feature
// forward for a batch; `after_backward` receives dL/dfeatures and the
// zero-based epoch, and returns true when it updated an encoder.
TrainReport run_training(
    ClassifierParams& params, std::size_t n, std::span<const int> labels, const TrainSchedule& sched,
    const std::function<Dense2D(std::span<const std::size_t>)>& features_for,
    const std::function<bool(const Dense2D&, int)>& after_backward) {
  if (sched.epochs < 1 || sched.batch_size == 0 || !(sched.learning_rate > 0.0)) {
    throw UsageError("classifier: epochs, batch size and learning rate must be positive");
  }
  const std::size_t batch = std::min(sched.batch_size, n);
  const std::size_t batches = (n + batch - 1) / batch;
  Adam adam({.learning_rate = sched.learning_rate,
             .weight_decay = sched.weight_decay,
             .warmup_fraction = sched.warmup_fraction,
             .total_steps = batches * static_cast<std::size_t>(sched.epochs)});
  LinearGrads grads(params.head);
  Rng rng(derive_seed(sched.seed, 0xc1f));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  TrainReport report;
  for (int epoch = 0; epoch < sched.epochs; ++epoch) {
    shuffle_indices(order, rng);
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const Dense2D feats = features_for(idx);
      const Dense2D mask = dropout_mask(feats.rows(), feats.cols(), params.dropout, rng);
      const Dense2D x = feats.cwiseProduct(mask);
      std::vector<int> y;
      y.reserve(idx.size());
      for (auto i : idx) y.push_back(labels[i]);
      const Dense2D logits = linear_forward(params.head, x);
      const XentResult xent = softmax_xent(logits, y);
      if (!std::isfinite(xent.loss)) {
        throw NumericError("classifier: non-finite loss in epoch " + std::to_string(epoch + 1));
      }
      grads.zero();
      const Dense2D gx = linear_backward(params.head, x, logits, xent.grad, grads);
      if (after_backward(gx.cwiseProduct(mask), epoch)) ++report.encoder_updates;
      const std::vector<ParamRef> refs = {param_ref(params.head.weight, grads.weight),
                                          param_ref(params.head.bias, grads.bias)};
      if (!adam.step(refs)) log::warn("classifier: non-finite gradient, step skipped");
      total += xent.loss * static_cast<double>(idx.size());
    }
    report.epoch_losses.push_back(total / static_cast<double>(n));
    std::ostringstream msg;
    msg << "classifier epoch " << epoch + 1 << "/" << sched.epochs
        << " loss=" << report.epoch_losses.back();
    log::debug(msg.str());
  }
  return report;
}

}  // namespace

TrainReport train(ClassifierParams& params, const Dense2D& features, std::span<const int> labels,
                  const TrainSchedule& sched) {
  const auto n = static_cast<std::size_t>(features.rows());
  check_labels(params, n, labels);
  if (static_cast<std::size_t>(features.cols()) != params.dim()) {
    throw ShapeError("classifier: feature dimension differs from head input");
  }
  const double initial = softmax_xent(forward(params, features), labels).loss;
  TrainReport report = run_training(
      params, n, labels, sched,
      [&](std::span<const std::size_t> idx) {
        Dense2D x(static_cast<Eigen::Index>(idx.size()), features.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) {
          x.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(idx[i]));
        }
        return x;
      },
      [](const Dense2D&, int) { return false; });
  report.initial_loss = initial;
  report.final_accuracy = accuracy(predict(params, features), labels);
  return report;
}

TrainReport train(ClassifierParams& params, BuiltinEncoder& encoder,
                  std::span<const MarkedSentence> sentences, std::span<const int> labels,
                  const TrainSchedule& sched) {
  const std::size_t n = sentences.size();
  check_labels(params, n, labels);
  if (encoder.dim() != params.dim()) throw ShapeError("classifier: encoder dimension differs from head input");
  const double initial = softmax_xent(forward(params, encoder.encode(sentences)), labels).loss;

  const std::size_t batch = std::min(sched.batch_size, n);
  const std::size_t batches = batch == 0 ? 0 : (n + batch - 1) / batch;
  const int tuned_epochs = std::max(0, sched.epochs - sched.encoder_freeze_epochs);
  Adam encoder_adam({.learning_rate = sched.learning_rate,
                     .weight_decay = sched.weight_decay,
                     .warmup_fraction = sched.warmup_fraction,
                     .total_steps = batches * static_cast<std::size_t>(tuned_epochs)});
  std::vector<MarkedSentence> picked;
  TrainReport report = run_training(
      params, n, labels, sched,
      [&](std::span<const std::size_t> idx) {
        picked.clear();
        for (auto i : idx) picked.push_back(sentences[i]);
        return encoder.forward_train(picked);
      },
      [&](const Dense2D& grad_features, int epoch) {
        if (epoch < sched.encoder_freeze_epochs) {
          encoder.freeze();
          return false;
        }
        encoder.unfreeze();
        encoder.zero_grad();
        encoder.backward(grad_features);
        return encoder.apply(encoder_adam);
      });
  encoder.unfreeze();
  report.initial_loss = initial;
  report.final_accuracy = accuracy(predict(params, encoder, sentences), labels);
  return report;
}

void save_classifier(TensorBundle& bundle, const std::string& prefix, const ClassifierParams& p) {
  bundle.put(prefix + "weight", p.head.weight);
  bundle.put(prefix + "bias", p.head.bias);
  bundle.put_scalar(prefix + "dropout", p.dropout);
}

ClassifierParams load_classifier(const TensorBundle& bundle, const std::string& prefix) {
  ClassifierParams p;
  p.head.weight = bundle.matrix(prefix + "weight");
  p.head.bias = bundle.vector(prefix + "bias");
  p.head.activation = Activation::identity;
  p.dropout = bundle.scalar(prefix + "dropout");
  if (p.head.bias.size() != p.head.weight.rows()) throw DataError("classifier checkpoint: inconsistent shapes");
  return p;
}

void save_classifier(const std::filesystem::path& path, const ClassifierParams& p) {
  TensorBundle bundle;
  save_classifier(bundle, "", p);
  write_tensor_file(path, kClassifierMagic, bundle);
}

ClassifierParams load_classifier(const std::filesystem::path& path) {
  return load_classifier(read_tensor_file(path, kClassifierMagic), "");
}

}  // namespace selfore
