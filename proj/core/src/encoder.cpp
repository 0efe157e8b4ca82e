#include "selfore/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <thread>

#include "selfore/errors.hpp"

namespace selfore {

FeatureStore::FeatureStore(FeatureMatrix matrix, std::vector<std::string> ids)
    : matrix_(std::move(matrix)), ids_(std::move(ids)) {
  if (static_cast<std::size_t>(matrix_.rows()) != ids_.size()) {
    throw ShapeError("FeatureStore: row count differs from id count");
  }
  if (!matrix_.allFinite()) throw DataError("FeatureStore: non-finite feature value");
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!index_.emplace(ids_[i], i).second) {
      throw DataError("FeatureStore: duplicate id '" + ids_[i] + "'");
    }
  }
}

std::size_t FeatureStore::row_of(const std::string& id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw DataError("no features for id '" + id + "'");
  return it->second;
}

FeatureMatrix FeatureStore::gather(std::span<const MarkedSentence> sentences) const {
  FeatureMatrix out(static_cast<Eigen::Index>(sentences.size()), matrix_.cols());
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) =
        matrix_.row(static_cast<Eigen::Index>(row_of(sentences[i].origin_id)));
  }
  return out;
}

FeatureStore load_features(const std::filesystem::path& path) {
  FeatureFile f = read_feature_file(path);
  FeatureMatrix m(static_cast<Eigen::Index>(f.rows), static_cast<Eigen::Index>(f.cols));
  for (std::size_t i = 0; i < f.values.size(); ++i) m.data()[i] = f.values[i];
  return FeatureStore(std::move(m), std::move(f.ids));
}

FeatureStore load_features(const std::filesystem::path& path, const Corpus& corpus) {
  FeatureStore raw = load_features(path);
  std::vector<std::string> missing;
  for (const auto& s : corpus.sentences()) {
    if (!raw.contains(s.origin_id)) missing.push_back(s.origin_id);
  }
  if (!missing.empty()) {
    std::ostringstream msg;
    msg << path.string() << ": " << missing.size() << " corpus id(s) without features:";
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg << ' ' << missing[i];
    if (missing.size() > 20) msg << " ...";
    throw DataError(msg.str());
  }
  std::vector<std::string> ids;
  ids.reserve(corpus.size());
  for (const auto& s : corpus.sentences()) ids.push_back(s.origin_id);
  return FeatureStore(raw.gather(corpus.sentences()), std::move(ids));
}

void save_features(const std::filesystem::path& path, const FeatureStore& store) {
  write_feature_file(path, store.matrix(), store.ids());
}

std::size_t token_index(std::string_view token, std::size_t buckets) {
  if (token == kE1Start) return buckets;
  if (token == kE1End) return buckets + 1;
  if (token == kE2Start) return buckets + 2;
  if (token == kE2End) return buckets + 3;
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : token) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return static_cast<std::size_t>(h % buckets);
}

namespace {

BuiltinEncoder::Params zero_like(const BuiltinEncoder::Params& p) {
  return {Dense2D::Zero(p.embedding.rows(), p.embedding.cols()),
          Dense2D::Zero(p.query.rows(), p.query.cols()),
          Dense2D::Zero(p.key.rows(), p.key.cols()),
          Dense2D::Zero(p.value.rows(), p.value.cols()),
          Dense2D::Zero(p.ff_weight.rows(), p.ff_weight.cols()),
          Vector::Zero(p.ff_bias.size())};
}

BuiltinEncoder::Params init_params(const BuiltinEncoderConfig& c) {
  if (c.hidden == 0 || c.buckets == 0) throw UsageError("encoder hidden size and buckets must be positive");
  Rng rng(derive_seed(c.seed, 0xe4c0de));
  const auto h = static_cast<Eigen::Index>(c.hidden);
  const double w_std = 1.0 / std::sqrt(static_cast<double>(c.hidden));
  BuiltinEncoder::Params p;
  p.embedding = gaussian_matrix(static_cast<Eigen::Index>(c.buckets + 4), h, c.embedding_std, rng);
  // Zero query and feed-forward weights: attention starts uniform and the
  // feed-forward branch starts as the identity residual.
  p.query = Dense2D::Zero(h, h);
  p.key = gaussian_matrix(h, h, w_std, rng);
  p.value = gaussian_matrix(h, h, w_std, rng);
  p.ff_weight = Dense2D::Zero(h, h);
  p.ff_bias = Vector::Zero(h);
  return p;
}

}  // namespace

BuiltinEncoder::BuiltinEncoder(const BuiltinEncoderConfig& config)
    : BuiltinEncoder(config, init_params(config)) {}

BuiltinEncoder::BuiltinEncoder(const BuiltinEncoderConfig& config, Params params)
    : config_(config), params_(std::move(params)) {
  const auto h = static_cast<Eigen::Index>(config_.hidden);
  if (params_.embedding.rows() != static_cast<Eigen::Index>(config_.buckets + 4) ||
      params_.embedding.cols() != h || params_.query.rows() != h || params_.query.cols() != h ||
      params_.key.rows() != h || params_.key.cols() != h || params_.value.rows() != h ||
      params_.value.cols() != h || params_.ff_weight.rows() != h || params_.ff_weight.cols() != h ||
      params_.ff_bias.size() != h) {
    throw ShapeError("BuiltinEncoder: parameter shapes inconsistent with config");
  }
  grads_ = zero_like(params_);
}

void BuiltinEncoder::check(const MarkedSentence& s) const {
  if (s.tokens.size() > config_.max_length) {
    throw DataError("sentence '" + s.origin_id + "' has " + std::to_string(s.tokens.size()) +
                    " tokens, over max length " + std::to_string(config_.max_length));
  }
  if (s.e1_start_pos >= s.tokens.size() || s.tokens[s.e1_start_pos] != kE1Start ||
      s.e2_start_pos >= s.tokens.size() || s.tokens[s.e2_start_pos] != kE2Start) {
    throw DataError("sentence '" + s.origin_id + "' is missing an entity start marker");
  }
}

void BuiltinEncoder::forward_one(const MarkedSentence& s, SentenceTape& t) const {
  check(s);
  const auto n = static_cast<Eigen::Index>(s.tokens.size());
  const auto h = static_cast<Eigen::Index>(config_.hidden);
  const double scale = 1.0 / std::sqrt(static_cast<double>(config_.hidden));
  t.ids.resize(s.tokens.size());
  t.x.resize(n, h);
  for (Eigen::Index i = 0; i < n; ++i) {
    t.ids[static_cast<std::size_t>(i)] = token_index(s.tokens[static_cast<std::size_t>(i)], config_.buckets);
    t.x.row(i) = params_.embedding.row(static_cast<Eigen::Index>(t.ids[static_cast<std::size_t>(i)]));
  }
  t.keys.noalias() = t.x * params_.key;
  t.values.noalias() = t.x * params_.value;
  t.pos = {s.e1_start_pos, s.e2_start_pos};
  for (int w = 0; w < 2; ++w) {
    const auto p = static_cast<Eigen::Index>(t.pos[static_cast<std::size_t>(w)]);
    t.q[w] = t.x.row(p) * params_.query;
    Eigen::VectorXd scores = (t.keys * t.q[w].transpose()) * scale;
    scores.array() -= scores.maxCoeff();
    scores = scores.array().exp();
    scores /= scores.sum();
    t.attn[w] = scores.transpose();
    t.y[w] = t.x.row(p) + t.attn[w] * t.values;
    t.pre[w] = t.y[w] * params_.ff_weight + params_.ff_bias.transpose();
  }
}

Eigen::RowVectorXd BuiltinEncoder::readout(const SentenceTape& t, int which) const {
  return t.y[which] + t.pre[which].cwiseMax(0.0);
}

FeatureMatrix BuiltinEncoder::encode(std::span<const MarkedSentence> batch,
                                     std::size_t threads) const {
  const auto h = static_cast<Eigen::Index>(config_.hidden);
  FeatureMatrix out(static_cast<Eigen::Index>(batch.size()), 2 * h);
  auto work = [&](std::size_t begin, std::size_t end) {
    SentenceTape tape;
    for (std::size_t i = begin; i < end; ++i) {
      forward_one(batch[i], tape);
      const auto r = static_cast<Eigen::Index>(i);
      out.row(r).head(h) = readout(tape, 0);
      out.row(r).tail(h) = readout(tape, 1);
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, batch.size() / 64 + 1));
  if (threads == 1) {
    work(0, batch.size());
    return out;
  }
  // Workers write disjoint rows; errors from any worker surface after join.
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (batch.size() + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(batch.size(), begin + chunk);
      pool.emplace_back([&, t, begin, end] {
        try {
          work(begin, end);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

FeatureMatrix BuiltinEncoder::forward_train(std::span<const MarkedSentence> batch) {
  const auto h = static_cast<Eigen::Index>(config_.hidden);
  tape_.resize(batch.size());
  FeatureMatrix out(static_cast<Eigen::Index>(batch.size()), 2 * h);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    forward_one(batch[i], tape_[i]);
    const auto r = static_cast<Eigen::Index>(i);
    out.row(r).head(h) = readout(tape_[i], 0);
    out.row(r).tail(h) = readout(tape_[i], 1);
  }
  return out;
}

void BuiltinEncoder::backward(const Dense2D& grad_features) {
  const auto h = static_cast<Eigen::Index>(config_.hidden);
  if (grad_features.rows() != static_cast<Eigen::Index>(tape_.size()) ||
      grad_features.cols() != 2 * h) {
    throw ShapeError("BuiltinEncoder::backward: gradient does not match the last batch");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(config_.hidden));
  for (std::size_t i = 0; i < tape_.size(); ++i) {
    const SentenceTape& t = tape_[i];
    const auto r = static_cast<Eigen::Index>(i);
    Dense2D gx = Dense2D::Zero(t.x.rows(), h);
    Dense2D gkeys = Dense2D::Zero(t.x.rows(), h);
    Dense2D gvalues = Dense2D::Zero(t.x.rows(), h);
    for (int w = 0; w < 2; ++w) {
      const auto p = static_cast<Eigen::Index>(t.pos[static_cast<std::size_t>(w)]);
      const Eigen::RowVectorXd go = grad_features.row(r).segment(w * h, h);
      const Eigen::RowVectorXd gpre = (t.pre[w].array() > 0.0).select(go, 0.0);
      grads_.ff_weight.noalias() += t.y[w].transpose() * gpre;
      grads_.ff_bias += gpre.transpose();
      const Eigen::RowVectorXd gy = go + gpre * params_.ff_weight.transpose();
      gx.row(p) += gy;
      // attention: y = x_p + a^T V, a = softmax(K q / sqrt(h))
      const Eigen::VectorXd ga = t.values * gy.transpose();
      gvalues.noalias() += t.attn[w].transpose() * gy;
      const double mean = t.attn[w].dot(ga.transpose());
      const Eigen::VectorXd gs = (t.attn[w].transpose().array() * (ga.array() - mean)) * scale;
      const Eigen::RowVectorXd gq = gs.transpose() * t.keys;
      gkeys.noalias() += gs * t.q[w];
      gx.row(p) += gq * params_.query.transpose();
      grads_.query.noalias() += t.x.row(p).transpose() * gq;
    }
    gx.noalias() += gkeys * params_.key.transpose();
    gx.noalias() += gvalues * params_.value.transpose();
    grads_.key.noalias() += t.x.transpose() * gkeys;
    grads_.value.noalias() += t.x.transpose() * gvalues;
    for (Eigen::Index k = 0; k < gx.rows(); ++k) {
      const auto row = static_cast<Eigen::Index>(t.ids[static_cast<std::size_t>(k)]);
      grads_.embedding.row(row) += gx.row(k);
      touched_.push_back(static_cast<std::size_t>(row));
    }
  }
}

void BuiltinEncoder::zero_grad() {
  for (auto row : touched_) grads_.embedding.row(static_cast<Eigen::Index>(row)).setZero();
  touched_.clear();
  grads_.query.setZero();
  grads_.key.setZero();
  grads_.value.setZero();
  grads_.ff_weight.setZero();
  grads_.ff_bias.setZero();
}

bool BuiltinEncoder::apply(Adam& optimizer) {
  if (frozen_) return false;
  const std::vector<ParamRef> refs = {
      param_ref(params_.embedding, grads_.embedding), param_ref(params_.query, grads_.query),
      param_ref(params_.key, grads_.key),             param_ref(params_.value, grads_.value),
      param_ref(params_.ff_weight, grads_.ff_weight), param_ref(params_.ff_bias, grads_.ff_bias)};
  if (!optimizer.step(refs)) return false;
  ++version_;
  return true;
}

std::vector<std::span<double>> BuiltinEncoder::flat_params() {
  auto flat = [](auto& m) { return std::span<double>(m.data(), static_cast<std::size_t>(m.size())); };
  return {flat(params_.embedding), flat(params_.query),     flat(params_.key),
          flat(params_.value),     flat(params_.ff_weight), flat(params_.ff_bias)};
}

void BuiltinEncoder::save(TensorBundle& bundle, const std::string& prefix) const {
  bundle.put_scalar(prefix + "hidden", static_cast<double>(config_.hidden));
  bundle.put_scalar(prefix + "buckets", static_cast<double>(config_.buckets));
  bundle.put_scalar(prefix + "max_length", static_cast<double>(config_.max_length));
  bundle.put_scalar(prefix + "version", static_cast<double>(version_));
  bundle.put(prefix + "embedding", params_.embedding);
  bundle.put(prefix + "query", params_.query);
  bundle.put(prefix + "key", params_.key);
  bundle.put(prefix + "value", params_.value);
  bundle.put(prefix + "ff_weight", params_.ff_weight);
  bundle.put(prefix + "ff_bias", params_.ff_bias);
}

BuiltinEncoder BuiltinEncoder::load(const TensorBundle& bundle, const std::string& prefix) {
  BuiltinEncoderConfig c;
  c.hidden = static_cast<std::size_t>(bundle.scalar(prefix + "hidden"));
  c.buckets = static_cast<std::size_t>(bundle.scalar(prefix + "buckets"));
  c.max_length = static_cast<std::size_t>(bundle.scalar(prefix + "max_length"));
  Params p{bundle.matrix(prefix + "embedding"), bundle.matrix(prefix + "query"),
           bundle.matrix(prefix + "key"),       bundle.matrix(prefix + "value"),
           bundle.matrix(prefix + "ff_weight"), bundle.vector(prefix + "ff_bias")};
  BuiltinEncoder enc(c, std::move(p));
  enc.version_ = static_cast<std::uint64_t>(bundle.scalar(prefix + "version"));
  return enc;
}

}  // namespace selfore
