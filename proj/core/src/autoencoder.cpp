#include "selfore/autoencoder.hpp"

#include <cmath>
#include <sstream>

#include "selfore/errors.hpp"
#include "selfore/log.hpp"

namespace selfore {

AutoencoderParams make_autoencoder(std::size_t input_dim, const PretrainConfig& cfg) {
  if (input_dim == 0 || cfg.latent == 0) throw UsageError("autoencoder dimensions must be positive");
  if (!(cfg.init_std > 0.0)) throw UsageError("autoencoder init std must be positive");
  Rng rng(derive_seed(cfg.seed, 0xae));
  std::vector<std::size_t> dims{input_dim};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(cfg.latent);

  AutoencoderParams p;
  p.dropout = cfg.dropout;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const bool last = i + 2 == dims.size();
    p.encoder.push_back(LinearLayer::gaussian(dims[i], dims[i + 1],
                                              last ? Activation::identity : Activation::relu,
                                              cfg.init_std, rng));
  }
  for (std::size_t i = dims.size() - 1; i > 0; --i) {
    const bool last = i == 1;
    p.decoder.push_back(LinearLayer::gaussian(dims[i], dims[i - 1],
                                              last ? Activation::identity : Activation::relu,
                                              cfg.init_std, rng));
  }
  return p;
}

Dense2D encode(std::span<const LinearLayer> encoder, const Dense2D& h) {
  Dense2D z = h;
  for (const auto& layer : encoder) z = linear_forward(layer, z);
  return z;
}

Dense2D encode(const AutoencoderParams& params, const Dense2D& h) {
  return encode(params.encoder, params.input.apply(h));
}

Dense2D reconstruct(const AutoencoderParams& params, const Dense2D& h) {
  return encode(params.decoder, encode(params, h));
}

double reconstruction_loss(const AutoencoderParams& params, const Dense2D& h) {
  if (h.size() == 0) return 0.0;
  return (reconstruct(params, h) - params.input.apply(h)).squaredNorm() / static_cast<double>(h.size());
}

AutoencoderGrads::AutoencoderGrads(const AutoencoderParams& p) {
  for (const auto& l : p.encoder) encoder.emplace_back(l);
  for (const auto& l : p.decoder) decoder.emplace_back(l);
}

void AutoencoderGrads::zero() {
  for (auto& g : encoder) g.zero();
  for (auto& g : decoder) g.zero();
}

double reconstruction_loss_and_grad(const AutoencoderParams& params, const Dense2D& h,
                                    const std::optional<Dense2D>& input_mask,
                                    const std::optional<Dense2D>& latent_mask,
                                    AutoencoderGrads& grads) {
  const Dense2D h_in = input_mask ? Dense2D(h.cwiseProduct(*input_mask)) : h;
  const auto enc_acts = stack_forward(params.encoder, h_in);
  const Dense2D& z = enc_acts.back();
  const Dense2D z_in = latent_mask ? Dense2D(z.cwiseProduct(*latent_mask)) : z;
  const auto dec_acts = stack_forward(params.decoder, z_in);
  const Dense2D diff = dec_acts.back() - h;
  const double count = static_cast<double>(h.size());
  const double loss = diff.squaredNorm() / count;

  Dense2D g = (2.0 / count) * diff;
  g = stack_backward(params.decoder, dec_acts, g, grads.decoder);
  if (latent_mask) g = g.cwiseProduct(*latent_mask);
  stack_backward(params.encoder, enc_acts, g, grads.encoder);
  return loss;
}

namespace {

std::vector<ParamRef> refs(AutoencoderParams& p, AutoencoderGrads& g) {
  std::vector<ParamRef> out;
  for (std::size_t i = 0; i < p.encoder.size(); ++i) {
    out.push_back(param_ref(p.encoder[i].weight, g.encoder[i].weight));
    out.push_back(param_ref(p.encoder[i].bias, g.encoder[i].bias));
  }
  for (std::size_t i = 0; i < p.decoder.size(); ++i) {
    out.push_back(param_ref(p.decoder[i].weight, g.decoder[i].weight));
    out.push_back(param_ref(p.decoder[i].bias, g.decoder[i].bias));
  }
  return out;
}

}  // namespace

PretrainResult pretrain(const Dense2D& features, const PretrainConfig& cfg) {
  const auto n = static_cast<std::size_t>(features.rows());
  if (n == 0) throw DataError("pretrain: no samples");
  if (cfg.epochs <= 0 || !(cfg.learning_rate > 0.0)) {
    throw UsageError("pretrain: epochs and learning rate must be positive");
  }
  if (!features.allFinite()) throw NumericError("pretrain: non-finite input feature");

  PretrainResult result{make_autoencoder(static_cast<std::size_t>(features.cols()), cfg), {}};
  AutoencoderParams& params = result.params;
  if (cfg.standardize) params.input = ColumnScaler::fit(features);
  const Dense2D inputs = params.input.apply(features);
  AutoencoderGrads grads(params);
  Adam adam({.learning_rate = cfg.learning_rate, .weight_decay = cfg.weight_decay});
  const std::size_t batch = std::max<std::size_t>(1, std::min(cfg.batch_size, n));
  Rng rng(derive_seed(cfg.seed, 0xae, 1));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_indices(order, rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      Dense2D x(static_cast<Eigen::Index>(end - start), features.cols());
      for (std::size_t i = start; i < end; ++i) {
        x.row(static_cast<Eigen::Index>(i - start)) = inputs.row(static_cast<Eigen::Index>(order[i]));
      }
      std::optional<Dense2D> in_mask;
      std::optional<Dense2D> z_mask;
      if (params.dropout > 0.0) {
        in_mask = dropout_mask(x.rows(), x.cols(), params.dropout, rng);
        z_mask = dropout_mask(x.rows(), static_cast<Eigen::Index>(params.latent_dim()),
                              params.dropout, rng);
      }
      grads.zero();
      const double loss = reconstruction_loss_and_grad(params, x, in_mask, z_mask, grads);
      if (!std::isfinite(loss)) {
        throw NumericError("pretrain: non-finite reconstruction loss at epoch " +
                           std::to_string(epoch + 1));
      }
      auto r = refs(params, grads);
      adam.step(r);
      total += loss;
      ++batches;
    }
    result.epoch_losses.push_back(total / static_cast<double>(batches));
    std::ostringstream msg;
    msg << "autoencoder epoch " << epoch + 1 << "/" << cfg.epochs
        << " loss=" << result.epoch_losses.back();
    log::debug(msg.str());
  }
  return result;
}

void save_layers(TensorBundle& bundle, const std::string& prefix,
                 std::span<const LinearLayer> layers) {
  bundle.put_scalar(prefix + "count", static_cast<double>(layers.size()));
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string p = prefix + std::to_string(i) + ".";
    bundle.put(p + "weight", layers[i].weight);
    bundle.put(p + "bias", layers[i].bias);
    bundle.put_scalar(p + "relu", layers[i].activation == Activation::relu ? 1.0 : 0.0);
  }
}

std::vector<LinearLayer> load_layers(const TensorBundle& bundle, const std::string& prefix) {
  const auto count = static_cast<std::size_t>(bundle.scalar(prefix + "count"));
  std::vector<LinearLayer> layers;
  for (std::size_t i = 0; i < count; ++i) {
    const std::string p = prefix + std::to_string(i) + ".";
    LinearLayer l;
    l.weight = bundle.matrix(p + "weight");
    l.bias = bundle.vector(p + "bias");
    l.activation = bundle.scalar(p + "relu") != 0.0 ? Activation::relu : Activation::identity;
    if (l.bias.size() != l.weight.rows()) throw DataError("layer '" + p + "' has inconsistent shapes");
    if (!layers.empty() && layers.back().out_dim() != l.in_dim()) {
      throw DataError("layer '" + p + "' does not chain with its predecessor");
    }
    layers.push_back(std::move(l));
  }
  return layers;
}

void save_scaler(TensorBundle& bundle, const std::string& prefix, const ColumnScaler& s) {
  bundle.put_scalar(prefix + "present", s.empty() ? 0.0 : 1.0);
  if (s.empty()) return;
  bundle.put(prefix + "mean", s.mean);
  bundle.put(prefix + "stddev", s.stddev);
}

ColumnScaler load_scaler(const TensorBundle& bundle, const std::string& prefix) {
  ColumnScaler s;
  if (bundle.scalar(prefix + "present") == 0.0) return s;
  s.mean = bundle.vector(prefix + "mean");
  s.stddev = bundle.vector(prefix + "stddev");
  if (s.mean.size() != s.stddev.size()) throw DataError("scaler '" + prefix + "' has inconsistent shapes");
  return s;
}

void save_autoencoder(TensorBundle& bundle, const std::string& prefix,
                      const AutoencoderParams& params) {
  save_layers(bundle, prefix + "encoder.", params.encoder);
  save_layers(bundle, prefix + "decoder.", params.decoder);
  bundle.put_scalar(prefix + "dropout", params.dropout);
  save_scaler(bundle, prefix + "input.", params.input);
}

AutoencoderParams load_autoencoder(const TensorBundle& bundle, const std::string& prefix) {
  AutoencoderParams p;
  p.encoder = load_layers(bundle, prefix + "encoder.");
  p.decoder = load_layers(bundle, prefix + "decoder.");
  p.dropout = bundle.scalar(prefix + "dropout");
  p.input = load_scaler(bundle, prefix + "input.");
  if (!p.input.empty() && !p.encoder.empty() &&
      static_cast<std::size_t>(p.input.mean.size()) != p.encoder.front().in_dim()) {
    throw DataError("autoencoder checkpoint: input scaler does not match the encoder");
  }
  if (p.encoder.empty() || p.decoder.empty() ||
      p.encoder.back().out_dim() != p.decoder.front().in_dim() ||
      p.decoder.back().out_dim() != p.encoder.front().in_dim()) {
    throw DataError("autoencoder checkpoint: encoder and decoder do not mirror");
  }
  return p;
}

void save_autoencoder(const std::filesystem::path& path, const AutoencoderParams& params) {
  TensorBundle bundle;
  save_autoencoder(bundle, "", params);
  write_tensor_file(path, kAutoencoderMagic, bundle);
}

AutoencoderParams load_autoencoder(const std::filesystem::path& path) {
  return load_autoencoder(read_tensor_file(path, kAutoencoderMagic), "");
}

}  // namespace selfore
