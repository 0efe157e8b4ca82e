#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "selfore/numerics.hpp"
#include "selfore/tensor_io.hpp"

namespace selfore {

struct PretrainConfig {
  std::vector<std::size_t> hidden{500, 500};
  std::size_t latent = 200;  // h_AC
  int epochs = 20;
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;
  double init_std = 0.01;
  std::size_t batch_size = 256;
  double dropout = 0.2;
  bool standardize = true;  // fit a ColumnScaler on the inputs first
  std::uint64_t seed = 0;
};

/// Denoising autoencoder. Hidden layers use relu; the latent layer and the
/// reconstruction layer are linear.
struct AutoencoderParams {
  std::vector<LinearLayer> encoder;  // D -> hidden... -> latent
  std::vector<LinearLayer> decoder;  // latent -> ...hidden -> D
  double dropout = 0.2;
  ColumnScaler input;  // applied to h before the encoder

  std::size_t input_dim() const { return encoder.front().in_dim(); }
  std::size_t latent_dim() const { return encoder.back().out_dim(); }
};

AutoencoderParams make_autoencoder(std::size_t input_dim, const PretrainConfig& cfg);

/// Inference-mode encoder map g_phi: no corruption. The params overload
/// standardizes h with params.input first.
Dense2D encode(std::span<const LinearLayer> encoder, const Dense2D& h);
Dense2D encode(const AutoencoderParams& params, const Dense2D& h);
Dense2D reconstruct(const AutoencoderParams& params, const Dense2D& h);

/// Mean over all entries of (reconstruction - standardized h)^2, inference mode.
double reconstruction_loss(const AutoencoderParams& params, const Dense2D& h);

struct AutoencoderGrads {
  std::vector<LinearGrads> encoder;
  std::vector<LinearGrads> decoder;
  explicit AutoencoderGrads(const AutoencoderParams& p);
  void zero();
};

/// Loss and accumulated gradient for one batch. Optional masks corrupt the
/// input (h~) and the latent (z~); pass nullopt for the clean path.
double reconstruction_loss_and_grad(const AutoencoderParams& params, const Dense2D& h,
                                    const std::optional<Dense2D>& input_mask,
                                    const std::optional<Dense2D>& latent_mask,
                                    AutoencoderGrads& grads);

struct PretrainResult {
  AutoencoderParams params;
  std::vector<double> epoch_losses;  // mean training loss per epoch
};

/// Mini-batch Adam on the reconstruction loss with dropout corruption on the
/// input and the latent code. Throws NumericError on a non-finite loss and
/// DataError on an empty input. Batches larger than N are clamped to N.
PretrainResult pretrain(const Dense2D& features, const PretrainConfig& cfg);

void save_layers(TensorBundle& bundle, const std::string& prefix,
                 std::span<const LinearLayer> layers);
std::vector<LinearLayer> load_layers(const TensorBundle& bundle, const std::string& prefix);

void save_scaler(TensorBundle& bundle, const std::string& prefix, const ColumnScaler& s);
ColumnScaler load_scaler(const TensorBundle& bundle, const std::string& prefix);

void save_autoencoder(const std::filesystem::path& path, const AutoencoderParams& params);
AutoencoderParams load_autoencoder(const std::filesystem::path& path);
void save_autoencoder(TensorBundle& bundle, const std::string& prefix,
                      const AutoencoderParams& params);
AutoencoderParams load_autoencoder(const TensorBundle& bundle, const std::string& prefix);

}  // namespace selfore
