#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "selfore/corpus.hpp"
#include "selfore/encoder.hpp"
#include "selfore/numerics.hpp"

namespace selfore {

/// Single fully connected layer D -> K over dropout-corrupted features.
struct ClassifierParams {
  LinearLayer head;
  double dropout = 0.1;

  int k() const { return static_cast<int>(head.out_dim()); }
  std::size_t dim() const { return head.in_dim(); }
};

/// Zero-initialized head.
ClassifierParams make_classifier(std::size_t dim, int k, double dropout = 0.1);

struct TrainSchedule {
  double learning_rate = 1e-5;
  double warmup_fraction = 0.1;
  double weight_decay = 0.01;
  int encoder_freeze_epochs = 3;
  int epochs = 5;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

struct TrainReport {
  std::vector<double> epoch_losses;  // mean training loss per epoch
  double initial_loss = 0.0;         // inference-mode loss before the first step
  double final_accuracy = 0.0;       // inference-mode agreement with the labels after training
  std::size_t encoder_updates = 0;
};

/// Logits N x K, no dropout.
Dense2D forward(const ClassifierParams& params, const Dense2D& features);

/// Trains the head on fixed features (precomputed-encoder mode).
TrainReport train(ClassifierParams& params, const Dense2D& features, std::span<const int> labels,
                  const TrainSchedule& sched);

/// Trains the head and, after encoder_freeze_epochs, the encoder too.
TrainReport train(ClassifierParams& params, BuiltinEncoder& encoder,
                  std::span<const MarkedSentence> sentences, std::span<const int> labels,
                  const TrainSchedule& sched);

std::vector<int> predict(const ClassifierParams& params, const Dense2D& features);
std::vector<int> predict(const ClassifierParams& params, const BuiltinEncoder& encoder,
                         std::span<const MarkedSentence> sentences);

void save_classifier(TensorBundle& bundle, const std::string& prefix, const ClassifierParams& p);
ClassifierParams load_classifier(const TensorBundle& bundle, const std::string& prefix);
void save_classifier(const std::filesystem::path& path, const ClassifierParams& p);
ClassifierParams load_classifier(const std::filesystem::path& path);

}  // namespace selfore
