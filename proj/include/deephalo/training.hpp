#pragma once

// Losses, Adam, the mini-batch training loop, and evaluation metrics.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "deephalo/autodiff.hpp"
#include "deephalo/choice_data.hpp"
#include "deephalo/choice_model.hpp"

namespace deephalo {

enum class Loss { kNll, kMseOneHot };

const char* loss_name(Loss l);
Loss parse_loss(const std::string& s);

/// −ln p[chosen]. Throws ModelError when that probability is 0.
double nll_loss(std::span<const double> probabilities, std::size_t chosen);
/// Σ_slots (p − onehot)² / |S|.
double mse_onehot_loss(std::span<const double> probabilities, std::size_t chosen);

/// Batch-mean loss node for width x size utilities. Observations in the batch
/// are weighted by 1/normalizer (the batch size when normalizer is 0).
ad::Var batch_loss(ad::Var utilities, const Batch& batch, Loss loss, double normalizer = 0.0);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<ad::Parameter*> params, AdamConfig config = {});

  /// One update from the gradients stored in the parameters. Frozen
  /// parameters are skipped. Throws TrainingError naming the parameter when a
  /// gradient is not finite.
  void step();
  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  double learning_rate() const { return config_.learning_rate; }
  std::size_t steps() const { return t_; }

 private:
  std::vector<ad::Parameter*> params_;
  AdamConfig config_;
  std::vector<Matrix> m_, v_;
  std::size_t t_ = 0;
};

/// Rescales all trainable gradients so their joint L2 norm is at most
/// max_norm. Returns the norm before clipping.
double clip_gradients(std::span<ad::Parameter* const> params, double max_norm);

struct LrSchedule {
  double second_rate = 1e-4;
  /// First epoch (1-based) trained at second_rate.
  std::size_t switch_epoch = 0;
};

struct TrainConfig {
  Loss loss = Loss::kNll;
  double learning_rate = 1e-3;
  /// 0 = full batch.
  std::size_t batch_size = 0;
  std::size_t max_epochs = 100;
  /// 0 disables early stopping.
  std::size_t patience = 0;
  std::uint64_t seed = 0;
  std::optional<LrSchedule> lr_schedule;
  /// 0 disables clipping.
  double max_grad_norm = 0.0;
  std::size_t threads = 1;
  /// Observations per gradient chunk; chunks are reduced in a fixed order so
  /// results do not depend on `threads`.
  std::size_t chunk_size = 256;

  /// Throws TrainingError on invalid settings.
  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_nll = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_nll = 0.0;
  bool stopped_early = false;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Seeded shuffled mini-batch Adam on the training split. After each epoch the
/// validation NLL (training NLL without a validation split) is recorded. With
/// patience > 0, training stops after `patience` epochs without improvement
/// and the best parameters are restored.
TrainResult train(ChoiceModel& model, const data::Dataset& d, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

void write_history_csv(const std::vector<EpochRecord>& history, std::ostream& out);

struct Metrics {
  double nll = 0.0;
  double accuracy = 0.0;
  std::optional<double> rmse;
  std::size_t count = 0;
};

/// Mean NLL and top-1 accuracy (ties go to the lowest slot).
Metrics evaluate(ChoiceModel& model, const data::Dataset& d,
                 std::span<const std::size_t> indices);
Metrics evaluate(ChoiceModel& model, const data::Dataset& d);

/// sqrt(Σ_sets Σ_slots (p̂ − p)² / Σ_sets |S|).
double rmse_vs_frequencies(ChoiceModel& model, const data::ProbabilityTable& table,
                           int universe, const Matrix& item_features = Matrix());

/// Predicted probability table over the sets of `table`.
data::ProbabilityTable predict_table(ChoiceModel& model, const data::ProbabilityTable& table,
                                     int universe, const Matrix& item_features = Matrix());

}  // namespace deephalo
