#include "deephalo/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <memory>
#include <ostream>
#include <random>
#include <thread>

#include "deephalo/errors.hpp"
#include "deephalo/log.hpp"

namespace deephalo {

const char* loss_name(Loss l) { return l == Loss::kNll ? "nll" : "mse_onehot"; }

Loss parse_loss(const std::string& s) {
  if (s == "nll") return Loss::kNll;
  if (s == "mse_onehot" || s == "mse-onehot" || s == "mse") return Loss::kMseOneHot;
  throw TrainingError("unknown loss '" + s + "' (expected nll or mse_onehot)");
}

double nll_loss(std::span<const double> probabilities, std::size_t chosen) {
  if (chosen >= probabilities.size()) throw ModelError("chosen slot outside the set");
  const double p = probabilities[chosen];
  if (!(p > 0.0)) {
    throw ModelError("chosen alternative has probability 0; data and model are inconsistent");
  }
  return -std::log(p);
}

double mse_onehot_loss(std::span<const double> probabilities, std::size_t chosen) {
  if (chosen >= probabilities.size()) throw ModelError("chosen slot outside the set");
  double s = 0.0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    const double d = probabilities[i] - (i == chosen ? 1.0 : 0.0);
    s += d * d;
  }
  return s / static_cast<double>(probabilities.size());
}

ad::Var batch_loss(ad::Var utilities, const Batch& batch, Loss loss, double normalizer) {
  if (normalizer <= 0.0) normalizer = static_cast<double>(batch.size);
  for (int c : batch.chosen_slot) {
    if (c < 0) throw DataError("batch has no recorded choices");
  }
  ad::Tape& tape = *utilities.tape();
  if (loss == Loss::kNll) {
    const ad::Var logp = ad::masked_log_softmax(utilities, batch.mask);
    return ad::scale(ad::sum(ad::pick(logp, batch.chosen_slot)), -1.0 / normalizer);
  }
  const ad::Var p = ad::masked_softmax(utilities, batch.mask);
  Matrix onehot(batch.width, batch.size);
  Matrix weights(1, batch.size);
  for (std::size_t b = 0; b < batch.size; ++b) {
    onehot(static_cast<std::size_t>(batch.chosen_slot[b]), b) = 1.0;
    weights[b] = 1.0 / batch.set_sizes[b];
  }
  const ad::Var diff = ad::sub(p, tape.constant(std::move(onehot)));
  const ad::Var per_obs = ad::mul_row_broadcast(ad::elementwise_square(diff),
                                                tape.constant(std::move(weights)));
  return ad::scale(ad::sum(per_obs), 1.0 / normalizer);
}

// ---- Adam --------------------------------------------------------------------

Adam::Adam(std::vector<ad::Parameter*> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  for (const auto* p : params_) {
    m_.emplace_back(p->value.rows(), p->value.cols());
    v_.emplace_back(p->value.rows(), p->value.cols());
  }
}

void Adam::step() {
  for (const auto* p : params_) {
    if (p->trainable && !all_finite(p->grad)) {
      throw TrainingError("non-finite gradient in parameter '" + p->name + "'");
    }
  }
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr = config_.learning_rate;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    ad::Parameter& p = *params_[k];
    if (!p.trainable) continue;
    Matrix& m = m_[k];
    Matrix& v = v_[k];
    if (!m.same_shape(p.value)) throw DimensionError("optimizer state does not match '" + p.name + "'");
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p.value[i] -= lr * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
  }
}

double clip_gradients(std::span<ad::Parameter* const> params, double max_norm) {
  double sq = 0.0;
  for (const auto* p : params) {
    if (!p->trainable) continue;
    for (double g : p->grad.data()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto* p : params)
      if (p->trainable) p->grad *= f;
  }
  return norm;
}

// ---- training loop -------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw TrainingError("learning rate must be finite and non-negative");
  }
  if (max_epochs == 0) throw TrainingError("max_epochs must be at least 1");
  if (patience > max_epochs) throw TrainingError("patience cannot exceed max_epochs");
  if (lr_schedule) {
    if (!(lr_schedule->second_rate >= 0.0)) throw TrainingError("second learning rate must be non-negative");
    if (lr_schedule->switch_epoch < 1) throw TrainingError("learning-rate switch epoch must be at least 1");
  }
  if (max_grad_norm < 0.0) throw TrainingError("max_grad_norm must be non-negative");
  if (threads < 1) throw TrainingError("threads must be at least 1");
  if (chunk_size < 1) throw TrainingError("chunk_size must be at least 1");
}

namespace {

// Accumulates the gradient of the batch-mean loss into the parameters and
// returns the loss. Chunks are flushed in index order whatever the thread count.
double accumulate_gradients(ChoiceModel& model, const data::Dataset& d,
                            std::span<const std::size_t> idx, const TrainConfig& cfg) {
  const std::size_t n = idx.size();
  const std::size_t chunks = (n + cfg.chunk_size - 1) / cfg.chunk_size;
  const double norm = static_cast<double>(n);

  auto run_chunk = [&](std::size_t c, ad::Tape& tape) {
    const std::size_t lo = c * cfg.chunk_size;
    const std::size_t hi = std::min(n, lo + cfg.chunk_size);
    const Batch batch = make_batch(d, idx.subspan(lo, hi - lo));
    const ad::Var loss = batch_loss(model.utilities(tape, batch), batch, cfg.loss, norm);
    tape.backward(loss);
    return loss.value()[0];
  };

  double total = 0.0;
  if (cfg.threads <= 1 || chunks <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) {
      ad::Tape tape(ad::GradMode::kEnabled, false);
      total += run_chunk(c, tape);
      tape.flush_parameter_gradients();
    }
    return total;
  }

  std::vector<std::unique_ptr<ad::Tape>> tapes(chunks);
  std::vector<double> losses(chunks, 0.0);
  std::vector<std::exception_ptr> errors(chunks);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t c = next++; c < chunks; c = next++) {
      try {
        tapes[c] = std::make_unique<ad::Tape>(ad::GradMode::kEnabled, false);
        losses[c] = run_chunk(c, *tapes[c]);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t workers = std::min(cfg.threads, chunks);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (std::size_t c = 0; c < chunks; ++c) {
    if (errors[c]) std::rethrow_exception(errors[c]);
    tapes[c]->flush_parameter_gradients();
    total += losses[c];
  }
  return total;
}

}  // namespace

TrainResult train(ChoiceModel& model, const data::Dataset& d, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  model.check_compatible(d);
  std::vector<std::size_t> order = d.indices(data::Split::kTrain);
  if (order.empty()) throw TrainingError("no training observations");
  std::vector<std::size_t> val = d.indices(data::Split::kVal);
  const bool has_val = !val.empty();
  if (!has_val) val = order;

  auto params = model.parameters();
  Adam opt(params, AdamConfig{config.learning_rate});
  std::mt19937_64 rng(config.seed);
  const std::size_t n = order.size();
  const std::size_t bs = config.batch_size == 0 ? n : std::min(config.batch_size, n);

  TrainResult result;
  result.best_val_nll = std::numeric_limits<double>::infinity();
  std::vector<Matrix> best;
  const auto start = std::chrono::steady_clock::now();

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    double lr = config.learning_rate;
    if (config.lr_schedule && epoch >= config.lr_schedule->switch_epoch) {
      lr = config.lr_schedule->second_rate;
    }
    opt.set_learning_rate(lr);
    std::shuffle(order.begin(), order.end(), rng);

    double weighted = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t lo = 0; lo < n; lo += bs, ++batch_no) {
      const std::size_t hi = std::min(n, lo + bs);
      const std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      model.zero_grad();
      const double loss = accumulate_gradients(model, d, idx, config);
      if (!std::isfinite(loss)) {
        throw TrainingError("loss became non-finite at epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(batch_no));
      }
      if (config.max_grad_norm > 0.0) clip_gradients(params, config.max_grad_norm);
      opt.step();
      weighted += loss * static_cast<double>(hi - lo);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = weighted / static_cast<double>(n);
    rec.val_nll = evaluate(model, d, val).nll;
    rec.lr = lr;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (!std::isfinite(rec.val_nll)) {
      throw TrainingError("validation NLL became non-finite at epoch " + std::to_string(epoch));
    }
    result.history.push_back(rec);
    log::debug("epoch " + std::to_string(epoch) + " loss " + std::to_string(rec.train_loss) +
               (has_val ? " val_nll " : " train_nll ") + std::to_string(rec.val_nll));
    if (on_epoch) on_epoch(rec);

    if (rec.val_nll < result.best_val_nll) {
      result.best_val_nll = rec.val_nll;
      result.best_epoch = epoch;
      if (config.patience > 0) best = snapshot(model);
    } else if (config.patience > 0 && epoch - result.best_epoch >= config.patience) {
      result.stopped_early = true;
      break;
    }
  }
  if (config.patience > 0 && !best.empty()) restore(model, best);
  return result;
}

void write_history_csv(const std::vector<EpochRecord>& history, std::ostream& out) {
  out << "epoch,train_loss,val_nll,lr,wall_ms\n";
  char buf[160];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.3f\n", r.epoch, r.train_loss,
                  r.val_nll, r.lr, r.wall_ms);
    out << buf;
  }
}

// ---- evaluation -------------------------------------------------------------------

Metrics evaluate(ChoiceModel& model, const data::Dataset& d,
                 std::span<const std::size_t> indices) {
  if (indices.empty()) throw DataError("cannot evaluate on an empty dataset");
  model.check_compatible(d);
  constexpr std::size_t kChunk = 1024;
  double nll = 0.0;
  std::size_t hits = 0;
  for (std::size_t lo = 0; lo < indices.size(); lo += kChunk) {
    const std::size_t hi = std::min(indices.size(), lo + kChunk);
    const Batch batch = make_batch(d, indices.subspan(lo, hi - lo));
    ad::Tape tape(ad::GradMode::kDisabled);
    const ad::Var u = model.utilities(tape, batch);
    const Matrix& logp = ad::masked_log_softmax(u, batch.mask).value();
    for (std::size_t b = 0; b < batch.size; ++b) {
      const auto chosen = static_cast<std::size_t>(batch.chosen_slot[b]);
      const double lp = logp(chosen, b);
      if (!std::isfinite(lp)) {
        throw ModelError("chosen alternative has probability 0; data and model are inconsistent");
      }
      nll -= lp;
      std::size_t best = 0;
      const auto size = static_cast<std::size_t>(batch.set_sizes[b]);
      for (std::size_t s = 1; s < size; ++s)
        if (logp(s, b) > logp(best, b)) best = s;
      hits += best == chosen;
    }
  }
  Metrics m;
  m.count = indices.size();
  m.nll = nll / static_cast<double>(m.count);
  m.accuracy = static_cast<double>(hits) / static_cast<double>(m.count);
  return m;
}

Metrics evaluate(ChoiceModel& model, const data::Dataset& d) {
  const auto idx = d.all_indices();
  return evaluate(model, d, idx);
}

data::ProbabilityTable predict_table(ChoiceModel& model, const data::ProbabilityTable& table,
                                     int universe, const Matrix& item_features) {
  std::vector<std::vector<int>> sets;
  for (const auto& row : table) sets.push_back(row.items);
  data::ProbabilityTable out;
  if (sets.empty()) return out;
  const Batch batch = make_set_batch(sets, universe, item_features);
  const auto probs = predict_probabilities(model, batch);
  for (std::size_t i = 0; i < sets.size(); ++i) out.push_back({sets[i], probs[i]});
  return out;
}

double rmse_vs_frequencies(ChoiceModel& model, const data::ProbabilityTable& table, int universe,
                           const Matrix& item_features) {
  if (table.empty()) throw DataError("rmse over an empty probability table");
  const auto pred = predict_table(model, table, universe, item_features);
  double sq = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < table.size(); ++i) {
    for (std::size_t s = 0; s < table[i].probabilities.size(); ++s) {
      const double e = pred[i].probabilities[s] - table[i].probabilities[s];
      sq += e * e;
    }
    count += table[i].probabilities.size();
  }
  return std::sqrt(sq / static_cast<double>(count));
}

}  // namespace deephalo
