#pragma once

#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "msg/config.hpp"
#include "msg/corpus.hpp"
#include "msg/model.hpp"
#include "msg/model_params.hpp"
#include "msg/params.hpp"

namespace msg {

// -(1/T) sum_t log max(P_t[target_t], 1e-12).
template <class T>
ad::Var<T> nll_loss(std::span<const StepOutput<T>> steps, std::span<const int> target);

// (1/T) sum_t sum_{v in q,d} rho_hat_v,t sum_i min(alpha_v,t,i, cov_v,t,i) with
// rho_hat renormalised over the two copy views at each step.
template <class T>
ad::Var<T> mvc_loss(std::span<const StepOutput<T>> steps);

struct LossBreakdown {
  double nll = 0.0;
  double cov = 0.0;
  double total = 0.0;
};

template <class T>
struct ExampleLoss {
  ad::Var<T> total;
  LossBreakdown parts;
};

// Teacher-forced loss of one example. with_cov adds lambda_cov * mvc.
template <class T>
ExampleLoss<T> example_loss(ad::Graph<T>& g, const ModelParams& mp, const Config& cfg, const ExampleView& ex,
                            bool with_cov, std::mt19937_64* rng = nullptr, long* gate_fallbacks = nullptr);

// Seed for the dropout stream of one example in one batch.
std::mt19937_64 dropout_rng(std::uint64_t seed, int epoch, int batch, int example);
// Training order of an epoch; depends only on (seed, epoch).
std::vector<int> epoch_order(std::uint64_t seed, int epoch, int count);

struct BatchLog {
  int epoch = 0;
  int batch = 0;
  double nll = 0.0;
  double cov = 0.0;
  double total = 0.0;
};

struct EpochSummary {
  int epoch = 0;
  bool cov_on = false;
  LossBreakdown train;
  double dev_nll = std::numeric_limits<double>::quiet_NaN();
  double grad_norm = 0.0;  // mean pre-clipping norm
};

struct TrainOptions {
  std::string checkpoint_dir;  // empty: no checkpoints
  std::string log_path;        // empty: no JSONL log
  std::string resume_from;     // checkpoint to continue from
  int max_epochs = -1;         // stop early after this epoch (for tests)
  std::function<void(const BatchLog&)> on_batch;
  std::function<void(const EpochSummary&)> on_epoch;
};

struct TrainResult {
  std::vector<BatchLog> batches;
  std::vector<EpochSummary> epochs;
  double best_dev = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  long gate_fallbacks = 0;
};

// Phase 1 (nll) for phase1_epochs, then phase 2 (nll + lambda_cov * mvc,
// only when cfg.mvc) for phase2_epochs. Gradients of a batch are summed in
// grad_slots fixed slots, so results do not depend on the thread count.
template <class T>
TrainResult train(const Config& cfg, const std::vector<TokenizedExample>& train_set,
                  const std::vector<TokenizedExample>& dev_set, const Vocabulary& vocab, ParamStore<T>& store,
                  const ModelParams& mp, const TrainOptions& opt = {});

// Mean breakdown over examples without dropout.
template <class T>
LossBreakdown evaluate_loss(const Config& cfg, const std::vector<TokenizedExample>& examples, const Vocabulary& vocab,
                            const ParamStore<T>& store, const ModelParams& mp, bool with_cov);

}  // namespace msg
