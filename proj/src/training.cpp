#include "msg/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <omp.h>

#include "json.hpp"
#include "msg/error.hpp"
#include "msg/optim.hpp"

namespace msg {

using ad::Var;

template <class T>
Var<T> nll_loss(std::span<const StepOutput<T>> steps, std::span<const int> target) {
  if (steps.size() != target.size() || steps.empty()) {
    throw DimensionError("nll_loss: " + std::to_string(steps.size()) + " steps for " + std::to_string(target.size()) +
                         " targets");
  }
  Var<T> total;
  for (std::size_t t = 0; t < steps.size(); ++t) {
    const Var<T> lp = log_clamped(pick(steps[t].p_final, target[t]), static_cast<T>(1e-12));
    total = t == 0 ? lp : add(total, lp);
  }
  return scale(total, T(-1) / static_cast<T>(steps.size()));
}

template <class T>
Var<T> mvc_loss(std::span<const StepOutput<T>> steps) {
  if (steps.empty()) throw DimensionError("mvc_loss: empty unroll");
  Var<T> total;
  for (std::size_t t = 0; t < steps.size(); ++t) {
    const auto& s = steps[t];
    if (!s.cov_q.valid() || !s.cov_d.valid()) throw ConfigError("mvc_loss: coverage was not recorded");
    const Var<T> rq = pick(s.rho, 1);
    const Var<T> rd = pick(s.rho, 2);
    const Var<T> term = add(mul_scalar(sum(minimum(s.alpha_q, s.cov_q)), rq),
                            mul_scalar(sum(minimum(s.alpha_d_hat, s.cov_d)), rd));
    const Var<T> step = div_scalar(term, add(rq, rd));
    total = t == 0 ? step : add(total, step);
  }
  return scale(total, T(1) / static_cast<T>(steps.size()));
}

template <class T>
ExampleLoss<T> example_loss(ad::Graph<T>& g, const ModelParams& mp, const Config& cfg, const ExampleView& ex,
                            bool with_cov, std::mt19937_64* rng, long* gate_fallbacks) {
  StepOptions so;
  so.record_coverage = with_cov;
  so.rng = rng;
  so.gate_fallbacks = gate_fallbacks;
  const Unroll<T> u = teacher_forced(g, mp, cfg, ex, so);
  const std::span<const StepOutput<T>> steps(u.steps);
  ExampleLoss<T> out;
  const Var<T> nll = nll_loss(steps, std::span<const int>(ex.target));
  out.parts.nll = static_cast<double>(nll.item());
  out.total = nll;
  if (with_cov) {
    const Var<T> cov = mvc_loss(steps);
    out.parts.cov = static_cast<double>(cov.item());
    out.total = add(nll, scale(cov, static_cast<T>(cfg.lambda_cov)));
  }
  out.parts.total = out.parts.nll + cfg.lambda_cov * out.parts.cov;
  return out;
}

std::mt19937_64 dropout_rng(std::uint64_t seed, int epoch, int batch, int example) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(batch),
                    static_cast<std::uint32_t>(example), 0x64u};
  return std::mt19937_64(seq);
}

std::vector<int> epoch_order(std::uint64_t seed, int epoch, int count) {
  std::vector<int> order(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) order[static_cast<std::size_t>(i)] = i;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5eu};
  std::mt19937_64 rng(seq);
  // Fisher-Yates with explicit arithmetic; std::shuffle is not portable across libraries.
  for (int i = count - 1; i > 0; --i) {
    const int j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  return order;
}

namespace {

bool finite(const LossBreakdown& l) { return std::isfinite(l.nll) && std::isfinite(l.cov) && std::isfinite(l.total); }

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <class T>
void save(const std::string& path, const ParamStore<T>& store, const Config& cfg, int epoch, double best_dev,
          int best_epoch) {
  CheckpointMeta meta;
  meta.entries["epoch"] = std::to_string(epoch);
  meta.entries["best_dev"] = fmt(best_dev);
  meta.entries["best_epoch"] = std::to_string(best_epoch);
  meta.entries["config"] = format_config(cfg);
  save_checkpoint(path, store, meta);
}

}  // namespace

template <class T>
LossBreakdown evaluate_loss(const Config& cfg, const std::vector<TokenizedExample>& examples, const Vocabulary& vocab,
                            const ParamStore<T>& store, const ModelParams& mp, bool with_cov) {
  LossBreakdown mean;
  if (examples.empty()) return mean;
  const int n = static_cast<int>(examples.size());
  std::vector<LossBreakdown> parts(static_cast<std::size_t>(n));
  const BatchLimits limits = cfg.limits();
#pragma omp parallel for schedule(dynamic, 1)
  for (int i = 0; i < n; ++i) {
    const Batch b = make_batch({examples[static_cast<std::size_t>(i)]}, vocab, limits);
    ad::Graph<T> g(&store, nullptr);
    parts[static_cast<std::size_t>(i)] = example_loss(g, mp, cfg, b.view(0), with_cov).parts;
  }
  for (const auto& p : parts) {
    mean.nll += p.nll;
    mean.cov += p.cov;
  }
  mean.nll /= n;
  mean.cov /= n;
  mean.total = mean.nll + cfg.lambda_cov * mean.cov;
  return mean;
}

template <class T>
TrainResult train(const Config& cfg, const std::vector<TokenizedExample>& train_set,
                  const std::vector<TokenizedExample>& dev_set, const Vocabulary& vocab, ParamStore<T>& store,
                  const ModelParams& mp, const TrainOptions& opt) {
  cfg.validate();
  if (train_set.empty()) throw DataError("training set is empty");
  TrainResult res;
  int start = 1;
  if (!opt.resume_from.empty()) {
    CheckpointMeta meta;
    ParamStore<T> loaded = load_checkpoint<T>(opt.resume_from, &meta);
    if (loaded.size() != store.size()) throw DataError("checkpoint does not match the model: " + opt.resume_from);
    for (int i = 0; i < store.size(); ++i) {
      if (loaded[i].name != store[i].name || loaded[i].size() != store[i].size()) {
        throw DataError("checkpoint parameter mismatch at '" + store[i].name + "'");
      }
    }
    store = std::move(loaded);
    start = std::stoi(meta.entries.at("epoch")) + 1;
    res.best_dev = std::stod(meta.entries.at("best_dev"));
    res.best_epoch = std::stoi(meta.entries.at("best_epoch"));
  }
  if (!opt.checkpoint_dir.empty()) std::filesystem::create_directories(opt.checkpoint_dir);
  std::ofstream log;
  if (!opt.log_path.empty()) {
    log.open(opt.log_path, start == 1 ? std::ios::trunc : std::ios::app);
    if (!log) throw DataError("cannot write training log " + opt.log_path);
  }

  const int total_epochs = cfg.phase1_epochs + cfg.phase2_epochs;
  const int last = opt.max_epochs > 0 ? std::min(total_epochs, opt.max_epochs) : total_epochs;
  const int n = static_cast<int>(train_set.size());
  const int slots = std::max(1, cfg.grad_slots);
  const BatchLimits limits = cfg.limits();
  std::vector<GradBuffer<T>> grads(static_cast<std::size_t>(slots));
  for (auto& gb : grads) gb.reset(store);

  for (int epoch = start; epoch <= last; ++epoch) {
    const bool cov_on = cfg.mvc && epoch > cfg.phase1_epochs;
    const auto order = epoch_order(cfg.seed, epoch, n);
    EpochSummary summary;
    summary.epoch = epoch;
    summary.cov_on = cov_on;
    int batches = 0;
    for (int begin = 0, bi = 0; begin < n; begin += cfg.batch_size, ++bi) {
      const int count = std::min(cfg.batch_size, n - begin);
      std::vector<TokenizedExample> items;
      for (int k = 0; k < count; ++k) items.push_back(train_set[static_cast<std::size_t>(order[static_cast<std::size_t>(begin + k)])]);
      const Batch batch = make_batch(items, vocab, limits);
      std::vector<LossBreakdown> parts(static_cast<std::size_t>(count));
      std::vector<long> fallbacks(static_cast<std::size_t>(slots), 0);
      for (auto& gb : grads) gb.zero();

#pragma omp parallel for schedule(static, 1)
      for (int s = 0; s < slots; ++s) {
        for (int b = s; b < count; b += slots) {
          std::mt19937_64 rng = dropout_rng(cfg.seed, epoch, bi, b);
          ad::Graph<T> g(&store, &grads[static_cast<std::size_t>(s)]);
          const ExampleView ex = batch.view(b);
          ExampleLoss<T> el = example_loss(g, mp, cfg, ex, cov_on, cfg.dropout > 0 ? &rng : nullptr,
                                            &fallbacks[static_cast<std::size_t>(s)]);
          parts[static_cast<std::size_t>(b)] = el.parts;
          g.backward(el.total);
        }
      }

      for (long f : fallbacks) res.gate_fallbacks += f;
      BatchLog bl;
      bl.epoch = epoch;
      bl.batch = bi;
      for (int b = 0; b < count; ++b) {
        const auto& p = parts[static_cast<std::size_t>(b)];
        if (!finite(p)) {
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(bi) +
                             ", example '" + batch.ids[static_cast<std::size_t>(b)] + "'");
        }
        bl.nll += p.nll;
        bl.cov += p.cov;
      }
      bl.nll /= count;
      bl.cov /= count;
      bl.total = bl.nll + cfg.lambda_cov * bl.cov;

      for (int s = 1; s < slots; ++s) grads[0].accumulate(grads[static_cast<std::size_t>(s)]);
      grads[0].scale(T(1) / static_cast<T>(count));
      summary.grad_norm += clip_grad_norm(grads[0], cfg.clip_norm);
      try {
        adagrad_step(store, grads[0], static_cast<T>(cfg.lr));
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(bi) + ")");
      }

      summary.train.nll += bl.nll;
      summary.train.cov += bl.cov;
      ++batches;
      res.batches.push_back(bl);
      if (log) {
        nlohmann::json j{{"epoch", bl.epoch}, {"batch", bl.batch}, {"nll", bl.nll}, {"cov", bl.cov}, {"total", bl.total}};
        log << j.dump() << '\n';
        log.flush();
      }
      if (opt.on_batch) opt.on_batch(bl);
    }
    summary.train.nll /= batches;
    summary.train.cov /= batches;
    summary.train.total = summary.train.nll + cfg.lambda_cov * summary.train.cov;
    summary.grad_norm /= batches;

    bool improved = false;
    if (!dev_set.empty()) {
      summary.dev_nll = evaluate_loss(cfg, dev_set, vocab, store, mp, false).nll;
      if (summary.dev_nll < res.best_dev) {
        res.best_dev = summary.dev_nll;
        res.best_epoch = epoch;
        improved = true;
      }
    }
    if (!opt.checkpoint_dir.empty()) {
      const std::filesystem::path dir(opt.checkpoint_dir);
      save((dir / ("epoch-" + std::to_string(epoch) + ".ckpt")).string(), store, cfg, epoch, res.best_dev,
           res.best_epoch);
      save((dir / "last.ckpt").string(), store, cfg, epoch, res.best_dev, res.best_epoch);
      if (improved || dev_set.empty()) {
        save((dir / "best.ckpt").string(), store, cfg, epoch, res.best_dev, res.best_epoch);
      }
    }
    res.epochs.push_back(summary);
    if (opt.on_epoch) opt.on_epoch(summary);
  }
  return res;
}

#define MSG_INSTANTIATE(T)                                                                                          \
  template Var<T> nll_loss<T>(std::span<const StepOutput<T>>, std::span<const int>);                               \
  template Var<T> mvc_loss<T>(std::span<const StepOutput<T>>);                                                     \
  template ExampleLoss<T> example_loss<T>(ad::Graph<T>&, const ModelParams&, const Config&, const ExampleView&,    \
                                          bool, std::mt19937_64*, long*);                                                 \
  template TrainResult train<T>(const Config&, const std::vector<TokenizedExample>&,                               \
                                const std::vector<TokenizedExample>&, const Vocabulary&, ParamStore<T>&,           \
                                const ModelParams&, const TrainOptions&);                                          \
  template LossBreakdown evaluate_loss<T>(const Config&, const std::vector<TokenizedExample>&, const Vocabulary&, \
                                          const ParamStore<T>&, const ModelParams&, bool);

MSG_INSTANTIATE(float)
MSG_INSTANTIATE(double)

}  // namespace msg
