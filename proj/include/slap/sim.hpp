#pragma once

// Desk-scale on-policy training simulator.
//
// A linear softmax classifier stands in for a language model's output layer:
// its weight gradient for one example is (softmax(logits) - onehot) ⊗ x, the
// same outer-product structure as an lm_head gradient. Each step forwards the
// whole batch, lets a policy prune it, and applies plain gradient descent on
// the kept samples only.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "slap/costmodel.hpp"
#include "slap/errors.hpp"
#include "slap/features.hpp"
#include "slap/rng.hpp"
#include "slap/selector.hpp"

namespace slap::sim {

struct SyntheticDatasetSpec {
  std::size_t n_classes = 10;
  std::size_t hidden_dim = 16;
  std::size_t n_train = 2560;
  std::size_t n_val = 1000;
  std::size_t n_clusters = 2;   // per class
  std::size_t redundancy = 1;   // near-duplicates per prototype
  double noise = 0.0;           // probability a training label is flipped
  std::uint64_t seed = 0;
  double center_scale = 1.0;    // stddev of cluster centers
  double cluster_spread = 0.6;  // stddev of prototypes around their center
  double jitter = 0.05;         // stddev of duplicates around their prototype

  void validate() const {
    if (n_classes < 2) throw ConfigError("n_classes must be at least 2");
    if (hidden_dim < 1) throw ConfigError("hidden_dim must be positive");
    if (n_clusters < 1) throw ConfigError("n_clusters must be positive");
    if (redundancy < 1) throw ConfigError("redundancy must be at least 1");
    if (n_val < 1) throw ConfigError("n_val must be positive");
    if (n_train < n_classes) throw ConfigError("n_train must be at least n_classes");
    if (!(noise >= 0.0 && noise <= 0.5)) throw ConfigError("noise must lie in [0, 0.5]");
    if (!(center_scale >= 0.0 && cluster_spread >= 0.0 && jitter >= 0.0))
      throw ConfigError("scales must be non-negative");
  }
};

struct Example {
  std::vector<double> x;
  std::size_t label = 0;
  std::size_t true_label = 0;
  std::size_t prototype = 0;
};

struct Dataset {
  std::size_t n_classes = 0;
  std::size_t hidden_dim = 0;
  std::vector<Example> examples;

  std::size_t size() const noexcept { return examples.size(); }
  friend bool operator==(const Dataset& a, const Dataset& b) {
    if (a.n_classes != b.n_classes || a.hidden_dim != b.hidden_dim || a.size() != b.size())
      return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const auto& x = a.examples[i];
      const auto& y = b.examples[i];
      if (x.x != y.x || x.label != y.label || x.true_label != y.true_label ||
          x.prototype != y.prototype)
        return false;
    }
    return true;
  }
};

struct DatasetPair {
  Dataset train;
  Dataset val;
};

/// Gaussian cluster centers per class; each training prototype is repeated
/// `redundancy` times with small jitter and its copies' labels are flipped
/// independently with probability `noise`. Validation labels are clean.
inline DatasetPair generate_dataset(const SyntheticDatasetSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t c = spec.n_classes;
  const std::size_t h = spec.hidden_dim;

  std::vector<std::vector<double>> centers(c * spec.n_clusters, std::vector<double>(h));
  for (auto& ctr : centers)
    for (auto& v : ctr) v = spec.center_scale * rng.normal();

  auto draw_point = [&](std::size_t cls, double spread) {
    const auto& ctr = centers[cls * spec.n_clusters + rng.uniform_index(spec.n_clusters)];
    std::vector<double> x(h);
    for (std::size_t j = 0; j < h; ++j) x[j] = ctr[j] + spread * rng.normal();
    return x;
  };

  DatasetPair out;
  out.train = {c, h, {}};
  out.val = {c, h, {}};
  out.train.examples.reserve(spec.n_train);
  for (std::size_t p = 0; out.train.size() < spec.n_train; ++p) {
    const std::size_t cls = p % c;
    const auto base = draw_point(cls, spec.cluster_spread);
    for (std::size_t r = 0; r < spec.redundancy && out.train.size() < spec.n_train; ++r) {
      Example e{base, cls, cls, p};
      for (auto& v : e.x) v += spec.jitter * rng.normal();
      out.train.examples.push_back(std::move(e));
    }
  }
  for (auto& e : out.train.examples) {
    if (rng.uniform01() < spec.noise)
      e.label = (e.true_label + 1 + rng.uniform_index(c - 1)) % c;
  }
  out.val.examples.reserve(spec.n_val);
  for (std::size_t i = 0; i < spec.n_val; ++i) {
    const std::size_t cls = i % c;
    out.val.examples.push_back({draw_point(cls, spec.cluster_spread), cls, cls, i});
  }
  return out;
}

struct ToyModel {
  Matrix weight;  // D x H
  std::vector<double> bias;

  ToyModel() = default;
  ToyModel(std::size_t d, std::size_t h) : weight(d, h), bias(d, 0.0) {}

  std::size_t classes() const noexcept { return weight.rows(); }
  std::size_t hidden() const noexcept { return weight.cols(); }
};

struct ForwardBackward {
  double loss = 0.0;
  std::vector<double> output_grad;  // softmax - onehot
  std::vector<double> hidden;
};

inline std::vector<double> logits(const ToyModel& m, std::span<const double> x) {
  std::vector<double> z(m.classes());
  for (std::size_t i = 0; i < z.size(); ++i) {
    auto row = m.weight.row(i);
    double acc = m.bias[i];
    for (std::size_t j = 0; j < row.size(); ++j) acc += row[j] * x[j];
    z[i] = acc;
  }
  return z;
}

/// Cross-entropy of softmax(z) against `label`, and dloss/dz.
inline ForwardBackward softmax_cross_entropy(std::span<const double> z, std::size_t label) {
  if (label >= z.size()) throw SchemaError("label out of range");
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - mx);
  const double log_norm = mx + std::log(sum);
  ForwardBackward out;
  out.loss = log_norm - z[label];
  out.output_grad.resize(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out.output_grad[i] = std::exp(z[i] - log_norm);
  out.output_grad[label] -= 1.0;
  return out;
}

inline ForwardBackward forward_backward(const ToyModel& m, const Example& e) {
  if (e.x.size() != m.hidden()) throw SchemaError("example dimension does not match model");
  auto fb = softmax_cross_entropy(logits(m, e.x), e.label);
  fb.hidden = e.x;
  return fb;
}

inline double mean_loss(const ToyModel& m, const Dataset& d) {
  double acc = 0.0;
  for (const auto& e : d.examples) acc += softmax_cross_entropy(logits(m, e.x), e.label).loss;
  return acc / static_cast<double>(d.size());
}

struct TrainHyperparams {
  std::size_t epochs = 5;
  double learning_rate = 0.5;
  std::size_t batch_size = 64;
};

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double mean_train_loss = 0.0;  // over the whole (unpruned) batch
  std::size_t kept = 0;
  double kept_weight = 0.0;
  std::optional<double> val_loss;  // set on the last step of each epoch
};

struct TrainRun {
  SelectionPolicy policy;
  std::uint64_t seed = 0;
  TrainHyperparams hyper;
  std::vector<StepRecord> records;
  bool diverged = false;
  std::string diagnostic;

  std::optional<double> final_val_loss() const {
    for (auto it = records.rbegin(); it != records.rend(); ++it)
      if (it->val_loss) return it->val_loss;
    return std::nullopt;
  }
};

/// Steps per epoch; the trailing partial batch is dropped so every step sees
/// exactly `batch_size` samples.
inline std::size_t steps_per_epoch(std::size_t n_train, std::size_t batch_size) {
  return n_train / batch_size;
}

/// Per-step cost model for the toy classifier: one token in, one token out,
/// 2*D*(H+1) forward FLOPs per token and twice that backward.
inline FlopsModel toy_flops_model(std::size_t classes, std::size_t hidden, std::size_t batch_size,
                                  double keep_fraction) {
  const double ff = 2.0 * static_cast<double>(classes) * static_cast<double>(hidden + 1);
  return FlopsModel::with_default_backward(batch_size, 1, 1, ff, 1.0 - keep_fraction);
}

/// Shuffling and policy decisions use independent child streams of `seed`, so
/// policies that keep everything produce identical trajectories.
inline TrainRun run_training(const DatasetPair& data, const SelectionPolicy& policy,
                             const TrainHyperparams& hyper, std::uint64_t seed) {
  if (hyper.batch_size == 0) throw ConfigError("batch size must be positive");
  if (hyper.batch_size > data.train.size())
    throw ConfigError("batch size exceeds the training set");
  if (!(hyper.learning_rate >= 0.0) || !std::isfinite(hyper.learning_rate))
    throw ConfigError("learning rate must be finite and non-negative");
  if (data.train.hidden_dim != data.val.hidden_dim || data.train.n_classes != data.val.n_classes)
    throw SchemaError("train and validation sets disagree on dimensions");

  const std::size_t d = data.train.n_classes;
  const std::size_t h = data.train.hidden_dim;
  TrainRun run{policy, seed, hyper, {}, false, {}};
  ToyModel model(d, h);
  Rng root(seed);
  Rng shuffle_rng = root.fork(1);
  Rng policy_rng = root.fork(2);
  Selector selector(policy, SecondMomentState(d, h, policy.config.beta2, policy.config.epsilon));

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t per_epoch = steps_per_epoch(data.train.size(), hyper.batch_size);
  const std::size_t b = hyper.batch_size;
  std::size_t step = 0;

  std::vector<RawSample> raw(b);
  std::vector<ForwardBackward> fbs(b);
  Matrix grad_w(d, h);
  std::vector<double> grad_b(d);

  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);

    for (std::size_t s = 0; s < per_epoch; ++s, ++step) {
      StepRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      double loss_sum = 0.0;
      for (std::size_t i = 0; i < b; ++i) {
        const auto idx = order[s * b + i];
        fbs[i] = forward_backward(model, data.train.examples[idx]);
        loss_sum += fbs[i].loss;
        raw[i].id = static_cast<SampleId>(idx);
        raw[i].loss = fbs[i].loss;
      }
      rec.mean_train_loss = loss_sum / static_cast<double>(b);
      if (!std::isfinite(rec.mean_train_loss)) {
        run.diverged = true;
        run.diagnostic = "non-finite training loss at step " + std::to_string(step);
        run.records.push_back(rec);
        return run;
      }

      Coreset kept;
      if (policy.kind == PolicyKind::kSlap) {
        for (std::size_t i = 0; i < b; ++i)
          raw[i].gradient = token_gradient({fbs[i].output_grad, fbs[i].hidden}, {d, h});
        kept = selector.select_raw(raw, policy_rng);
      } else {
        std::vector<SampleRecord> records(b);
        for (std::size_t i = 0; i < b; ++i) records[i] = {raw[i].id, raw[i].loss, {}};
        kept = selector.select(Batch(std::move(records)), policy_rng);
      }

      // Accumulate in batch order so the update does not depend on the order
      // a policy reports its selection in.
      std::vector<double> weight(b, 0.0);
      {
        std::unordered_map<SampleId, double> w;
        for (const auto& e : kept.selected) w.emplace(e.id, e.weight);
        for (std::size_t i = 0; i < b; ++i)
          if (auto it = w.find(raw[i].id); it != w.end()) weight[i] = it->second;
      }
      rec.kept = kept.size();
      rec.kept_weight = 0.0;
      for (std::size_t i = 0; i < b; ++i) rec.kept_weight += weight[i];

      if (rec.kept_weight > 0.0) {
        for (auto& v : grad_w.values()) v = 0.0;
        std::fill(grad_b.begin(), grad_b.end(), 0.0);
        for (std::size_t i = 0; i < b; ++i) {
          if (weight[i] == 0.0) continue;
          const auto& fb = fbs[i];
          for (std::size_t r = 0; r < d; ++r) {
            const double gr = weight[i] * fb.output_grad[r];
            auto row = grad_w.row(r);
            for (std::size_t j = 0; j < h; ++j) row[j] += gr * fb.hidden[j];
            grad_b[r] += gr;
          }
        }
        const double scale = hyper.learning_rate / rec.kept_weight;
        auto wv = model.weight.values();
        auto gv = grad_w.values();
        for (std::size_t i = 0; i < wv.size(); ++i) wv[i] -= scale * gv[i];
        for (std::size_t r = 0; r < d; ++r) model.bias[r] -= scale * grad_b[r];
      }

      if (s + 1 == per_epoch) {
        rec.val_loss = mean_loss(model, data.val);
        if (!std::isfinite(*rec.val_loss)) {
          run.diverged = true;
          run.diagnostic = "non-finite validation loss at step " + std::to_string(step);
          run.records.push_back(rec);
          return run;
        }
      }
      run.records.push_back(rec);
    }
  }
  return run;
}

struct CompareRequest {
  SyntheticDatasetSpec dataset;
  std::vector<SelectionPolicy> policies;  // keep_fraction overridden per rate
  std::vector<double> keep_rates;
  std::vector<std::uint64_t> seeds;
  TrainHyperparams hyper;
  std::size_t threads = 1;
};

struct ReportRow {
  PolicyKind policy = PolicyKind::kSlap;
  double keep_fraction = 1.0;
  std::size_t runs = 0;
  std::size_t diverged = 0;
  double mean_val_loss = 0.0;
  double stdev_val_loss = 0.0;
  double total_flops = 0.0;       // summed over the cell's runs
  double full_batch_flops = 0.0;  // the same runs without pruning
};

struct RunResult {
  PolicyKind policy;
  double keep_fraction;
  std::uint64_t seed;
  TrainRun run;
  double flops = 0.0;
};

struct Report {
  std::vector<ReportRow> rows;     // policy-major, then keep rate
  std::vector<RunResult> runs;     // policy-major, then keep rate, then seed
};

/// Dataset for one seed: the dataset settings with their seed offset by the run seed.
inline DatasetPair dataset_for_seed(SyntheticDatasetSpec spec, std::uint64_t seed) {
  spec.seed += seed;
  return generate_dataset(spec);
}

inline double run_flops(const DatasetPair& data, const TrainHyperparams& hyper, double keep,
                        std::size_t steps) {
  const auto m =
      toy_flops_model(data.train.n_classes, data.train.hidden_dim, hyper.batch_size, keep);
  return static_cast<double>(steps) * slap_flops(m);
}

/// Runs the policy x keep-rate x seed grid. Runs execute on up to `threads`
/// workers; results are merged by grid position so the report is independent
/// of scheduling.
inline Report compare_policies(const CompareRequest& req) {
  req.dataset.validate();
  if (req.policies.empty() || req.keep_rates.empty() || req.seeds.empty())
    throw ConfigError("policies, keep rates and seeds must all be non-empty");
  for (double k : req.keep_rates)
    if (!(k > 0.0 && k <= 1.0)) throw ConfigError("keep rates must lie in (0, 1]");

  std::vector<DatasetPair> datasets;
  datasets.reserve(req.seeds.size());
  for (auto s : req.seeds) datasets.push_back(dataset_for_seed(req.dataset, s));

  struct Job {
    std::size_t p, k, s;
  };
  std::vector<Job> jobs;
  for (std::size_t p = 0; p < req.policies.size(); ++p)
    for (std::size_t k = 0; k < req.keep_rates.size(); ++k)
      for (std::size_t s = 0; s < req.seeds.size(); ++s) jobs.push_back({p, k, s});

  std::vector<std::optional<RunResult>> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j; (j = next.fetch_add(1)) < jobs.size();) {
      try {
        const auto& job = jobs[j];
        SelectionPolicy pol = req.policies[job.p];
        pol.config.keep_fraction = req.keep_rates[job.k];
        auto run = run_training(datasets[job.s], pol, req.hyper, req.seeds[job.s]);
        const double flops =
            run_flops(datasets[job.s], req.hyper, pol.config.keep_fraction, run.records.size());
        results[j] = RunResult{pol.kind, pol.config.keep_fraction, req.seeds[job.s],
                               std::move(run), flops};
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };
  const std::size_t nthreads = std::max<std::size_t>(1, std::min(req.threads, jobs.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < nthreads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  Report report;
  for (auto& r : results) report.runs.push_back(std::move(*r));
  const std::size_t ns = req.seeds.size();
  for (std::size_t cell = 0; cell * ns < report.runs.size(); ++cell) {
    ReportRow row;
    row.policy = report.runs[cell * ns].policy;
    row.keep_fraction = report.runs[cell * ns].keep_fraction;
    std::vector<double> finals;
    for (std::size_t s = 0; s < ns; ++s) {
      const auto& rr = report.runs[cell * ns + s];
      ++row.runs;
      row.total_flops += rr.flops;
      row.full_batch_flops +=
          static_cast<double>(rr.run.records.size()) *
          full_batch_flops(toy_flops_model(datasets[s].train.n_classes,
                                           datasets[s].train.hidden_dim, req.hyper.batch_size,
                                           rr.keep_fraction));
      if (rr.run.diverged) ++row.diverged;
      if (auto f = rr.run.final_val_loss(); f && !rr.run.diverged) finals.push_back(*f);
    }
    if (!finals.empty()) {
      double m = 0.0;
      for (double f : finals) m += f;
      m /= static_cast<double>(finals.size());
      double var = 0.0;
      for (double f : finals) var += (f - m) * (f - m);
      row.mean_val_loss = m;
      row.stdev_val_loss =
          finals.size() > 1 ? std::sqrt(var / static_cast<double>(finals.size() - 1)) : 0.0;
    } else {
      row.mean_val_loss = std::numeric_limits<double>::quiet_NaN();
    }
    report.rows.push_back(row);
  }
  return report;
}

}  // namespace slap::sim
