#pragma once

// Cross-dataset hybrid training: task-wise pre-training over each dataset
// in turn, then batch-wise alternating fine-tuning with interaction
// iterations. RMSprop with a geometric learning-rate decay over the
// fine-tuning horizon.

#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ifan/data.hpp"
#include "ifan/metrics.hpp"
#include "ifan/model.hpp"

namespace ifan {

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

struct RmsPropConfig {
    float rho = 0.9f;
    float eps = 1e-8f;
};

class RmsProp {
public:
    RmsProp() = default;
    explicit RmsProp(RmsPropConfig cfg) : cfg_(cfg) {}

    // acc <- rho acc + (1-rho) g^2;  p <- p - lr g / (sqrt(acc) + eps)
    void step(const std::vector<std::pair<Parameter*, const std::vector<float>*>>& grads, float lr) {
        for (auto& [param, grad] : grads) {
            if (!grad) throw std::invalid_argument("rmsprop: missing gradient for " + param->name);
            if (static_cast<int64_t>(grad->size()) != param->value.numel())
                throw std::invalid_argument("rmsprop: gradient extent mismatch for " + param->name);
            auto& acc = acc_[param->name];
            if (acc.empty()) acc.assign(grad->size(), 0.f);
            float* p = param->value.data();
            for (size_t i = 0; i < grad->size(); ++i) {
                const float g = (*grad)[i];
                acc[i] = cfg_.rho * acc[i] + (1.f - cfg_.rho) * g * g;
                p[i] -= lr * g / (std::sqrt(acc[i]) + cfg_.eps);
            }
        }
    }

    const RmsPropConfig& config() const { return cfg_; }
    std::map<std::string, std::vector<float>>& accumulators() { return acc_; }
    const std::map<std::string, std::vector<float>>& accumulators() const { return acc_; }

private:
    RmsPropConfig cfg_;
    std::map<std::string, std::vector<float>> acc_;
};

// ---------------------------------------------------------------------------
// schedule
// ---------------------------------------------------------------------------

struct LrSchedule {
    double lr_start = 1e-3;
    double lr_end = 1e-6;
    int64_t total_steps = 1;
};

// geometric (log-linear) interpolation from lr_start at step 0 to lr_end
// at the final step
inline double lr_at(int64_t step, const LrSchedule& s) {
    if (step < 0 || step >= s.total_steps) throw std::invalid_argument("lr_at: step outside the horizon");
    if (s.total_steps == 1) return s.lr_start;
    const double f = static_cast<double>(step) / static_cast<double>(s.total_steps - 1);
    return s.lr_start * std::pow(s.lr_end / s.lr_start, f);
}

// ---------------------------------------------------------------------------
// plan / log
// ---------------------------------------------------------------------------

struct TrainPlan {
    std::vector<int> batch_size; // n_b per task
    int pretrain_epochs = 2;     // E_P
    int finetune_epochs = 4;
    int iters = 1;               // ITER
    double pretrain_lr = 1e-3;
    double finetune_lr_start = 1e-3;
    double finetune_lr_end = 1e-6;
    uint64_t seed = 1;
};

struct StepRecord {
    int64_t step;
    std::string stage; // pretrain<t> | finetune
    int task;
    int iter;
    float loss;
};

struct ValRecord {
    int epoch; // global epoch index across stages
    std::string stage;
    int task;
    std::string metric;
    double value;
};

struct TrainLog {
    std::vector<StepRecord> steps;
    std::vector<ValRecord> vals;
};

// ---------------------------------------------------------------------------
// deterministic samplers (public so replay oracles can re-derive them)
// ---------------------------------------------------------------------------

inline std::vector<std::vector<int>> pretrain_batches(uint64_t seed, int task, int epoch, int n, int nb) {
    std::vector<int> perm(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
    Rng rng(seed_mix({seed, 0x9e37u, static_cast<uint64_t>(task), static_cast<uint64_t>(epoch)}));
    for (int i = n - 1; i > 0; --i)
        std::swap(perm[static_cast<size_t>(i)], perm[rng.uniform_int(static_cast<uint64_t>(i + 1))]);
    std::vector<std::vector<int>> batches;
    for (int b = 0; b + nb <= n; b += nb)
        batches.emplace_back(perm.begin() + b, perm.begin() + b + nb);
    return batches;
}

inline std::vector<int> finetune_batch(uint64_t seed, int epoch, int round, int task, int n, int nb) {
    Rng rng(seed_mix({seed, 0x517cu, static_cast<uint64_t>(epoch), static_cast<uint64_t>(round),
                      static_cast<uint64_t>(task)}));
    std::vector<int> idx(static_cast<size_t>(nb));
    for (auto& i : idx) i = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(n)));
    return idx;
}

// ---------------------------------------------------------------------------
// batches
// ---------------------------------------------------------------------------

struct Batch {
    Tensor images; // [nb, ch, R, R]
    LabelsT<float> labels;
};

inline Batch make_batch(const Dataset& ds, const std::vector<int>& indices) {
    if (ds.samples.empty()) throw std::invalid_argument("make_batch: empty dataset");
    const auto& first = ds.samples[0].image;
    const int ch = first.dim(0), r = first.dim(1);
    Batch b;
    b.images = Tensor(Shape{static_cast<int>(indices.size()), ch, r, r});
    b.labels.modality = ds.modality;
    std::vector<float> coords;
    for (size_t i = 0; i < indices.size(); ++i) {
        const auto& s = ds.samples[static_cast<size_t>(indices[i])];
        std::copy(s.image.data(), s.image.data() + s.image.numel(),
                  b.images.data() + static_cast<int64_t>(i) * s.image.numel());
        switch (ds.modality) {
            case Modality::Coords: coords.insert(coords.end(), s.coords.begin(), s.coords.end()); break;
            case Modality::Mask: b.labels.indices.insert(b.labels.indices.end(), s.mask.begin(), s.mask.end()); break;
            case Modality::Class: b.labels.indices.push_back(s.cls); break;
        }
    }
    if (ds.modality == Modality::Coords) {
        const int k2 = static_cast<int>(coords.size() / indices.size());
        b.labels.coords = Tensor(Shape{static_cast<int>(indices.size()), k2}, std::move(coords));
    }
    return b;
}

// ---------------------------------------------------------------------------
// trainer
// ---------------------------------------------------------------------------

inline void check_disjoint(const std::vector<Dataset>& datasets) {
    std::set<int64_t> ids;
    size_t total = 0;
    for (const auto& ds : datasets) {
        if (ds.samples.empty()) throw std::invalid_argument("training: empty dataset");
        for (const auto& s : ds.samples) ids.insert(s.id);
        total += ds.samples.size();
    }
    if (ids.size() != total) throw std::invalid_argument("training: datasets share sample ids");
}

template <class M>
std::vector<std::pair<Parameter*, const std::vector<float>*>> scoped_grads(M& model, const Graph& g,
                                                                           bool pretrain_stage, TaskId task) {
    std::vector<std::pair<Parameter*, const std::vector<float>*>> out;
    for (const auto& prefix : model.scope_prefixes(pretrain_stage, task))
        for (auto* p : model.store.with_prefix(prefix))
            if (p->trainable)
                if (const auto* gr = g.grad(*p)) out.emplace_back(p, gr);
    return out;
}

struct TrainState {
    int64_t step = 0;     // optimizer updates so far (all stages)
    int64_t ft_step = 0;  // fine-tune updates so far (drives the lr decay)
    int epoch = 0;        // global epoch counter across stages
};

using ValidateFn = std::function<void(TrainLog&, const std::string& stage, int epoch)>;

inline int finetune_rounds_per_epoch(const std::vector<Dataset>& datasets, const TrainPlan& plan) {
    int rounds = 0;
    for (size_t t = 0; t < datasets.size(); ++t) {
        const int n = static_cast<int>(datasets[t].samples.size());
        const int nb = plan.batch_size[t];
        rounds = std::max(rounds, (n + nb - 1) / nb);
    }
    return rounds;
}

inline LrSchedule finetune_schedule(const std::vector<Dataset>& datasets, const TrainPlan& plan) {
    const int64_t per_visit = std::max(1, plan.iters);
    LrSchedule s;
    s.lr_start = plan.finetune_lr_start;
    s.lr_end = plan.finetune_lr_end;
    s.total_steps = std::max<int64_t>(1, static_cast<int64_t>(finetune_rounds_per_epoch(datasets, plan)) *
                                             static_cast<int64_t>(datasets.size()) * per_visit *
                                             plan.finetune_epochs);
    return s;
}

inline void validate_plan(const TrainPlan& plan, size_t task_count) {
    if (plan.batch_size.size() != task_count) throw std::invalid_argument("plan: one batch size per task required");
    for (int nb : plan.batch_size)
        if (nb < 2) throw std::invalid_argument("plan: batch sizes must be at least 2");
    if (plan.pretrain_epochs < 0 || plan.iters < 0 || plan.finetune_epochs < 0)
        throw std::invalid_argument("plan: negative counts");
}

// Task-wise pre-training (one task after another, updating the shared
// trunk and that task's decoder only).
template <class M>
void pretrain(M& model, const std::vector<Dataset>& datasets, const TrainPlan& plan, RmsProp& opt,
              TrainLog& log, TrainState& st, const ValidateFn& validate, int skip_epochs = 0) {
    validate_plan(plan, datasets.size());
    check_disjoint(datasets);
    int linear = 0;
    for (int t = 0; t < static_cast<int>(datasets.size()); ++t) {
        const std::string stage = "pretrain" + std::to_string(t);
        for (int e = 0; e < plan.pretrain_epochs; ++e, ++linear) {
            if (linear < skip_epochs) continue;
            const auto batches = pretrain_batches(plan.seed, t, e, static_cast<int>(datasets[t].samples.size()),
                                                  plan.batch_size[static_cast<size_t>(t)]);
            for (const auto& idx : batches) {
                auto batch = make_batch(datasets[static_cast<size_t>(t)], idx);
                Graph g;
                auto loss = model.batch_loss(g, t, batch.images, batch.labels, 0, Mode::Train);
                g.backward(loss);
                opt.step(scoped_grads(model, g, true, t), static_cast<float>(plan.pretrain_lr));
                log.steps.push_back({st.step++, stage, t, 0, loss.item()});
            }
            if (validate) validate(log, stage, st.epoch);
            st.epoch += 1;
        }
    }
}

// One fine-tuning epoch: `rounds` passes of the fixed task order, each
// visit drawing a fresh balanced batch and stepping once per interaction
// iteration.
template <class M>
void finetune_epoch(M& model, const std::vector<Dataset>& datasets, const TrainPlan& plan, RmsProp& opt,
                    const LrSchedule& schedule, TrainLog& log, TrainState& st, int epoch_index) {
    const int rounds = finetune_rounds_per_epoch(datasets, plan);
    for (int round = 0; round < rounds; ++round) {
        for (int t = 0; t < static_cast<int>(datasets.size()); ++t) {
            const auto idx = finetune_batch(plan.seed, epoch_index, round, t,
                                            static_cast<int>(datasets[static_cast<size_t>(t)].samples.size()),
                                            plan.batch_size[static_cast<size_t>(t)]);
            auto batch = make_batch(datasets[static_cast<size_t>(t)], idx);
            const int iter_hi = std::max(1, plan.iters);
            for (int iter = (plan.iters == 0 ? 0 : 1); iter <= (plan.iters == 0 ? 0 : iter_hi); ++iter) {
                Graph g;
                auto loss = model.batch_loss(g, t, batch.images, batch.labels, iter, Mode::Train);
                g.backward(loss);
                const float lr = static_cast<float>(lr_at(st.ft_step, schedule));
                opt.step(scoped_grads(model, g, false, t), lr);
                st.ft_step += 1;
                log.steps.push_back({st.step++, "finetune", t, iter, loss.item()});
                if (plan.iters == 0) break;
            }
        }
    }
}

// Re-estimate BN running statistics under the current weights: the
// alternating schedule leaves each bank's EMA lagging many optimizer
// steps behind, which compounds through the BN stack at evaluation time.
// Forward-only chain passes over a fixed slice of each task's training
// data bring every bank up to date (per-pass updates, so the statistics
// settle on the mixture of chain-iteration distributions).
template <class S>
void refresh_bn_stats(IfanModelT<S>& model, const std::vector<Dataset>& train_sets, const TrainPlan& plan,
                      int batches_per_task = 30) {
    for (TaskId t = 0; t < model.task_count(); ++t) {
        const auto& ds = train_sets[static_cast<size_t>(t)];
        const int nb = plan.batch_size[static_cast<size_t>(t)];
        const int avail = static_cast<int>(ds.samples.size()) / nb;
        const int count = std::min(batches_per_task, avail);
        const int iters = model.interactive() ? plan.iters : 0;
        for (int b = 0; b < count; ++b) {
            const auto idx = finetune_batch(seed_mix({plan.seed, 0xbe57a7e5ull}), 0, b, t,
                                            static_cast<int>(ds.samples.size()), nb);
            auto batch = make_batch(ds, idx);
            TensorT<S> images(batch.images.shape());
            for (int64_t i = 0; i < images.numel(); ++i) images.data()[i] = static_cast<S>(batch.images.data()[i]);
            std::vector<PredictionT<S>> prev;
            for (int i = 0; i <= iters; ++i)
                prev = model.forward_iteration(nullptr, images, t, i ? &prev : nullptr, Mode::Train);
        }
    }
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

struct TaskMetrics {
    MetricKind kind = MetricKind::Nme;
    double primary = 0.0; // mean NME % | overall F % | accuracy %
    NmeReport nme_report;
    std::vector<double> failure_per_landmark;
    double failure_mean = 0.0;
    FscoreReport fscore_report;
    AccuracyReport accuracy_report;
};

inline bool metric_higher_better(MetricKind k) { return k != MetricKind::Nme; }

// Evaluates one task's test set at every interaction iteration 0..iters
// (one chained forward per batch, eval mode).
template <class S>
std::vector<TaskMetrics> evaluate_task(const IfanModelT<S>& model, const Dataset& ds, TaskId task, int iters,
                                       int batch_size = 50) {
    const auto& spec = model.task(task);
    const int n = static_cast<int>(ds.samples.size());
    // predictions per iteration
    std::vector<std::vector<std::vector<double>>> coords(static_cast<size_t>(iters) + 1);
    std::vector<std::vector<std::vector<int>>> masks(static_cast<size_t>(iters) + 1);
    std::vector<std::vector<int>> classes(static_cast<size_t>(iters) + 1);

    for (int b0 = 0; b0 < n; b0 += batch_size) {
        const int nb = std::min(batch_size, n - b0);
        std::vector<int> idx(static_cast<size_t>(nb));
        for (int i = 0; i < nb; ++i) idx[static_cast<size_t>(i)] = b0 + i;
        auto batch = make_batch(ds, idx);
        TensorT<S> images(batch.images.shape());
        for (int64_t i = 0; i < images.numel(); ++i) images.data()[i] = static_cast<S>(batch.images.data()[i]);
        auto chain = model.ifan_forward(nullptr, images, iters, task, Mode::Eval);
        for (int it = 0; it <= iters; ++it) {
            const auto& payload = chain[static_cast<size_t>(it)][static_cast<size_t>(task)].payload;
            if (spec.modality == Modality::Coords) {
                const int k2 = payload.dim(1);
                for (int i = 0; i < nb; ++i) {
                    std::vector<double> row(static_cast<size_t>(k2));
                    for (int j = 0; j < k2; ++j) row[static_cast<size_t>(j)] = payload.data()[i * k2 + j];
                    coords[static_cast<size_t>(it)].push_back(std::move(row));
                }
            } else if (spec.modality == Modality::Mask) {
                const int cls = payload.dim(1), r2 = payload.dim(2) * payload.dim(3);
                for (int i = 0; i < nb; ++i) {
                    std::vector<int> m(static_cast<size_t>(r2));
                    for (int p = 0; p < r2; ++p) {
                        int best = 0;
                        S bv = payload.data()[(static_cast<int64_t>(i) * cls) * r2 + p];
                        for (int c = 1; c < cls; ++c) {
                            const S v = payload.data()[(static_cast<int64_t>(i) * cls + c) * r2 + p];
                            if (v > bv) {
                                bv = v;
                                best = c;
                            }
                        }
                        m[static_cast<size_t>(p)] = best;
                    }
                    masks[static_cast<size_t>(it)].push_back(std::move(m));
                }
            } else {
                const int cls = payload.dim(1);
                for (int i = 0; i < nb; ++i) {
                    int best = 0;
                    S bv = payload.data()[static_cast<int64_t>(i) * cls];
                    for (int c = 1; c < cls; ++c)
                        if (payload.data()[static_cast<int64_t>(i) * cls + c] > bv) {
                            bv = payload.data()[static_cast<int64_t>(i) * cls + c];
                            best = c;
                        }
                    classes[static_cast<size_t>(it)].push_back(best);
                }
            }
        }
    }

    // ground truth
    std::vector<std::vector<double>> gt_coords;
    std::vector<std::vector<int>> gt_masks;
    std::vector<int> gt_classes;
    for (const auto& s : ds.samples) {
        if (spec.modality == Modality::Coords)
            gt_coords.emplace_back(s.coords.begin(), s.coords.end());
        else if (spec.modality == Modality::Mask)
            gt_masks.push_back(s.mask);
        else
            gt_classes.push_back(s.cls);
    }

    std::vector<TaskMetrics> out;
    for (int it = 0; it <= iters; ++it) {
        TaskMetrics m;
        m.kind = spec.metric;
        if (spec.modality == Modality::Coords) {
            m.nme_report = nme(coords[static_cast<size_t>(it)], gt_coords);
            m.primary = m.nme_report.mean;
            const size_t k = m.nme_report.per_landmark.size();
            std::vector<double> sample_means;
            for (const auto& row : m.nme_report.per_sample_landmark) {
                double s = 0;
                for (double v : row) s += v;
                sample_means.push_back(s / static_cast<double>(k));
            }
            m.failure_mean = failure_rate(sample_means);
            for (size_t j = 0; j < k; ++j) {
                std::vector<double> col;
                for (const auto& row : m.nme_report.per_sample_landmark) col.push_back(row[j]);
                m.failure_per_landmark.push_back(failure_rate(col));
            }
        } else if (spec.modality == Modality::Mask) {
            m.fscore_report = fscore(masks[static_cast<size_t>(it)], gt_masks, spec.out_count,
                                     {{"mouth-all", {kMaskMouth}},
                                      {"overall", {kMaskSkin, kMaskEye, kMaskMouth}}});
            m.primary = m.fscore_report.composites.at("overall");
        } else {
            m.accuracy_report = accuracy(classes[static_cast<size_t>(it)], gt_classes, spec.out_count);
            m.primary = m.accuracy_report.accuracy;
        }
        out.push_back(std::move(m));
    }
    return out;
}

} // namespace ifan
