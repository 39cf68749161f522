#pragma once

// The integrated multi-task model: backbone + per-task decoders +
// per-task re-encoders + integrator, with the iterative feedback chain.

#include <string>
#include <vector>

#include "ifan/heads.hpp"

namespace ifan {

struct ModelConfig {
    BackboneConfig backbone;
    std::vector<TaskSpec> tasks;
    int feedback_channels_per_task = 4;
    int reencoder_width = 8;
    int heatmap_radius = 5;
    bool resize_reencoder = false; // ablation: raw prediction maps, resized
    bool shared_bn = false;        // ablation: one BN bank for all tasks
    bool unrolled_feedback = false; // backprop through the whole chain instead of truncating
    bool integrate_sum = false;     // study flag: summation instead of concatenation
    bool flatten_decoders = false;  // coords/class heads read the flattened tap
    bool freeze_other_reencoders = false; // study flag: fine-tune updates only task t's re-encoder
    uint64_t seed = 1;
};

template <class S>
struct LabelsT {
    Modality modality = Modality::Coords;
    TensorT<S> coords;        // [N, 2K]
    std::vector<int> indices; // mask: N*R*R row-major; class: N
};

template <class S>
TensorT<S> task_loss(const TaskSpec& spec, const PredictionT<S>& pred, const LabelsT<S>& labels) {
    if (labels.modality != spec.modality) throw std::invalid_argument("task_loss: label modality mismatch");
    switch (spec.loss) {
        case LossKind::Euclidean: return euclidean_loss(pred.payload, labels.coords);
        case LossKind::PixelCrossEntropy:
        case LossKind::CrossEntropy: return cross_entropy_loss(pred.payload, labels.indices, 1);
    }
    throw std::logic_error("task_loss: unreachable");
}

inline int raw_prediction_channels(const TaskSpec& spec) {
    return spec.modality == Modality::Coords ? spec.out_count : spec.out_count;
}

template <class S>
struct IfanModelT {
    ModelConfig cfg;
    ParamStoreT<S> store;
    BackboneT<S> backbone;
    std::vector<DecoderT<S>> decoders;
    std::vector<ReencoderT<S>> reencoders; // present only for multi-task models
    std::vector<int> fb_channels;          // per task

    bool interactive() const { return cfg.tasks.size() > 1; }
    int task_count() const { return static_cast<int>(cfg.tasks.size()); }

    const TaskSpec& task(TaskId t) const {
        if (t < 0 || t >= task_count()) throw std::invalid_argument("unknown task id " + std::to_string(t));
        return cfg.tasks[static_cast<size_t>(t)];
    }

    static IfanModelT make(ModelConfig cfg) {
        IfanModelT m;
        if (cfg.tasks.empty()) throw std::invalid_argument("model: no tasks configured");
        for (size_t i = 0; i < cfg.tasks.size(); ++i) {
            if (cfg.tasks[i].id != static_cast<int>(i))
                throw std::invalid_argument("model: task ids must be consecutive from 0");
            if (cfg.tasks[i].out_count <= 0) throw std::invalid_argument("model: bad task output count");
        }

        const bool multi = cfg.tasks.size() > 1;
        int fb_total = 0;
        std::vector<int> fb;
        for (const auto& t : cfg.tasks) {
            const int ch = cfg.resize_reencoder ? raw_prediction_channels(t) : cfg.feedback_channels_per_task;
            fb.push_back(ch);
            fb_total += ch;
        }
        if (cfg.integrate_sum && multi) {
            for (int ch : fb)
                if (ch != fb[0]) throw std::invalid_argument("model: summation integration needs equal channel budgets");
            fb_total = fb[0];
        }
        cfg.backbone.feedback_total = multi ? fb_total : 0;
        cfg.backbone.bn_banks = cfg.shared_bn ? 1 : static_cast<int>(cfg.tasks.size());

        m.cfg = cfg;
        m.fb_channels = fb;
        m.backbone = BackboneT<S>::make(m.store, cfg.backbone, cfg.seed);
        const auto plan = compute_channel_plan(cfg.backbone);
        for (const auto& t : cfg.tasks) {
            if (!plan.tap_channels.count(t.tap_level))
                throw std::invalid_argument("model: task " + t.name + " taps level " + std::to_string(t.tap_level) +
                                            " which the backbone does not expose");
            m.decoders.push_back(DecoderT<S>::make(m.store, t, plan.tap_channels.at(t.tap_level),
                                                   cfg.flatten_decoders, cfg.seed));
        }
        if (multi && !cfg.resize_reencoder) {
            for (const auto& t : cfg.tasks)
                m.reencoders.push_back(ReencoderT<S>::make(m.store, t, cfg.backbone.tap_levels, cfg.backbone.input_size,
                                                           cfg.reencoder_width, fb[static_cast<size_t>(t.id)],
                                                           cfg.heatmap_radius, cfg.seed));
        } else if (multi) {
            for (const auto& t : cfg.tasks) {
                ReencoderT<S> r;
                r.spec = t;
                r.input_res = cfg.backbone.input_size;
                r.out_channels = fb[static_cast<size_t>(t.id)];
                r.heatmap_radius = cfg.heatmap_radius;
                r.levels = cfg.backbone.tap_levels;
                std::sort(r.levels.begin(), r.levels.end(), std::greater<int>());
                m.reencoders.push_back(std::move(r));
            }
        }
        return m;
    }

    PyramidT<S> encode_feedback(GraphT<S>* g, const std::vector<PredictionT<S>>& prev) const {
        std::vector<PyramidT<S>> encoded;
        for (TaskId t = 0; t < task_count(); ++t) {
            const auto& re = reencoders[static_cast<size_t>(t)];
            encoded.push_back(cfg.resize_reencoder ? re.reencode_resize(prev[static_cast<size_t>(t)])
                                                   : re.reencode(g, prev[static_cast<size_t>(t)]));
        }
        return integrate(encoded, cfg.integrate_sum);
    }

    // One interaction iteration. prev == nullptr means the zero-feedback
    // base case; otherwise prev holds every task's previous prediction.
    std::vector<PredictionT<S>> forward_iteration(GraphT<S>* g, const TensorT<S>& image, TaskId data_task,
                                                  const std::vector<PredictionT<S>>* prev, Mode mode) const {
        task(data_task); // validates
        const TaskId bank = cfg.shared_bn ? 0 : data_task;
        PyramidT<S> fb;
        if (interactive()) {
            if (prev) {
                if (static_cast<int>(prev->size()) != task_count())
                    throw std::invalid_argument("forward_iteration: previous predictions incomplete");
                fb = encode_feedback(g, *prev);
            } else {
                fb = zero_feedback<S>(cfg.backbone, image.dim(0));
            }
        } else if (prev) {
            throw std::runtime_error("forward_iteration: single-task model has no re-encoders");
        }
        auto pyr = backbone.forward(g, image, bank, fb, mode);
        std::vector<PredictionT<S>> preds;
        for (const auto& dec : decoders) preds.push_back(dec.decode(g, pyr));
        return preds;
    }

    // Runs the chain for iterations 0..iters and returns the predictions of
    // every iteration. Truncated mode (default) detaches between
    // iterations and records only the last one on `g`; unrolled mode keeps
    // the whole chain on one tape.
    std::vector<std::vector<PredictionT<S>>> ifan_forward(GraphT<S>* g, const TensorT<S>& image, int iters,
                                                          TaskId data_task, Mode mode) const {
        if (iters < 0) throw std::invalid_argument("ifan_forward: negative iteration count");
        if (iters > 0 && !interactive())
            throw std::runtime_error("ifan_forward: interaction requested but no re-encoders present");
        std::vector<std::vector<PredictionT<S>>> all;
        for (int i = 0; i <= iters; ++i) {
            GraphT<S>* gi = cfg.unrolled_feedback ? g : (i == iters ? g : nullptr);
            // feedback-producing passes must not move the running statistics
            const Mode mi = (mode == Mode::Train && i < iters) ? Mode::TrainFrozen : mode;
            const std::vector<PredictionT<S>>* prev = all.empty() ? nullptr : &all.back();
            std::vector<PredictionT<S>> prev_detached;
            if (prev && !cfg.unrolled_feedback) {
                for (const auto& p : *prev) prev_detached.push_back({p.task, p.payload.detached()});
                prev = &prev_detached;
            }
            all.push_back(forward_iteration(gi, image, data_task, prev, mi));
        }
        return all;
    }

    // Loss of task t's head at interaction iteration `iter`, recorded on g.
    TensorT<S> batch_loss(GraphT<S>& g, TaskId t, const TensorT<S>& images, const LabelsT<S>& labels, int iter,
                          Mode mode) const {
        auto chain = ifan_forward(&g, images, iter, t, mode);
        return task_loss(task(t), chain.back()[static_cast<size_t>(t)], labels);
    }

    // Parameter name prefixes updated by one optimizer step of the given
    // stage (pretraining updates the shared trunk and the task's decoder;
    // fine-tuning additionally updates every re-encoder).
    std::vector<std::string> scope_prefixes(bool pretrain_stage, TaskId t) const {
        std::vector<std::string> p{"backbone.", "decoder." + task(t).name + "."};
        if (!pretrain_stage && interactive() && !cfg.resize_reencoder)
            p.push_back(cfg.freeze_other_reencoders ? "reencoder." + task(t).name + "." : "reencoder.");
        return p;
    }
};

using IfanModel = IfanModelT<float>;

} // namespace ifan
