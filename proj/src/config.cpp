#include "ifan/config.hpp"

#include <set>
#include <sstream>

#include "ifan/io_util.hpp"
#include "json.hpp"

using nlohmann::json;

namespace ifan {

TaskSpec task_spec_for(const std::string& name, TaskId id, int image_size, int blocks_per_stage) {
    TaskSpec t;
    t.id = id;
    t.name = name;
    if (name == "landmark") {
        t.modality = Modality::Coords;
        t.out_count = kLandmarks;
        t.tap_level = image_size / 4;
        t.loss = LossKind::Euclidean;
        t.metric = MetricKind::Nme;
    } else if (name == "parsing") {
        t.modality = Modality::Mask;
        t.out_count = kMaskClasses;
        t.tap_level = image_size;
        t.loss = LossKind::PixelCrossEntropy;
        t.metric = MetricKind::Fscore;
    } else if (name == "emotion") {
        t.modality = Modality::Class;
        t.out_count = kEmotionClasses;
        t.tap_level = image_size >> blocks_per_stage;
        t.loss = LossKind::CrossEntropy;
        t.metric = MetricKind::Accuracy;
    } else {
        throw std::invalid_argument("config: unknown task \"" + name + "\"");
    }
    return t;
}

DistributionShift default_shift_for(const std::string& name) {
    if (name == "landmark") return {0.0, 0.03};
    if (name == "parsing") return {0.18, 0.06};
    if (name == "emotion") return {-0.15, 0.10};
    throw std::invalid_argument("config: unknown task \"" + name + "\"");
}

namespace {

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
    if (!j.is_object()) throw std::invalid_argument("config: " + where + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw std::invalid_argument("config: unknown key \"" + it.key() + "\" in " + where);
}

template <class T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

} // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config: parse error: ") + e.what());
    }
    check_keys(j, "top level", {"seed", "image_size", "tasks", "data", "model", "train", "ablation", "ablate"});

    RunConfig cfg;
    read(j, "seed", cfg.seed);
    read(j, "image_size", cfg.image_size);
    read(j, "tasks", cfg.tasks);
    if (cfg.tasks.empty()) throw std::invalid_argument("config: tasks must not be empty");
    {
        std::set<std::string> seen;
        for (const auto& t : cfg.tasks)
            if (!seen.insert(t).second) throw std::invalid_argument("config: duplicate task \"" + t + "\"");
    }

    // defaults aligned with the selected tasks
    for (const auto& name : cfg.tasks) cfg.shifts.push_back(default_shift_for(name));
    cfg.batch_size.assign(cfg.tasks.size(), 10);

    if (j.contains("data")) {
        const auto& d = j.at("data");
        check_keys(d, "data", {"train_per_task", "test_per_task", "shifts"});
        read(d, "train_per_task", cfg.train_per_task);
        read(d, "test_per_task", cfg.test_per_task);
        if (d.contains("shifts")) {
            const auto& sh = d.at("shifts");
            check_keys(sh, "data.shifts", {"landmark", "parsing", "emotion"});
            for (size_t t = 0; t < cfg.tasks.size(); ++t) {
                if (!sh.contains(cfg.tasks[t])) continue;
                const auto& s = sh.at(cfg.tasks[t]);
                check_keys(s, "data.shifts." + cfg.tasks[t], {"brightness", "noise"});
                read(s, "brightness", cfg.shifts[t].brightness);
                read(s, "noise", cfg.shifts[t].noise);
            }
        }
    }

    if (j.contains("model")) {
        const auto& m = j.at("model");
        check_keys(m, "model",
                   {"initial_channels", "initial_kernel", "blocks_per_stage", "layers_per_block", "growth",
                    "up_channels", "feedback_channels_per_task", "reencoder_width", "heatmap_radius",
                    "bn_momentum", "bn_eps", "flatten_decoders", "integrate_sum", "unrolled_feedback",
                    "freeze_other_reencoders"});
        read(m, "initial_channels", cfg.initial_channels);
        read(m, "initial_kernel", cfg.initial_kernel);
        read(m, "blocks_per_stage", cfg.blocks_per_stage);
        read(m, "layers_per_block", cfg.layers_per_block);
        read(m, "growth", cfg.growth);
        read(m, "up_channels", cfg.up_channels);
        read(m, "feedback_channels_per_task", cfg.feedback_channels_per_task);
        read(m, "reencoder_width", cfg.reencoder_width);
        read(m, "heatmap_radius", cfg.heatmap_radius);
        read(m, "bn_momentum", cfg.bn_momentum);
        read(m, "bn_eps", cfg.bn_eps);
        read(m, "flatten_decoders", cfg.flatten_decoders);
        read(m, "integrate_sum", cfg.integrate_sum);
        read(m, "unrolled_feedback", cfg.unrolled_feedback);
        read(m, "freeze_other_reencoders", cfg.freeze_other_reencoders);
    }

    if (j.contains("train")) {
        const auto& t = j.at("train");
        check_keys(t, "train",
                   {"batch_size", "pretrain_epochs", "finetune_epochs", "iters", "val_iters", "pretrain_lr",
                    "finetune_lr_start", "finetune_lr_end"});
        if (t.contains("batch_size")) {
            cfg.batch_size = t.at("batch_size").get<std::vector<int>>();
            if (cfg.batch_size.size() == 1) cfg.batch_size.assign(cfg.tasks.size(), cfg.batch_size[0]);
            if (cfg.batch_size.size() != cfg.tasks.size())
                throw std::invalid_argument("config: train.batch_size must have one entry per task");
        }
        read(t, "pretrain_epochs", cfg.pretrain_epochs);
        read(t, "finetune_epochs", cfg.finetune_epochs);
        read(t, "iters", cfg.iters);
        read(t, "val_iters", cfg.val_iters);
        read(t, "pretrain_lr", cfg.pretrain_lr);
        read(t, "finetune_lr_start", cfg.finetune_lr_start);
        read(t, "finetune_lr_end", cfg.finetune_lr_end);
    }

    if (j.contains("ablation")) {
        const auto& a = j.at("ablation");
        check_keys(a, "ablation", {"no_reencoder", "shared_bn"});
        read(a, "no_reencoder", cfg.no_reencoder);
        read(a, "shared_bn", cfg.shared_bn);
    }

    if (j.contains("ablate")) {
        const auto& a = j.at("ablate");
        check_keys(a, "ablate", {"seeds", "eval_iters"});
        read(a, "seeds", cfg.ablate_seeds);
        read(a, "eval_iters", cfg.ablate_eval_iters);
    }

    cfg.model_config(); // validates architecture arithmetic early
    return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) { return from_json_text(read_file(path)); }

std::string RunConfig::to_json_text() const {
    json j;
    j["seed"] = seed;
    j["image_size"] = image_size;
    j["tasks"] = tasks;
    json shifts_j;
    for (size_t t = 0; t < tasks.size(); ++t)
        shifts_j[tasks[t]] = {{"brightness", shifts[t].brightness}, {"noise", shifts[t].noise}};
    j["data"] = {{"train_per_task", train_per_task}, {"test_per_task", test_per_task}, {"shifts", shifts_j}};
    j["model"] = {{"initial_channels", initial_channels},
                  {"initial_kernel", initial_kernel},
                  {"blocks_per_stage", blocks_per_stage},
                  {"layers_per_block", layers_per_block},
                  {"growth", growth},
                  {"up_channels", up_channels},
                  {"feedback_channels_per_task", feedback_channels_per_task},
                  {"reencoder_width", reencoder_width},
                  {"heatmap_radius", heatmap_radius},
                  {"bn_momentum", bn_momentum},
                  {"bn_eps", bn_eps},
                  {"flatten_decoders", flatten_decoders},
                  {"integrate_sum", integrate_sum},
                  {"unrolled_feedback", unrolled_feedback},
                  {"freeze_other_reencoders", freeze_other_reencoders}};
    j["train"] = {{"batch_size", batch_size},
                  {"pretrain_epochs", pretrain_epochs},
                  {"finetune_epochs", finetune_epochs},
                  {"iters", iters},
                  {"val_iters", val_iters},
                  {"pretrain_lr", pretrain_lr},
                  {"finetune_lr_start", finetune_lr_start},
                  {"finetune_lr_end", finetune_lr_end}};
    j["ablation"] = {{"no_reencoder", no_reencoder}, {"shared_bn", shared_bn}};
    j["ablate"] = {{"seeds", ablate_seeds}, {"eval_iters", ablate_eval_iters}};
    return j.dump(2) + "\n";
}

ModelConfig RunConfig::model_config() const {
    ModelConfig mc;
    mc.backbone.input_size = image_size;
    mc.backbone.image_channels = 1;
    mc.backbone.initial_channels = initial_channels;
    mc.backbone.initial_kernel = initial_kernel;
    mc.backbone.blocks_per_stage = blocks_per_stage;
    mc.backbone.layers_per_block = layers_per_block;
    mc.backbone.growth = growth;
    mc.backbone.up_channels = up_channels;
    mc.backbone.bn_momentum = bn_momentum;
    mc.backbone.bn_eps = bn_eps;

    std::set<int, std::greater<int>> taps;
    for (size_t t = 0; t < tasks.size(); ++t) {
        const auto spec = task_spec_for(tasks[t], static_cast<TaskId>(t), image_size, blocks_per_stage);
        taps.insert(spec.tap_level);
        mc.tasks.push_back(spec);
    }
    mc.backbone.tap_levels.assign(taps.begin(), taps.end());

    mc.feedback_channels_per_task = feedback_channels_per_task;
    mc.reencoder_width = reencoder_width;
    mc.heatmap_radius = heatmap_radius;
    mc.resize_reencoder = no_reencoder;
    mc.shared_bn = shared_bn;
    mc.unrolled_feedback = unrolled_feedback;
    mc.freeze_other_reencoders = freeze_other_reencoders;
    mc.integrate_sum = integrate_sum;
    mc.flatten_decoders = flatten_decoders;
    mc.seed = seed;
    IfanModelT<float>::make(mc); // validation walk (cheap at config sizes)
    return mc;
}

TrainPlan RunConfig::train_plan() const {
    TrainPlan plan;
    plan.batch_size = batch_size;
    plan.pretrain_epochs = pretrain_epochs;
    plan.finetune_epochs = finetune_epochs;
    // a single-task model has no re-encoders: interaction degenerates
    plan.iters = tasks.size() > 1 ? iters : 0;
    plan.pretrain_lr = pretrain_lr;
    plan.finetune_lr_start = finetune_lr_start;
    plan.finetune_lr_end = finetune_lr_end;
    plan.seed = seed;
    return plan;
}

} // namespace ifan
