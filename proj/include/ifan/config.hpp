#pragma once

// Experiment configuration: one strict nested key-value document drives
// data generation, the architecture, and the training plan. Unknown keys
// are rejected so typos cannot silently change an experiment.

#include <string>
#include <vector>

#include "ifan/data.hpp"
#include "ifan/model.hpp"
#include "ifan/training.hpp"

namespace ifan {

struct RunConfig {
    uint64_t seed = 1;
    int image_size = 32;
    std::vector<std::string> tasks{"landmark", "parsing", "emotion"};

    // data
    int train_per_task = 2000;
    int test_per_task = 500;
    std::vector<DistributionShift> shifts; // aligned with `tasks`

    // model
    int initial_channels = 8;
    int initial_kernel = 7;
    int blocks_per_stage = 3;
    int layers_per_block = 3;
    int growth = 12;
    int up_channels = 24;
    int feedback_channels_per_task = 4;
    int reencoder_width = 8;
    int heatmap_radius = 5;
    double bn_momentum = 0.9;
    double bn_eps = 1e-3;
    bool flatten_decoders = false;
    bool integrate_sum = false;
    bool unrolled_feedback = false;
    bool freeze_other_reencoders = false;

    // train
    std::vector<int> batch_size; // aligned with `tasks`
    int pretrain_epochs = 2;
    int finetune_epochs = 4;
    int iters = 1;
    int val_iters = -1; // -1: validate at the operating iteration
    double pretrain_lr = 1e-3;
    double finetune_lr_start = 1e-3;
    double finetune_lr_end = 1e-6;

    // ablation flags
    bool no_reencoder = false;
    bool shared_bn = false;

    // ablate sweep
    std::vector<uint64_t> ablate_seeds{1, 2, 3};
    std::vector<int> ablate_eval_iters{0, 1, 2, 3, 4};

    static RunConfig from_json_text(const std::string& text);
    static RunConfig from_file(const std::string& path);
    std::string to_json_text() const; // resolved, deterministic byte stream

    ModelConfig model_config() const;
    TrainPlan train_plan() const;
};

// name -> (modality, output count, tap level) for the known tasks
TaskSpec task_spec_for(const std::string& name, TaskId id, int image_size, int blocks_per_stage);
DistributionShift default_shift_for(const std::string& name);

} // namespace ifan
