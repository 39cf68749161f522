#pragma once

// Versioned binary checkpoint: resolved config text, parameter records
// (name, shape, raw little-endian float32), optimizer accumulators, the
// training plan, and progress counters. Round trips are byte-exact.

#include <map>
#include <string>
#include <vector>

#include "ifan/model.hpp"
#include "ifan/training.hpp"

namespace ifan {

struct Progress {
    int epochs_done = 0;   // completed global epochs across stages
    int64_t steps = 0;     // optimizer updates
    int64_t ft_steps = 0;  // fine-tune updates (learning-rate position)
    bool finished = false;
};

struct CheckpointData {
    uint32_t version = 0;
    std::string config_json;
    struct ParamRecord {
        std::string name;
        Shape shape;
        bool trainable;
        std::vector<float> data;
    };
    std::vector<ParamRecord> params;
    std::map<std::string, std::vector<float>> acc;
    TrainPlan plan;
    Progress progress;
};

std::string serialize_checkpoint(const IfanModel& model, const RmsProp& opt, const TrainPlan& plan,
                                 const Progress& progress, const std::string& config_json);
CheckpointData parse_checkpoint(const std::string& bytes);

void restore_model(IfanModel& model, const CheckpointData& ckpt);
void restore_optimizer(RmsProp& opt, const CheckpointData& ckpt);

void save_checkpoint_file(const std::string& path, const IfanModel& model, const RmsProp& opt,
                          const TrainPlan& plan, const Progress& progress, const std::string& config_json);
CheckpointData load_checkpoint_file(const std::string& path);

} // namespace ifan
