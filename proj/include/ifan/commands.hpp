#pragma once

// The experiment harness behind the CLI subcommands. Everything here is
// deterministic given (config, seed); wall-clock timestamps are confined
// to meta.json.

#include <functional>
#include <string>
#include <vector>

#include "ifan/checkpoint.hpp"
#include "ifan/config.hpp"

namespace ifan {

int cmd_generate(const RunConfig& cfg, const std::string& out, bool force);
int cmd_train(const RunConfig& cfg, const std::string& data_dir, const std::string& out, bool force,
              const std::string& resume_path = "", int stop_after_epochs = -1);
int cmd_eval(const std::string& checkpoint_path, const std::string& data_dir, int iters, const std::string& out,
             bool force);
int cmd_ablate(const RunConfig& cfg, const std::string& out, bool force);

// ---- pieces shared with the test suites ----

std::vector<Dataset> load_task_datasets(const RunConfig& cfg, const std::string& data_dir, bool test_split);
std::vector<Dataset> generate_task_datasets(const RunConfig& cfg, bool test_split);

struct TrainOutcome {
    IfanModel model;
    RmsProp opt;
    TrainState state;
    bool stopped_early = false;
};

using EpochHook =
    std::function<void(const IfanModel&, const RmsProp&, const TrainPlan&, const Progress&)>;

TrainOutcome run_training(const RunConfig& cfg, const std::vector<Dataset>& train_sets,
                          const std::vector<Dataset>& test_sets, TrainLog& log,
                          const std::string& resume_path = "", const EpochHook& on_epoch = nullptr,
                          int stop_after_epochs = -1);

std::string metric_name_of(MetricKind kind);
std::string trainlog_to_csv(const TrainLog& log);
std::string vallog_to_csv(const TrainLog& log);
TrainLog load_logs_csv(const std::string& trainlog_text, const std::string& vallog_text);
std::string metrics_to_csv(const IfanModel& model, const std::vector<Dataset>& test_sets, int iters);

} // namespace ifan
