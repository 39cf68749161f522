// Experiment harness: data generation, training, evaluation, ablations.
//
//   ifan generate --config cfg.json --out data/
//   ifan train    --config cfg.json --data data/ --out run/
//   ifan eval run/checkpoint_final.ckpt data/ --iters 2 --out eval/
//   ifan ablate   --config cfg.json --out sweep/
//
// IFAN_THREADS caps OpenMP worker parallelism.

#include <cstdlib>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "ifan/commands.hpp"

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace {

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string item;
    while (std::getline(in, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

// Restrict a parsed config to a task subset, carrying per-task settings.
ifan::RunConfig with_task_subset(const ifan::RunConfig& cfg, const std::vector<std::string>& names) {
    ifan::RunConfig out = cfg;
    out.tasks = names;
    out.shifts.clear();
    out.batch_size.clear();
    for (const auto& name : names) {
        bool found = false;
        for (size_t i = 0; i < cfg.tasks.size(); ++i)
            if (cfg.tasks[i] == name) {
                out.shifts.push_back(cfg.shifts[i]);
                out.batch_size.push_back(cfg.batch_size[i]);
                found = true;
            }
        if (!found) {
            out.shifts.push_back(ifan::default_shift_for(name));
            out.batch_size.push_back(10);
        }
    }
    return out;
}

} // namespace

int main(int argc, char** argv) {
#if defined(_OPENMP)
    if (const char* tn = std::getenv("IFAN_THREADS")) {
        const int n = std::atoi(tn);
        if (n > 0) omp_set_num_threads(n);
    }
#endif

    CLI::App app{"integrated multi-task face analytics laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_dir, data_dir, resume_path, ckpt_path;
    std::string tasks_csv;
    bool force = false, no_reencoder = false, shared_bn = false;
    int64_t seed = -1;
    int iters = -1, gen_n = -1, stop_after = -1, eval_iters = 0;

    auto add_common = [&](CLI::App* c) {
        c->add_option("--config", config_path, "configuration file (json)");
        c->add_option("--seed", seed, "override the configured seed");
        c->add_option("--out", out_dir, "output directory")->required();
        c->add_flag("--force", force, "allow writing into a non-empty output directory");
    };

    auto* gen = app.add_subcommand("generate", "produce the per-task synthetic datasets");
    add_common(gen);
    gen->add_option("--n", gen_n, "override the training sample count per task");

    auto* train = app.add_subcommand("train", "pretrain and fine-tune a model");
    add_common(train);
    train->add_option("--data", data_dir, "directory produced by generate")->required();
    train->add_option("--tasks", tasks_csv, "comma-separated task subset (e.g. landmark)");
    train->add_option("--iters", iters, "override the interaction iteration count");
    train->add_flag("--no-reencoder", no_reencoder, "ablation: replace re-encoders with resizing");
    train->add_flag("--shared-bn", shared_bn, "ablation: one batch-norm bank for all tasks");
    train->add_option("--resume", resume_path, "checkpoint to resume from");
    train->add_option("--stop-after", stop_after, "stop after this many epochs (for resume testing)");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint at interaction iterations 0..N");
    eval->add_option("checkpoint", ckpt_path, "checkpoint file")->required();
    eval->add_option("data", data_dir, "directory produced by generate")->required();
    eval->add_option("--iters", eval_iters, "maximum interaction iteration");
    eval->add_option("--out", out_dir, "output directory")->required();
    eval->add_flag("--force", force, "allow writing into a non-empty output directory");

    auto* ablate = app.add_subcommand("ablate", "train and evaluate the ablation grid");
    add_common(ablate);

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(eval)) return ifan::cmd_eval(ckpt_path, data_dir, eval_iters, out_dir, force);

        ifan::RunConfig cfg =
            config_path.empty() ? ifan::RunConfig::from_json_text("{}") : ifan::RunConfig::from_file(config_path);
        if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
        if (!tasks_csv.empty()) cfg = with_task_subset(cfg, split_csv(tasks_csv));
        if (iters >= 0) cfg.iters = iters;
        if (no_reencoder) cfg.no_reencoder = true;
        if (shared_bn) cfg.shared_bn = true;
        if (gen_n > 0) cfg.train_per_task = gen_n;
        cfg.model_config(); // re-validate after overrides

        if (app.got_subcommand(gen)) return ifan::cmd_generate(cfg, out_dir, force);
        if (app.got_subcommand(train))
            return ifan::cmd_train(cfg, data_dir, out_dir, force, resume_path, stop_after);
        if (app.got_subcommand(ablate)) return ifan::cmd_ablate(cfg, out_dir, force);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
