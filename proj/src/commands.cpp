#include "ifan/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>

#include "ifan/io_util.hpp"
#include "ifan/svg.hpp"

namespace fs = std::filesystem;

namespace ifan {

namespace {

struct StopTraining {};

void prepare_out(const std::string& out, bool force) {
    if (dir_nonempty(out) && !force)
        throw std::runtime_error("output directory " + out + " is not empty (use --force to overwrite)");
    ensure_dir(out);
}

// wall-clock values live here and nowhere else
void write_meta(const std::string& out, const std::string& command) {
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(now).count();
    std::ostringstream meta;
    meta << "{\n  \"command\": \"" << command << "\",\n  \"unix_time\": " << secs << "\n}\n";
    write_file(out + "/meta.json", meta.str());
}

std::string zero_pad(int v, int width) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%0*d", width, v);
    return buf;
}

} // namespace

std::string metric_name_of(MetricKind kind) {
    switch (kind) {
        case MetricKind::Nme: return "nme";
        case MetricKind::Fscore: return "fscore_overall";
        case MetricKind::Accuracy: return "accuracy";
    }
    return "?";
}

std::vector<Dataset> generate_task_datasets(const RunConfig& cfg, bool test_split) {
    std::vector<Dataset> out;
    const uint64_t seed = test_split ? seed_mix({cfg.seed, 0x7e57u}) : cfg.seed;
    for (size_t t = 0; t < cfg.tasks.size(); ++t) {
        const auto spec = task_spec_for(cfg.tasks[t], static_cast<TaskId>(t), cfg.image_size, cfg.blocks_per_stage);
        const int n = test_split ? cfg.test_per_task : cfg.train_per_task;
        const int64_t id_base = static_cast<int64_t>(t) * 10000000 + (test_split ? 5000000 : 0);
        out.push_back(generate_dataset(static_cast<TaskId>(t), spec.modality, n, cfg.image_size,
                                       cfg.shifts[t], seed, id_base));
    }
    return out;
}

std::vector<Dataset> load_task_datasets(const RunConfig& cfg, const std::string& data_dir, bool test_split) {
    std::vector<Dataset> out;
    for (size_t t = 0; t < cfg.tasks.size(); ++t) {
        const std::string dir = data_dir + "/" + cfg.tasks[t] + "/" + (test_split ? "test" : "train");
        auto ds = load_dataset(dir);
        const auto spec = task_spec_for(cfg.tasks[t], static_cast<TaskId>(t), cfg.image_size, cfg.blocks_per_stage);
        if (ds.modality != spec.modality)
            throw std::runtime_error("dataset " + dir + " does not carry the label modality of task " + cfg.tasks[t]);
        if (ds.image_size != cfg.image_size)
            throw std::runtime_error("dataset " + dir + " image size does not match the configuration");
        ds.task = static_cast<TaskId>(t);
        for (auto& s : ds.samples) s.source_task = static_cast<TaskId>(t);
        out.push_back(std::move(ds));
    }
    return out;
}

int cmd_generate(const RunConfig& cfg, const std::string& out, bool force) {
    prepare_out(out, force);
    write_file(out + "/config.json", cfg.to_json_text());
    write_meta(out, "generate");

    std::vector<std::string> files;
    for (bool test_split : {false, true}) {
        auto sets = generate_task_datasets(cfg, test_split);
        for (size_t t = 0; t < sets.size(); ++t) {
            const std::string dir = out + "/" + cfg.tasks[t] + "/" + (test_split ? "test" : "train");
            save_dataset(sets[t], dir);
            for (const char* f : {"index.csv", "images.bin", "manifest.json"})
                files.push_back(cfg.tasks[t] + "/" + (test_split ? "test" : "train") + "/" + f);
        }
    }
    std::sort(files.begin(), files.end());
    std::ostringstream manifest;
    manifest << "{\n  \"schema\": \"ifan-generate-v1\",\n  \"digests\": {\n";
    for (size_t i = 0; i < files.size(); ++i)
        manifest << "    \"" << files[i] << "\": \"" << file_digest_hex(out + "/" + files[i]) << "\""
                 << (i + 1 < files.size() ? "," : "") << "\n";
    manifest << "  }\n}\n";
    write_file(out + "/manifest.json", manifest.str());
    std::printf("generate: %zu tasks, %d train + %d test samples each -> %s\n", cfg.tasks.size(),
                cfg.train_per_task, cfg.test_per_task, out.c_str());
    return 0;
}

TrainOutcome run_training(const RunConfig& cfg, const std::vector<Dataset>& train_sets,
                          const std::vector<Dataset>& test_sets, TrainLog& log, const std::string& resume_path,
                          const EpochHook& on_epoch, int stop_after_epochs) {
    TrainOutcome outcome{IfanModel::make(cfg.model_config()), RmsProp{}, TrainState{}, false};
    auto& model = outcome.model;
    auto& opt = outcome.opt;
    auto& st = outcome.state;
    const TrainPlan plan = cfg.train_plan();
    validate_plan(plan, train_sets.size());

    int skip = 0;
    if (!resume_path.empty()) {
        const auto ckpt = load_checkpoint_file(resume_path);
        if (ckpt.config_json != cfg.to_json_text())
            throw std::runtime_error("resume: checkpoint was produced by a different configuration");
        restore_model(model, ckpt);
        restore_optimizer(opt, ckpt);
        st.epoch = ckpt.progress.epochs_done;
        st.step = ckpt.progress.steps;
        st.ft_step = ckpt.progress.ft_steps;
        skip = ckpt.progress.epochs_done;
    }

    // validation runs at the operating point: no interaction while
    // pretraining (re-encoders are untrained), the planned iteration count
    // during fine-tuning; cfg.val_iters >= 0 overrides
    auto epoch_done = [&](TrainLog& lg, const std::string& stage, int epoch) {
        refresh_bn_stats(model, train_sets, plan);
        int vi = stage == "finetune" && model.interactive() ? plan.iters : 0;
        if (cfg.val_iters >= 0 && model.interactive()) vi = cfg.val_iters;
        for (TaskId t = 0; t < model.task_count(); ++t) {
            const auto ms = evaluate_task(model, test_sets[static_cast<size_t>(t)], t, vi);
            lg.vals.push_back({epoch, stage, t, metric_name_of(model.task(t).metric),
                               ms[static_cast<size_t>(vi)].primary});
        }
        if (on_epoch) on_epoch(model, opt, plan, Progress{epoch + 1, st.step, st.ft_step, false});
        if (stop_after_epochs >= 0 && epoch + 1 >= stop_after_epochs) throw StopTraining{};
    };

    const int pre_total = static_cast<int>(train_sets.size()) * plan.pretrain_epochs;
    try {
        pretrain(model, train_sets, plan, opt, log, st, epoch_done, std::min(skip, pre_total));
        const auto sched = finetune_schedule(train_sets, plan);
        for (int fe = std::max(0, skip - pre_total); fe < plan.finetune_epochs; ++fe) {
            finetune_epoch(model, train_sets, plan, opt, sched, log, st, fe);
            epoch_done(log, "finetune", st.epoch);
            st.epoch += 1;
        }
    } catch (const StopTraining&) {
        outcome.stopped_early = true;
    }
    return outcome;
}

std::string trainlog_to_csv(const TrainLog& log) {
    std::ostringstream out;
    out << "# schema=ifan-trainlog-v1\nstep,stage,task,iter,loss\n";
    for (const auto& s : log.steps)
        out << s.step << "," << s.stage << "," << s.task << "," << s.iter << "," << fmt_double(s.loss) << "\n";
    return out.str();
}

std::string vallog_to_csv(const TrainLog& log) {
    std::ostringstream out;
    out << "# schema=ifan-vallog-v1\nepoch,stage,task,metric,value\n";
    for (const auto& v : log.vals)
        out << v.epoch << "," << v.stage << "," << v.task << "," << v.metric << "," << fmt_double(v.value) << "\n";
    return out.str();
}

TrainLog load_logs_csv(const std::string& trainlog_text, const std::string& vallog_text) {
    TrainLog log;
    auto next_line = [](std::istringstream& in, std::string& line) { return static_cast<bool>(std::getline(in, line)); };
    {
        std::istringstream in(trainlog_text);
        std::string line;
        if (!next_line(in, line) || line != "# schema=ifan-trainlog-v1")
            throw std::runtime_error("trainlog.csv: unknown schema");
        next_line(in, line); // header
        while (next_line(in, line)) {
            if (line.empty()) continue;
            StepRecord r;
            std::istringstream ls(line);
            std::string f;
            std::getline(ls, f, ',');
            r.step = std::stoll(f);
            std::getline(ls, r.stage, ',');
            std::getline(ls, f, ',');
            r.task = std::stoi(f);
            std::getline(ls, f, ',');
            r.iter = std::stoi(f);
            std::getline(ls, f, ',');
            r.loss = std::stof(f);
            log.steps.push_back(std::move(r));
        }
    }
    {
        std::istringstream in(vallog_text);
        std::string line;
        if (!next_line(in, line) || line != "# schema=ifan-vallog-v1")
            throw std::runtime_error("vallog.csv: unknown schema");
        next_line(in, line);
        while (next_line(in, line)) {
            if (line.empty()) continue;
            ValRecord r;
            std::istringstream ls(line);
            std::string f;
            std::getline(ls, f, ',');
            r.epoch = std::stoi(f);
            std::getline(ls, r.stage, ',');
            std::getline(ls, f, ',');
            r.task = std::stoi(f);
            std::getline(ls, r.metric, ',');
            std::getline(ls, f, ',');
            r.value = std::stod(f);
            log.vals.push_back(std::move(r));
        }
    }
    return log;
}

int cmd_train(const RunConfig& cfg, const std::string& data_dir, const std::string& out, bool force,
              const std::string& resume_path, int stop_after_epochs) {
    prepare_out(out, force);
    write_file(out + "/config.json", cfg.to_json_text());
    write_meta(out, "train");
    ensure_dir(out + "/checkpoints");

    const auto train_sets = load_task_datasets(cfg, data_dir, false);
    const auto test_sets = load_task_datasets(cfg, data_dir, true);

    TrainLog log;
    const std::string cj = cfg.to_json_text();
    auto on_epoch = [&](const IfanModel& model, const RmsProp& opt, const TrainPlan& plan, const Progress& prog) {
        const std::string bytes = serialize_checkpoint(model, opt, plan, prog, cj);
        write_file(out + "/checkpoints/epoch_" + zero_pad(prog.epochs_done, 4) + ".ckpt", bytes);
        write_file(out + "/checkpoint_last.ckpt", bytes);
        std::printf("epoch %d done (%lld steps)\n", prog.epochs_done, static_cast<long long>(prog.steps));
        std::fflush(stdout);
    };

    auto outcome = run_training(cfg, train_sets, test_sets, log, resume_path, on_epoch, stop_after_epochs);

    write_file(out + "/trainlog.csv", trainlog_to_csv(log));
    write_file(out + "/vallog.csv", vallog_to_csv(log));
    if (!outcome.stopped_early) {
        const Progress prog{outcome.state.epoch, outcome.state.step, outcome.state.ft_step, true};
        write_file(out + "/checkpoint_final.ckpt",
                   serialize_checkpoint(outcome.model, outcome.opt, cfg.train_plan(), prog, cj));
        std::printf("train: finished after %d epochs -> %s\n", outcome.state.epoch, out.c_str());
    } else {
        std::printf("train: stopped after %d epochs (resume from %s/checkpoint_last.ckpt)\n", stop_after_epochs,
                    out.c_str());
    }
    return 0;
}

std::string metrics_to_csv(const IfanModel& model, const std::vector<Dataset>& test_sets, int iters) {
    std::ostringstream out;
    out << "# schema=ifan-metrics-v1\ntask,iter,metric,value\n";
    for (TaskId t = 0; t < model.task_count(); ++t) {
        const auto& spec = model.task(t);
        const auto metrics = evaluate_task(model, test_sets[static_cast<size_t>(t)], t, iters);
        for (int it = 0; it <= iters; ++it) {
            const auto& m = metrics[static_cast<size_t>(it)];
            auto row = [&](const std::string& name, double v) {
                out << spec.name << "," << it << "," << name << "," << fmt_double(v) << "\n";
            };
            if (spec.modality == Modality::Coords) {
                row("nme", m.nme_report.mean);
                for (size_t j = 0; j < m.nme_report.per_landmark.size(); ++j)
                    row("nme_lm" + std::to_string(j), m.nme_report.per_landmark[j]);
                row("failure_rate", m.failure_mean);
                for (size_t j = 0; j < m.failure_per_landmark.size(); ++j)
                    row("failure_lm" + std::to_string(j), m.failure_per_landmark[j]);
                row("rejected_samples", m.nme_report.rejected);
            } else if (spec.modality == Modality::Mask) {
                static const char* kClassNames[] = {"background", "skin", "eye", "mouth"};
                for (size_t c = 0; c < m.fscore_report.per_class.size(); ++c) {
                    const std::string cname = c < 4 ? kClassNames[c] : "class" + std::to_string(c);
                    row("fscore_" + cname, m.fscore_report.per_class[c]);
                }
                row("fscore_mouth_all", m.fscore_report.composites.at("mouth-all"));
                row("fscore_overall", m.fscore_report.composites.at("overall"));
            } else {
                row("accuracy", m.accuracy_report.accuracy);
                for (size_t i = 0; i < m.accuracy_report.confusion.size(); ++i)
                    for (size_t j = 0; j < m.accuracy_report.confusion[i].size(); ++j)
                        row("confusion_" + std::to_string(i) + "_" + std::to_string(j),
                            m.accuracy_report.confusion[i][j]);
            }
        }
    }
    return out.str();
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_dir, int iters, const std::string& out,
             bool force) {
    const auto ckpt = load_checkpoint_file(checkpoint_path);
    const auto cfg = RunConfig::from_json_text(ckpt.config_json);
    auto model = IfanModel::make(cfg.model_config());
    restore_model(model, ckpt);
    if (iters > 0 && !model.interactive())
        throw std::runtime_error("eval: single-task checkpoint has no re-encoders; --iters must be 0");

    const auto test_sets = load_task_datasets(cfg, data_dir, true);
    prepare_out(out, force);
    write_file(out + "/config.json", ckpt.config_json);
    write_meta(out, "eval");
    write_file(out + "/metrics.csv", metrics_to_csv(model, test_sets, iters));
    std::printf("eval: %d tasks at iterations 0..%d -> %s/metrics.csv\n", model.task_count(), iters, out.c_str());
    return 0;
}

int cmd_ablate(const RunConfig& cfg, const std::string& out, bool force) {
    prepare_out(out, force);
    write_file(out + "/config.json", cfg.to_json_text());
    write_meta(out, "ablate");
    ensure_dir(out + "/plots");

    struct Variant {
        const char* name;
        bool no_reencoder;
        bool shared_bn;
    };
    const Variant variants[] = {{"full", false, false},
                                {"no-reenc", true, false},
                                {"shared-bn", false, true},
                                {"no-reenc+shared-bn", true, true}};
    const int max_iter = *std::max_element(cfg.ablate_eval_iters.begin(), cfg.ablate_eval_iters.end());

    struct Row {
        uint64_t seed;
        std::string variant;
        int iter;
        std::string task;
        std::string metric;
        double value;
    };
    std::vector<Row> rows;

    for (uint64_t seed : cfg.ablate_seeds) {
        RunConfig scfg = cfg;
        scfg.seed = seed;
        const auto train_sets = generate_task_datasets(scfg, false);
        const auto test_sets = generate_task_datasets(scfg, true);
        for (const auto& v : variants) {
            RunConfig vcfg = scfg;
            vcfg.no_reencoder = v.no_reencoder;
            vcfg.shared_bn = v.shared_bn;
            std::printf("ablate: seed %llu variant %s\n", static_cast<unsigned long long>(seed), v.name);
            std::fflush(stdout);
            TrainLog log;
            auto outcome = run_training(vcfg, train_sets, test_sets, log);
            for (TaskId t = 0; t < outcome.model.task_count(); ++t) {
                const auto metrics = evaluate_task(outcome.model, test_sets[static_cast<size_t>(t)], t, max_iter);
                for (int it : cfg.ablate_eval_iters)
                    rows.push_back({seed, v.name, it, outcome.model.task(t).name,
                                    metric_name_of(outcome.model.task(t).metric),
                                    metrics[static_cast<size_t>(it)].primary});
            }
        }
    }

    std::ostringstream sweep;
    sweep << "# schema=ifan-sweep-v1\nseed,variant,iter,task,metric,value\n";
    for (const auto& r : rows)
        sweep << r.seed << "," << r.variant << "," << r.iter << "," << r.task << "," << r.metric << ","
              << fmt_double(r.value) << "\n";
    write_file(out + "/sweep.csv", sweep.str());

    // Table-shaped summary for the full variant: one row per iteration
    // count, one column per task metric, averaged over seeds.
    std::ostringstream summary;
    summary << "# schema=ifan-summary-v1\niter";
    for (const auto& name : cfg.tasks) {
        const auto spec = task_spec_for(name, 0, cfg.image_size, cfg.blocks_per_stage);
        summary << "," << name << "_" << metric_name_of(spec.metric);
    }
    summary << "\n";
    for (int it : cfg.ablate_eval_iters) {
        summary << it;
        for (const auto& name : cfg.tasks) {
            double sum = 0;
            int count = 0;
            for (const auto& r : rows)
                if (r.variant == "full" && r.iter == it && r.task == name) {
                    sum += r.value;
                    ++count;
                }
            summary << "," << fmt_double(count ? sum / count : 0.0);
        }
        summary << "\n";
    }
    write_file(out + "/summary.csv", summary.str());

    // one plot per task: metric vs iteration, one line per variant
    for (const auto& name : cfg.tasks) {
        std::vector<PlotSeries> series;
        for (const auto& v : variants) {
            PlotSeries s;
            s.label = v.name;
            for (int it : cfg.ablate_eval_iters) {
                double sum = 0;
                int count = 0;
                for (const auto& r : rows)
                    if (r.variant == v.name && r.iter == it && r.task == name) {
                        sum += r.value;
                        ++count;
                    }
                if (count) s.points.emplace_back(it, sum / count);
            }
            series.push_back(std::move(s));
        }
        const auto spec = task_spec_for(name, 0, cfg.image_size, cfg.blocks_per_stage);
        write_file(out + "/plots/" + name + ".svg",
                   svg_line_plot(name, "interaction iterations", metric_name_of(spec.metric), series));
    }
    std::printf("ablate: %zu rows -> %s/sweep.csv\n", rows.size(), out.c_str());
    return 0;
}

} // namespace ifan
