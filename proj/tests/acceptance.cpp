// Acceptance suite: one pass/fail line per criterion.
//
// Criteria 3-7 share one set of trained artifacts per seed: an interactive
// 3-task model, single-task landmark/parsing baselines, and a shared-BN
// variant, all trained on synthetic 3-task data (2000 train / 500 test per
// task at 32x32) with the same protocol across 3 seeds.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>

#include "ifan/commands.hpp"
#include "ifan/io_util.hpp"
#include "support/grad_suite.hpp"
#include "support/metric_oracles.hpp"

using namespace ifan;

namespace {

int g_failures = 0;

double now_s() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

void report(int index, const std::string& name, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %d: %s — %s\n", pass ? "PASS" : "FAIL", index, name.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// the acceptance protocol configuration (desk scale)
// ---------------------------------------------------------------------------

const char* kAcceptConfig = R"({
  "image_size": 32,
  "data": {"train_per_task": 2000, "test_per_task": 500},
  "model": {"initial_channels": 8, "blocks_per_stage": 3, "layers_per_block": 3, "growth": 8,
            "up_channels": 24, "feedback_channels_per_task": 4, "reencoder_width": 8, "heatmap_radius": 5},
  "train": {"batch_size": [10, 10, 10], "pretrain_epochs": 2, "finetune_epochs": 4, "iters": 1}
})";

RunConfig accept_config(uint64_t seed) {
    auto cfg = RunConfig::from_json_text(kAcceptConfig);
    cfg.seed = seed;
    return cfg;
}

// ---------------------------------------------------------------------------
// criterion 1: gradient checks at 64-bit
// ---------------------------------------------------------------------------

void criterion_gradients() {
    const double t0 = now_s();
    double worst = 0;
    std::string worst_name;
    for (const auto& chk : test::run_gradient_suite())
        if (chk.max_rel_err > worst) {
            worst = chk.max_rel_err;
            worst_name = chk.name;
        }

    // composed forward: desk config, ITER=1, truncated feedback, gradients
    // of the task-0 loss at iteration 1 with frozen previous predictions
    auto rc = accept_config(11);
    rc.train_per_task = 4;
    rc.test_per_task = 4;
    auto mc = rc.model_config();
    mc.seed = 11;
    auto model = IfanModelT<double>::make(mc);
    // jitter into general position: binary heatmap inputs otherwise leave
    // whole activation planes exactly on the relu kink, where central
    // differences measure the one-sided secant instead of the derivative
    {
        Rng rng(12);
        model.store.for_each([&](ParameterT<double>& p) {
            if (!p.trainable) return;
            for (int64_t i = 0; i < p.value.numel(); ++i) p.value.data()[i] += rng.normal() * 0.05;
        });
    }
    TensorT<double> img(Shape{1, 1, 32, 32});
    {
        Rng rng(13);
        for (int64_t i = 0; i < img.numel(); ++i) img.data()[i] = rng.uniform();
    }
    LabelsT<double> labels;
    labels.modality = Modality::Coords;
    labels.coords = TensorT<double>(Shape{1, 10});
    {
        Rng rng(14);
        for (int64_t i = 0; i < 10; ++i) labels.coords.data()[i] = rng.uniform(0.2, 0.8);
    }
    auto frozen = model.forward_iteration(nullptr, img, 0, nullptr, Mode::Train);
    auto run = [&](GraphT<double>* g) {
        auto preds = model.forward_iteration(g, img, 0, &frozen, Mode::Train);
        return task_loss(model.task(0), preds[0], labels);
    };
    GraphT<double> g;
    auto loss = run(&g);
    g.backward(loss);
    std::vector<ParameterT<double>*> scope;
    for (const auto& prefix : model.scope_prefixes(false, 0))
        for (auto* p : model.store.with_prefix(prefix))
            if (p->trainable) scope.push_back(p);
    auto rep = test::fd_check(
        model.store, scope, [&](const ParameterT<double>& p) { return g.grad(p); },
        [&]() {
            GraphT<double> g2;
            g2.set_recording(false);
            return run(nullptr).item();
        },
        2, 4242);
    if (rep.max_rel_err > worst) {
        worst = rep.max_rel_err;
        worst_name = "composed:" + rep.worst_param;
    }
    const double dt = now_s() - t0;
    report(1, "gradient suite", worst < 1e-4 && dt < 120.0,
           "max rel err " + fmt(worst) + " (" + worst_name + "), " + std::to_string(rep.coords_checked) +
               " composed coords, " + fmt(dt) + " s");
}

// ---------------------------------------------------------------------------
// criterion 2: metric oracle equivalence
// ---------------------------------------------------------------------------

void criterion_metric_oracles() {
    const double t0 = now_s();
    const int bad = test::metric_equivalence_mismatches(100, 20240808);
    const double dt = now_s() - t0;
    report(2, "metric oracle equivalence", bad == 0 && dt < 30.0,
           std::to_string(bad) + " mismatches on 100 instances each, " + fmt(dt) + " s");
}

// ---------------------------------------------------------------------------
// criteria 3-7: trained artifacts shared across seeds
// ---------------------------------------------------------------------------

struct SeedArtifacts {
    // interactive model metrics per iteration 0..3 per task (primary metric)
    double inter[4][3] = {};
    double shared_bn_iter2[3] = {};
    double single_landmark_nme = 0;
    double single_parsing_f = 0;
    // landmark validation trace (criterion 7)
    double predip_nme = 0, dip_nme = 0, final_nme = 0;
};

SeedArtifacts build_seed_artifacts(uint64_t seed) {
    SeedArtifacts art;
    auto cfg = accept_config(seed);
    const auto train_sets = generate_task_datasets(cfg, false);
    const auto test_sets = generate_task_datasets(cfg, true);

    // interactive model
    {
        TrainLog log;
        auto outcome = run_training(cfg, train_sets, test_sets, log);
        for (TaskId t = 0; t < 3; ++t) {
            const auto ms = evaluate_task(outcome.model, test_sets[static_cast<size_t>(t)], t, 3);
            for (int it = 0; it <= 3; ++it) art.inter[it][t] = ms[static_cast<size_t>(it)].primary;
        }
        // landmark validation trace: last record of each stage
        auto last_stage_value = [&](const std::string& stage) {
            double v = 0;
            for (const auto& r : log.vals)
                if (r.stage == stage && r.task == 0 && r.metric == "nme") v = r.value;
            return v;
        };
        art.predip_nme = last_stage_value("pretrain0");
        art.dip_nme = last_stage_value("pretrain1");
        art.final_nme = last_stage_value("finetune");
    }

    // shared-BN variant, same protocol
    {
        auto scfg = cfg;
        scfg.shared_bn = true;
        TrainLog log;
        auto outcome = run_training(scfg, train_sets, test_sets, log);
        for (TaskId t = 0; t < 3; ++t) {
            const auto ms = evaluate_task(outcome.model, test_sets[static_cast<size_t>(t)], t, 2);
            art.shared_bn_iter2[t] = ms[2].primary;
        }
    }

    // single-task baselines (landmark, parsing)
    for (const std::string name : {std::string("landmark"), std::string("parsing")}) {
        auto scfg = cfg;
        scfg.tasks = {name};
        scfg.shifts = {default_shift_for(name)};
        scfg.batch_size = {10};
        TrainLog log;
        const auto tr = generate_task_datasets(scfg, false);
        const auto te = generate_task_datasets(scfg, true);
        auto outcome = run_training(scfg, tr, te, log);
        const auto ms = evaluate_task(outcome.model, te[0], 0, 0);
        if (name == "landmark") art.single_landmark_nme = ms[0].primary;
        else art.single_parsing_f = ms[0].primary;
    }
    return art;
}

void criteria_trends() {
    const double t0 = now_s();
    const std::vector<uint64_t> seeds{1, 2, 3};
    std::vector<SeedArtifacts> arts;
    for (uint64_t s : seeds) {
        const double ts = now_s();
        arts.push_back(build_seed_artifacts(s));
        std::printf("  [seed %llu artifacts built in %.0f s]\n", static_cast<unsigned long long>(s), now_s() - ts);
        std::fflush(stdout);
    }
    const double t3 = now_s();

    auto mean_of = [&](auto&& get) {
        double s = 0;
        for (const auto& a : arts) s += get(a);
        return s / static_cast<double>(arts.size());
    };

    // criterion 3: multi-task (iter 0) beats single task on landmark NME
    // and parsing overall F
    {
        const double multi_nme = mean_of([](const SeedArtifacts& a) { return a.inter[0][0]; });
        const double single_nme = mean_of([](const SeedArtifacts& a) { return a.single_landmark_nme; });
        const double multi_f = mean_of([](const SeedArtifacts& a) { return a.inter[0][1]; });
        const double single_f = mean_of([](const SeedArtifacts& a) { return a.single_parsing_f; });
        const bool pass = multi_nme < single_nme && multi_f > single_f;
        report(3, "multi-task over single-task (iter 0)", pass,
               "landmark NME " + fmt(single_nme) + " -> " + fmt(multi_nme) + ", parsing F " + fmt(single_f) +
                   " -> " + fmt(multi_f) + ", artifacts " + fmt(t3 - t0) + " s");
    }

    // criterion 4: iter-2 evaluation beats iter-0 on at least 2 of 3 tasks
    {
        int better = 0;
        std::string detail;
        for (TaskId t = 0; t < 3; ++t) {
            const double m0 = mean_of([&](const SeedArtifacts& a) { return a.inter[0][t]; });
            const double m2 = mean_of([&](const SeedArtifacts& a) { return a.inter[2][t]; });
            const bool higher = t != 0; // landmark NME is lower-better
            const bool improved = higher ? m2 > m0 : m2 < m0;
            better += improved;
            detail += (t ? ", " : "") + std::string(t == 0 ? "nme " : (t == 1 ? "F " : "acc ")) + fmt(m0) +
                      "->" + fmt(m2);
        }
        report(4, "interaction trend (iter 2 vs iter 0)", better >= 2, detail + " (" + std::to_string(better) + "/3)");
    }

    // criterion 5: |m(3)-m(2)| < |m(1)-m(0)| per task metric
    {
        bool pass = true;
        std::string detail;
        for (TaskId t = 0; t < 3; ++t) {
            const double m0 = mean_of([&](const SeedArtifacts& a) { return a.inter[0][t]; });
            const double m1 = mean_of([&](const SeedArtifacts& a) { return a.inter[1][t]; });
            const double m2 = mean_of([&](const SeedArtifacts& a) { return a.inter[2][t]; });
            const double m3 = mean_of([&](const SeedArtifacts& a) { return a.inter[3][t]; });
            const double early = std::abs(m1 - m0), late = std::abs(m3 - m2);
            pass = pass && late < early;
            detail += (t ? ", " : "") + fmt(early) + " vs " + fmt(late);
        }
        report(5, "saturation of further iterations", pass, "|i1-i0| vs |i3-i2|: " + detail);
    }

    // criterion 6: shared-BN variant is worse on all three task metrics
    {
        bool pass = true;
        std::string detail;
        for (TaskId t = 0; t < 3; ++t) {
            const double task_bn = mean_of([&](const SeedArtifacts& a) { return a.inter[2][t]; });
            const double shared = mean_of([&](const SeedArtifacts& a) { return a.shared_bn_iter2[t]; });
            const bool higher = t != 0;
            const bool worse = higher ? shared < task_bn : shared > task_bn;
            pass = pass && worse;
            detail += (t ? ", " : "") + fmt(task_bn) + " vs shared " + fmt(shared);
        }
        report(6, "task-BN ablation direction", pass, detail);
    }

    // criterion 7: pre-training dip and recovery of task 1 (landmark)
    {
        const double predip = mean_of([](const SeedArtifacts& a) { return a.predip_nme; });
        const double dip = mean_of([](const SeedArtifacts& a) { return a.dip_nme; });
        const double fin = mean_of([](const SeedArtifacts& a) { return a.final_nme; });
        const bool pass = dip > predip && fin <= predip + 2.0;
        report(7, "pre-training dip and recovery", pass,
               "NME " + fmt(predip) + " -> dip " + fmt(dip) + " -> final " + fmt(fin));
    }
}

// ---------------------------------------------------------------------------
// criterion 8: determinism and persistence
// ---------------------------------------------------------------------------

void criterion_determinism() {
    namespace fs = std::filesystem;
    const double t0 = now_s();
    auto cfg = accept_config(7);
    cfg.train_per_task = 24;
    cfg.test_per_task = 8;
    cfg.batch_size = {4, 4, 4};
    cfg.pretrain_epochs = 1;
    cfg.finetune_epochs = 1;

    const std::string base = "/tmp/ifan_accept_det";
    fs::remove_all(base);
    ensure_dir(base);
    cmd_generate(cfg, base + "/data", false);
    cmd_train(cfg, base + "/data", base + "/a", false);
    cmd_train(cfg, base + "/data", base + "/b", false);
    const bool logs_equal = read_file(base + "/a/trainlog.csv") == read_file(base + "/b/trainlog.csv") &&
                            read_file(base + "/a/vallog.csv") == read_file(base + "/b/vallog.csv");
    const bool ckpt_equal =
        read_file(base + "/a/checkpoint_final.ckpt") == read_file(base + "/b/checkpoint_final.ckpt");

    // save/load round trip
    const std::string bytes = read_file(base + "/a/checkpoint_final.ckpt");
    const auto parsed = parse_checkpoint(bytes);
    auto model = IfanModel::make(RunConfig::from_json_text(parsed.config_json).model_config());
    restore_model(model, parsed);
    RmsProp opt;
    restore_optimizer(opt, parsed);
    const bool roundtrip = serialize_checkpoint(model, opt, parsed.plan, parsed.progress, parsed.config_json) == bytes;

    // resume after interrupt equals the uninterrupted run
    cmd_train(cfg, base + "/data", base + "/stop", false, "", 2);
    cmd_train(cfg, base + "/data", base + "/resumed", false, base + "/stop/checkpoint_last.ckpt");
    const bool resume_equal =
        read_file(base + "/resumed/checkpoint_final.ckpt") == read_file(base + "/a/checkpoint_final.ckpt");

    fs::remove_all(base);
    report(8, "determinism and persistence", logs_equal && ckpt_equal && roundtrip && resume_equal,
           std::string("logs ") + (logs_equal ? "ok" : "DIFFER") + ", checkpoint " + (ckpt_equal ? "ok" : "DIFFER") +
               ", round trip " + (roundtrip ? "ok" : "BROKEN") + ", resume " + (resume_equal ? "ok" : "DIFFER") +
               ", " + fmt(now_s() - t0) + " s");
}

// ---------------------------------------------------------------------------
// criterion 9: structural invariants
// ---------------------------------------------------------------------------

void criterion_structural() {
    const double t0 = now_s();
    std::string detail;
    bool pass = true;
    auto sub = [&](const char* name, bool ok) {
        pass = pass && ok;
        detail += std::string(detail.empty() ? "" : ", ") + name + (ok ? " ok" : " FAILED");
    };

    auto cfg = accept_config(21);
    cfg.train_per_task = 8;
    cfg.test_per_task = 4;
    cfg.batch_size = {4, 4, 4};
    const auto mc = cfg.model_config();

    // BN task isolation + pretrain scope discipline
    {
        auto model = IfanModel::make(mc);
        const auto data = generate_task_datasets(cfg, false);
        std::map<std::string, std::vector<float>> before;
        model.store.for_each([&](const Parameter& p) { before[p.name] = *p.value.buf(); });
        RmsProp opt;
        for (const auto& idx : pretrain_batches(cfg.seed, 0, 0, 8, 4)) {
            auto batch = make_batch(data[0], idx);
            Graph g;
            auto loss = model.batch_loss(g, 0, batch.images, batch.labels, 0, Mode::Train);
            g.backward(loss);
            opt.step(scoped_grads(model, g, true, 0), 1e-3f);
        }
        bool isolated = true;
        model.store.for_each([&](const Parameter& p) {
            const bool other_bank = p.name.find(".bank1.") != std::string::npos ||
                                    p.name.find(".bank2.") != std::string::npos;
            const bool other_scope = p.name.rfind("decoder.parsing.", 0) == 0 ||
                                     p.name.rfind("decoder.emotion.", 0) == 0 ||
                                     p.name.rfind("reencoder.", 0) == 0;
            if ((other_bank || other_scope) && *p.value.buf() != before.at(p.name)) isolated = false;
        });
        sub("bn-isolation+scope", isolated);
    }

    // dataset disjointness
    {
        const auto data = generate_task_datasets(cfg, false);
        bool ok = true;
        try {
            check_disjoint(data);
        } catch (...) {
            ok = false;
        }
        std::set<int64_t> ids;
        size_t total = 0;
        for (const auto& ds : data) {
            for (const auto& s : ds.samples) ids.insert(s.id);
            total += ds.samples.size();
        }
        sub("disjoint-ids", ok && ids.size() == total);
    }

    // iteration-0 re-encoder gradient nullity
    {
        auto model = IfanModel::make(mc);
        const auto data = generate_task_datasets(cfg, false);
        auto batch = make_batch(data[1], {0, 1, 2, 3});
        Graph g;
        auto loss = model.batch_loss(g, 1, batch.images, batch.labels, 0, Mode::Train);
        g.backward(loss);
        bool null_grads = true;
        for (auto* p : model.store.with_prefix("reencoder."))
            if (g.grad(*p)) null_grads = false;
        sub("iter0-reencoder-nullity", null_grads);
    }

    // heatmap equals the brute-force disk oracle on 1000 random landmarks
    {
        Rng rng(99);
        bool equal = true;
        for (int trial = 0; trial < 1000 && equal; ++trial) {
            const double x = rng.uniform(-0.2, 1.2), y = rng.uniform(-0.2, 1.2);
            const int res = 8 + static_cast<int>(rng.uniform_int(26));
            const int radius = static_cast<int>(rng.uniform_int(6));
            TensorT<double> coords(Shape{1, 2}, {x, y});
            auto hm = landmark_to_heatmap(coords, res, radius);
            const double cx = std::min(1.0, std::max(0.0, x)), cy = std::min(1.0, std::max(0.0, y));
            const int px = static_cast<int>(std::lround(cx * (res - 1)));
            const int py = static_cast<int>(std::lround(cy * (res - 1)));
            for (int i = 0; i < res && equal; ++i)
                for (int j = 0; j < res; ++j) {
                    const bool in_disk = (i - py) * (i - py) + (j - px) * (j - px) <= radius * radius;
                    if ((hm.data()[static_cast<int64_t>(i) * res + j] == 1.0) != in_disk) {
                        equal = false;
                        break;
                    }
                }
        }
        sub("heatmap-oracle", equal);
    }

    const double dt = now_s() - t0;
    report(9, "structural invariants", pass && dt < 60.0, detail + ", " + fmt(dt) + " s");
}

} // namespace

int main(int argc, char** argv) {
    bool quick = false;
    for (int i = 1; i < argc; ++i)
        if (std::strcmp(argv[i], "--skip-trends") == 0) quick = true;

    const double t0 = now_s();
    criterion_gradients();
    criterion_metric_oracles();
    if (!quick) criteria_trends();
    else std::printf("[SKIP] criteria 3-7 (--skip-trends)\n");
    criterion_determinism();
    criterion_structural();
    std::printf("acceptance: %d failure(s), %.0f s total\n", g_failures, now_s() - t0);
    return g_failures == 0 ? 0 : 1;
}
