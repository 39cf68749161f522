#include "ifan/checkpoint.hpp"

#include <cstring>

#include "ifan/io_util.hpp"

namespace ifan {

namespace {

constexpr char kMagic[8] = {'I', 'F', 'A', 'N', 'C', 'K', 'P', '1'};
constexpr uint32_t kVersion = 1;

void put_string(std::string& out, const std::string& s) {
    put_u32(out, static_cast<uint32_t>(s.size()));
    out += s;
}

std::string get_string(const std::string& s, size_t& off) {
    const uint32_t n = get_u32(s, off);
    if (off + n > s.size()) throw std::runtime_error("checkpoint: truncated string");
    std::string v = s.substr(off, n);
    off += n;
    return v;
}

void put_f64(std::string& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

double get_f64(const std::string& s, size_t& off) {
    const uint64_t bits = get_u64(s, off);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

} // namespace

std::string serialize_checkpoint(const IfanModel& model, const RmsProp& opt, const TrainPlan& plan,
                                 const Progress& progress, const std::string& config_json) {
    std::string out(kMagic, sizeof(kMagic));
    put_u32(out, kVersion);
    put_string(out, config_json);

    put_u32(out, static_cast<uint32_t>(model.store.size()));
    model.store.for_each([&](const Parameter& p) {
        put_string(out, p.name);
        out.push_back(p.trainable ? 1 : 0);
        put_u32(out, static_cast<uint32_t>(p.value.ndim()));
        for (int d : p.value.shape()) put_u32(out, static_cast<uint32_t>(d));
        put_u64(out, static_cast<uint64_t>(p.value.numel()));
        for (int64_t i = 0; i < p.value.numel(); ++i) put_f32(out, p.value.data()[i]);
    });

    put_u32(out, static_cast<uint32_t>(opt.accumulators().size()));
    for (const auto& [name, acc] : opt.accumulators()) {
        put_string(out, name);
        put_u64(out, acc.size());
        for (float v : acc) put_f32(out, v);
    }

    put_u32(out, static_cast<uint32_t>(plan.batch_size.size()));
    for (int b : plan.batch_size) put_u32(out, static_cast<uint32_t>(b));
    put_u32(out, static_cast<uint32_t>(plan.pretrain_epochs));
    put_u32(out, static_cast<uint32_t>(plan.finetune_epochs));
    put_u32(out, static_cast<uint32_t>(plan.iters));
    put_f64(out, plan.pretrain_lr);
    put_f64(out, plan.finetune_lr_start);
    put_f64(out, plan.finetune_lr_end);
    put_u64(out, plan.seed);

    put_u32(out, static_cast<uint32_t>(progress.epochs_done));
    put_u64(out, static_cast<uint64_t>(progress.steps));
    put_u64(out, static_cast<uint64_t>(progress.ft_steps));
    out.push_back(progress.finished ? 1 : 0);
    return out;
}

CheckpointData parse_checkpoint(const std::string& bytes) {
    if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("checkpoint: bad magic");
    size_t off = sizeof(kMagic);
    CheckpointData c;
    c.version = get_u32(bytes, off);
    if (c.version != kVersion) throw std::runtime_error("checkpoint: unsupported version");
    c.config_json = get_string(bytes, off);

    const uint32_t np = get_u32(bytes, off);
    for (uint32_t i = 0; i < np; ++i) {
        CheckpointData::ParamRecord r;
        r.name = get_string(bytes, off);
        r.trainable = bytes.at(off++) != 0;
        const uint32_t nd = get_u32(bytes, off);
        for (uint32_t d = 0; d < nd; ++d) r.shape.push_back(static_cast<int>(get_u32(bytes, off)));
        const uint64_t n = get_u64(bytes, off);
        r.data.resize(n);
        for (uint64_t k = 0; k < n; ++k) r.data[k] = get_f32(bytes, off);
        c.params.push_back(std::move(r));
    }

    const uint32_t na = get_u32(bytes, off);
    for (uint32_t i = 0; i < na; ++i) {
        std::string name = get_string(bytes, off);
        const uint64_t n = get_u64(bytes, off);
        std::vector<float> acc(n);
        for (uint64_t k = 0; k < n; ++k) acc[k] = get_f32(bytes, off);
        c.acc.emplace(std::move(name), std::move(acc));
    }

    const uint32_t nb = get_u32(bytes, off);
    for (uint32_t i = 0; i < nb; ++i) c.plan.batch_size.push_back(static_cast<int>(get_u32(bytes, off)));
    c.plan.pretrain_epochs = static_cast<int>(get_u32(bytes, off));
    c.plan.finetune_epochs = static_cast<int>(get_u32(bytes, off));
    c.plan.iters = static_cast<int>(get_u32(bytes, off));
    c.plan.pretrain_lr = get_f64(bytes, off);
    c.plan.finetune_lr_start = get_f64(bytes, off);
    c.plan.finetune_lr_end = get_f64(bytes, off);
    c.plan.seed = get_u64(bytes, off);

    c.progress.epochs_done = static_cast<int>(get_u32(bytes, off));
    c.progress.steps = static_cast<int64_t>(get_u64(bytes, off));
    c.progress.ft_steps = static_cast<int64_t>(get_u64(bytes, off));
    c.progress.finished = bytes.at(off++) != 0;
    if (off != bytes.size()) throw std::runtime_error("checkpoint: trailing bytes");
    return c;
}

void restore_model(IfanModel& model, const CheckpointData& ckpt) {
    if (ckpt.params.size() != model.store.size())
        throw std::runtime_error("checkpoint: parameter count mismatch");
    for (size_t i = 0; i < ckpt.params.size(); ++i) {
        auto& p = model.store[i];
        const auto& r = ckpt.params[i];
        if (p.name != r.name || p.value.shape() != r.shape)
            throw std::runtime_error("checkpoint: parameter record mismatch at " + r.name);
        std::copy(r.data.begin(), r.data.end(), p.value.data());
    }
}

void restore_optimizer(RmsProp& opt, const CheckpointData& ckpt) {
    opt.accumulators() = ckpt.acc;
}

void save_checkpoint_file(const std::string& path, const IfanModel& model, const RmsProp& opt,
                          const TrainPlan& plan, const Progress& progress, const std::string& config_json) {
    write_file(path, serialize_checkpoint(model, opt, plan, progress, config_json));
}

CheckpointData load_checkpoint_file(const std::string& path) { return parse_checkpoint(read_file(path)); }

} // namespace ifan
