#pragma once

// Shareable feature encoder: initial convolution, a dense-block
// down-sampling stage, and a dense-block up-sampling stage. Exposes
// feature taps at configured resolutions and accepts feedback tensors
// that are concatenated in front of every dense block whose input
// resolution matches a tap level.

#include <map>
#include <set>
#include <string>
#include <vector>

#include "ifan/layers.hpp"

namespace ifan {

template <class S>
using PyramidT = std::map<int, TensorT<S>>;

struct BackboneConfig {
    int input_size = 32;
    int image_channels = 1;
    int initial_channels = 8;
    int initial_kernel = 7;
    int blocks_per_stage = 3;
    int layers_per_block = 3;
    int growth = 12;
    int up_channels = 24;             // conv width after each sub-pixel step
    std::vector<int> tap_levels{32, 8, 4};
    int feedback_total = 0;           // reserved feedback channels per tap level
    int bn_banks = 1;
    double bn_momentum = 0.9;
    double bn_eps = 1e-3;
};

struct ChannelPlan {
    std::vector<std::pair<std::string, int>> trace; // (point, channels)
    std::map<int, int> tap_channels;                // tap level -> channels
};

// Walks the architecture symbolically; throws on invalid configurations
// (bad tap levels, sub-pixel divisibility, resolution arithmetic).
inline ChannelPlan compute_channel_plan(const BackboneConfig& cfg) {
    ChannelPlan plan;
    const int B = cfg.blocks_per_stage;
    if (B < 1) throw std::invalid_argument("backbone: blocks_per_stage must be >= 1");
    if (cfg.input_size % (1 << B) != 0)
        throw std::invalid_argument("backbone: input_size not divisible by 2^blocks_per_stage");
    std::set<int> realized;
    for (int i = 0; i <= B; ++i) realized.insert(cfg.input_size >> i);
    for (int L : cfg.tap_levels)
        if (!realized.count(L))
            throw std::invalid_argument("backbone: tap level " + std::to_string(L) + " is not a realized resolution");

    const std::set<int> taps(cfg.tap_levels.begin(), cfg.tap_levels.end());
    const int add = cfg.layers_per_block * cfg.growth;

    int ch = cfg.initial_channels;
    plan.trace.emplace_back("initial", ch);
    std::map<int, int> down_out;
    for (int i = 0; i < B; ++i) {
        const int res = cfg.input_size >> i;
        if (taps.count(res)) ch += cfg.feedback_total;
        ch += add;
        plan.trace.emplace_back("down" + std::to_string(i), ch);
        down_out[res] = ch;
    }
    const int down_end_res = cfg.input_size >> B;
    const int down_end_ch = ch;
    plan.trace.emplace_back("down_end", ch);
    for (int i = 0; i < B; ++i) {
        const int res = cfg.input_size >> (B - i);
        if (taps.count(res)) ch += cfg.feedback_total;
        ch += add;
        plan.trace.emplace_back("up" + std::to_string(i), ch);
        if (ch % 4 != 0)
            throw std::invalid_argument("backbone: up-stage block output " + std::to_string(ch) +
                                        " not divisible by 4 before sub-pixel step");
        ch = cfg.up_channels;
        plan.trace.emplace_back("up_tr" + std::to_string(i), ch);
    }
    plan.trace.emplace_back("up_end", ch);

    for (int L : cfg.tap_levels) {
        if (L == cfg.input_size) plan.tap_channels[L] = cfg.up_channels;
        else if (L == down_end_res) plan.tap_channels[L] = down_end_ch;
        else plan.tap_channels[L] = down_out.at(L);
    }
    return plan;
}

// Zero tensors with the reserved feedback channel counts at every tap level.
template <class S>
PyramidT<S> zero_feedback(const BackboneConfig& cfg, int batch) {
    PyramidT<S> fb;
    if (cfg.feedback_total == 0) return fb;
    for (int L : cfg.tap_levels) fb.emplace(L, TensorT<S>(Shape{batch, cfg.feedback_total, L, L}));
    return fb;
}

template <class S>
struct BackboneT {
    BackboneConfig cfg;
    Conv2dT<S> initial;
    std::vector<DenseBlockT<S>> down_blocks;
    std::vector<DenseBlockT<S>> up_blocks;
    std::vector<TransitionUpT<S>> up_transitions;

    static BackboneT make(ParamStoreT<S>& store, const BackboneConfig& cfg, uint64_t seed) {
        compute_channel_plan(cfg); // validates
        BackboneT m;
        m.cfg = cfg;
        const int B = cfg.blocks_per_stage;
        const std::set<int> taps(cfg.tap_levels.begin(), cfg.tap_levels.end());
        const auto mom = static_cast<S>(cfg.bn_momentum);
        const auto eps = static_cast<S>(cfg.bn_eps);

        m.initial = Conv2dT<S>::make(store, "backbone.initial", cfg.image_channels, cfg.initial_channels,
                                     cfg.initial_kernel, 1, cfg.initial_kernel / 2, seed);
        int ch = cfg.initial_channels;
        for (int i = 0; i < B; ++i) {
            const int res = cfg.input_size >> i;
            if (taps.count(res)) ch += cfg.feedback_total;
            m.down_blocks.push_back(DenseBlockT<S>::make(store, "backbone.down" + std::to_string(i), ch,
                                                         cfg.layers_per_block, cfg.growth, cfg.bn_banks, mom, eps, seed));
            ch = m.down_blocks.back().out_channels();
        }
        for (int i = 0; i < B; ++i) {
            const int res = cfg.input_size >> (B - i);
            if (taps.count(res)) ch += cfg.feedback_total;
            m.up_blocks.push_back(DenseBlockT<S>::make(store, "backbone.up" + std::to_string(i), ch,
                                                       cfg.layers_per_block, cfg.growth, cfg.bn_banks, mom, eps, seed));
            ch = m.up_blocks.back().out_channels();
            m.up_transitions.push_back(TransitionUpT<S>::make(store, "backbone.up_tr" + std::to_string(i), ch,
                                                              cfg.up_channels, seed));
            ch = cfg.up_channels;
        }
        return m;
    }

    // feedback must carry exactly the tap levels with the reserved channel
    // counts (use zero_feedback for the no-interaction case).
    PyramidT<S> forward(GraphT<S>* g, const TensorT<S>& image, TaskId bank, const PyramidT<S>& feedback,
                        Mode mode, std::vector<std::pair<std::string, int>>* trace = nullptr) const {
        if (image.ndim() != 4 || image.dim(1) != cfg.image_channels || image.dim(2) != cfg.input_size ||
            image.dim(3) != cfg.input_size)
            throw std::invalid_argument("backbone: image shape " + shape_str(image.shape()) + " does not match config");
        const int B = cfg.blocks_per_stage;
        const std::set<int> taps(cfg.tap_levels.begin(), cfg.tap_levels.end());
        if (cfg.feedback_total > 0) {
            if (feedback.size() != taps.size()) throw std::invalid_argument("backbone: feedback levels mismatch");
            for (int L : cfg.tap_levels) {
                auto it = feedback.find(L);
                if (it == feedback.end()) throw std::invalid_argument("backbone: missing feedback level " + std::to_string(L));
                const auto& t = it->second;
                if (t.ndim() != 4 || t.dim(0) != image.dim(0) || t.dim(1) != cfg.feedback_total ||
                    t.dim(2) != L || t.dim(3) != L)
                    throw std::invalid_argument("backbone: feedback channel/extent mismatch at level " + std::to_string(L));
            }
        }

        auto note = [&](const std::string& name, const TensorT<S>& t) {
            if (trace) trace->emplace_back(name, t.dim(1));
        };

        TensorT<S> h = initial(g, image);
        note("initial", h);
        std::map<int, TensorT<S>> down_out;
        for (int i = 0; i < B; ++i) {
            const int res = cfg.input_size >> i;
            if (taps.count(res) && cfg.feedback_total > 0) h = concat<S>({h, feedback.at(res)}, 1);
            h = down_blocks[static_cast<size_t>(i)].forward(g, h, bank, mode);
            note("down" + std::to_string(i), h);
            down_out.emplace(res, h);
            h = transition_down(h);
        }
        const TensorT<S> down_end = h;
        note("down_end", h);
        for (int i = 0; i < B; ++i) {
            const int res = cfg.input_size >> (B - i);
            if (taps.count(res) && cfg.feedback_total > 0) h = concat<S>({h, feedback.at(res)}, 1);
            h = up_blocks[static_cast<size_t>(i)].forward(g, h, bank, mode);
            note("up" + std::to_string(i), h);
            h = up_transitions[static_cast<size_t>(i)](g, h);
            note("up_tr" + std::to_string(i), h);
        }
        note("up_end", h);

        PyramidT<S> out;
        for (int L : cfg.tap_levels) {
            if (L == cfg.input_size) out.emplace(L, h);
            else if (L == (cfg.input_size >> B)) out.emplace(L, down_end);
            else out.emplace(L, down_out.at(L));
        }
        return out;
    }
};

} // namespace ifan
