#pragma once

// Task decoders, prediction re-encoders, and the task integrator with its
// iterative feedback loop.

#include <map>
#include <string>
#include <vector>

#include "ifan/backbone.hpp"

namespace ifan {

enum class Modality { Coords, Mask, Class };
enum class LossKind { Euclidean, PixelCrossEntropy, CrossEntropy };
enum class MetricKind { Nme, Fscore, Accuracy };

struct TaskSpec {
    TaskId id = 0;
    std::string name;
    Modality modality = Modality::Coords;
    int out_count = 0;   // K landmarks | mask classes | emotion classes
    int tap_level = 0;
    LossKind loss = LossKind::Euclidean;
    MetricKind metric = MetricKind::Nme;
};

template <class S>
struct PredictionT {
    TaskId task = 0;
    TensorT<S> payload; // coords [N,2K] in [0,1] | mask logits [N,C,R,R] | class logits [N,C]
};

// Rasterize normalized (x, y) landmarks into binary disks of the given
// pixel radius. Output is a plain constant tensor: the rasterization is
// piecewise constant in the coordinates, so no gradient flows through it.
template <class S>
TensorT<S> landmark_to_heatmap(const TensorT<S>& coords, int res, int radius) {
    if (coords.ndim() != 2 || coords.dim(1) % 2 != 0)
        throw std::invalid_argument("landmark_to_heatmap: expects [N, 2K]");
    if (radius < 0) throw std::invalid_argument("landmark_to_heatmap: negative radius");
    const int n = coords.dim(0), k = coords.dim(1) / 2;
    TensorT<S> hm(Shape{n, k, res, res});
    const int r2 = radius * radius;
    for (int ni = 0; ni < n; ++ni)
        for (int ki = 0; ki < k; ++ki) {
            S x = coords.data()[ni * 2 * k + 2 * ki];
            S y = coords.data()[ni * 2 * k + 2 * ki + 1];
            x = std::min(S(1), std::max(S(0), x));
            y = std::min(S(1), std::max(S(0), y));
            const int px = static_cast<int>(std::lround(static_cast<double>(x) * (res - 1)));
            const int py = static_cast<int>(std::lround(static_cast<double>(y) * (res - 1)));
            S* plane = hm.data() + (static_cast<int64_t>(ni) * k + ki) * res * res;
            for (int i = std::max(0, py - radius); i <= std::min(res - 1, py + radius); ++i)
                for (int j = std::max(0, px - radius); j <= std::min(res - 1, px + radius); ++j)
                    if ((i - py) * (i - py) + (j - px) * (j - px) <= r2) plane[static_cast<int64_t>(i) * res + j] = S(1);
        }
    return hm;
}

// Per-task decoder reading one pyramid level.
template <class S>
struct DecoderT {
    TaskSpec spec;
    bool flatten = false; // coords/class heads: flatten the tap instead of pooling
    LinearT<S> fc;
    Conv2dT<S> conv; // mask head

    static DecoderT make(ParamStoreT<S>& store, const TaskSpec& spec, int tap_channels, bool flatten,
                         uint64_t seed) {
        DecoderT m;
        m.spec = spec;
        m.flatten = flatten;
        const std::string prefix = "decoder." + spec.name;
        if (spec.modality == Modality::Mask) {
            m.conv = Conv2dT<S>::make(store, prefix + ".conv", tap_channels, spec.out_count, 1, 1, 0, seed);
        } else {
            const int din = flatten ? tap_channels * spec.tap_level * spec.tap_level : tap_channels;
            const int dout = spec.modality == Modality::Coords ? 2 * spec.out_count : spec.out_count;
            m.fc = LinearT<S>::make(store, prefix + ".fc", din, dout, seed);
        }
        return m;
    }

    PredictionT<S> decode(GraphT<S>* g, const PyramidT<S>& pyr) const {
        auto it = pyr.find(spec.tap_level);
        if (it == pyr.end())
            throw std::invalid_argument("decode: pyramid is missing level " + std::to_string(spec.tap_level));
        const TensorT<S>& feat = it->second;
        PredictionT<S> pred;
        pred.task = spec.id;
        if (spec.modality == Modality::Mask) {
            pred.payload = conv(g, feat);
        } else {
            TensorT<S> v = flatten
                               ? feat.reshaped({feat.dim(0), feat.dim(1) * feat.dim(2) * feat.dim(3)})
                               : global_avg_pool(feat);
            v = fc(g, v);
            if (spec.modality == Modality::Coords) v = sigmoid(v); // keep coords inside the unit square
            pred.payload = v;
        }
        return pred;
    }
};

// Re-encoder: maps a raw prediction back into a pyramid of features, one
// tensor per tap level, with a fixed channel budget per level.
// Coords: binary heatmaps -> conv/max-pool ladder. Mask: class
// probabilities -> same ladder. Class: probabilities -> small linear stack
// tiled over each level.
template <class S>
struct ReencoderT {
    TaskSpec spec;
    int input_res = 0;
    int out_channels = 0;
    int heatmap_radius = 5;
    std::vector<int> levels; // tap levels, descending
    Conv2dT<S> stem;
    std::vector<Conv2dT<S>> mids;
    std::map<int, Conv2dT<S>> emits;
    LinearT<S> enc1, enc2;

    static ReencoderT make(ParamStoreT<S>& store, const TaskSpec& spec, const std::vector<int>& tap_levels,
                           int input_res, int width, int out_channels, int heatmap_radius, uint64_t seed) {
        ReencoderT m;
        m.spec = spec;
        m.input_res = input_res;
        m.out_channels = out_channels;
        m.heatmap_radius = heatmap_radius;
        m.levels = tap_levels;
        std::sort(m.levels.begin(), m.levels.end(), std::greater<int>());
        if (m.levels.front() > input_res)
            throw std::invalid_argument("reencoder: tap level above the prediction resolution");
        const std::string prefix = "reencoder." + spec.name;
        // output layers start at zero: the first fine-tuning steps then see
        // exactly the zero-feedback base case, and interaction grows only
        // where it lowers the task losses (a randomly initialized feedback
        // path injects noise into the reserved channels and destabilizes
        // the alternating schedule at small scale)
        auto zero_out = [](ParameterT<S>& p) {
            for (int64_t i = 0; i < p.value.numel(); ++i) p.value.data()[i] = S(0);
        };
        if (spec.modality == Modality::Class) {
            m.enc1 = LinearT<S>::make(store, prefix + ".enc1", spec.out_count, width, seed);
            m.enc2 = LinearT<S>::make(store, prefix + ".enc2", width, out_channels, seed);
            zero_out(*m.enc2.w);
            return m;
        }
        m.stem = Conv2dT<S>::make(store, prefix + ".stem", spec.out_count, width, 3, 1, 1, seed);
        int idx = 0;
        for (int res = input_res; res > m.levels.back(); res /= 2)
            m.mids.push_back(Conv2dT<S>::make(store, prefix + ".mid" + std::to_string(idx++), width, width, 3, 1, 1, seed));
        for (int L : m.levels) {
            auto emit = Conv2dT<S>::make(store, prefix + ".emit" + std::to_string(L), width, out_channels, 1, 1, 0, seed);
            zero_out(*emit.w);
            m.emits.emplace(L, emit);
        }
        return m;
    }

    PyramidT<S> reencode(GraphT<S>* g, const PredictionT<S>& pred) const {
        if (pred.task != spec.id) throw std::invalid_argument("reencode: prediction belongs to another task");
        PyramidT<S> out;
        if (spec.modality == Modality::Class) {
            auto v = relu(enc1(g, softmax(pred.payload, 1)));
            v = enc2(g, v);
            for (int L : levels) out.emplace(L, tile_spatial(v, L));
            return out;
        }
        TensorT<S> x = spec.modality == Modality::Coords
                           ? landmark_to_heatmap(pred.payload, input_res, heatmap_radius)
                           : softmax(pred.payload, 1);
        if (x.dim(2) != input_res) x = nn_resize(x, input_res);
        TensorT<S> h = relu(stem(g, x));
        size_t mid = 0;
        for (int res = input_res;; res /= 2) {
            if (std::find(levels.begin(), levels.end(), res) != levels.end()) out.emplace(res, emits.at(res)(g, h));
            if (res <= levels.back()) break;
            h = relu(mids[mid++](g, max_pool2(h)));
        }
        return out;
    }

    // Ablation: nearest-neighbour resizing of the raw prediction map, no
    // learned encoding. Channel count equals the raw map's channels.
    PyramidT<S> reencode_resize(const PredictionT<S>& pred) const {
        if (pred.task != spec.id) throw std::invalid_argument("reencode: prediction belongs to another task");
        PyramidT<S> out;
        if (spec.modality == Modality::Class) {
            auto v = softmax(pred.payload, 1);
            for (int L : levels) out.emplace(L, tile_spatial(v, L));
            return out;
        }
        TensorT<S> x = spec.modality == Modality::Coords
                           ? landmark_to_heatmap(pred.payload, input_res, heatmap_radius)
                           : softmax(pred.payload, 1);
        for (int L : levels) out.emplace(L, x.dim(2) == L ? x : nn_resize(x, L));
        return out;
    }
};

// Channel-axis concatenation of the encoded pyramids in fixed task order.
template <class S>
PyramidT<S> integrate(const std::vector<PyramidT<S>>& encoded, bool sum_mode = false) {
    if (encoded.empty()) throw std::invalid_argument("integrate: nothing to integrate");
    PyramidT<S> out;
    for (auto& [lvl, first] : encoded[0]) {
        std::vector<TensorT<S>> parts;
        for (const auto& pyr : encoded) {
            auto it = pyr.find(lvl);
            if (it == pyr.end()) throw std::invalid_argument("integrate: pyramid level mismatch");
            parts.push_back(it->second);
        }
        if (sum_mode) {
            TensorT<S> acc = parts[0];
            for (size_t i = 1; i < parts.size(); ++i) acc = add(acc, parts[i]);
            out.emplace(lvl, acc);
        } else {
            out.emplace(lvl, concat<S>(parts, 1));
        }
    }
    return out;
}

} // namespace ifan
