#include "ifan/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace ifan {

NmeReport nme(const std::vector<std::vector<double>>& pred, const std::vector<std::vector<double>>& gt) {
    if (pred.size() != gt.size()) throw std::invalid_argument("nme: sample count mismatch");
    NmeReport rep;
    if (pred.empty()) return rep;
    const size_t k = gt[0].size() / 2;
    if (k < 2) throw std::invalid_argument("nme: needs at least the two eye landmarks");
    rep.per_landmark.assign(k, 0.0);
    for (size_t s = 0; s < pred.size(); ++s) {
        if (pred[s].size() != 2 * k || gt[s].size() != 2 * k) throw std::invalid_argument("nme: landmark count mismatch");
        const double ex = gt[s][0] - gt[s][2], ey = gt[s][1] - gt[s][3];
        const double ex2 = ex * ex, ey2 = ey * ey;
        const double interocular = std::sqrt(ex2 + ey2);
        if (interocular <= 0.0) {
            ++rep.rejected;
            continue;
        }
        std::vector<double> row(k);
        for (size_t j = 0; j < k; ++j) {
            const double dx = pred[s][2 * j] - gt[s][2 * j];
            const double dy = pred[s][2 * j + 1] - gt[s][2 * j + 1];
            const double dx2 = dx * dx, dy2 = dy * dy;
            row[j] = std::sqrt(dx2 + dy2) / interocular * 100.0;
        }
        rep.per_sample_landmark.push_back(std::move(row));
    }
    if (rep.per_sample_landmark.empty()) return rep;
    double total = 0.0;
    for (const auto& row : rep.per_sample_landmark)
        for (size_t j = 0; j < k; ++j) {
            rep.per_landmark[j] += row[j];
            total += row[j];
        }
    const double n = static_cast<double>(rep.per_sample_landmark.size());
    for (auto& v : rep.per_landmark) v /= n;
    rep.mean = total / (n * static_cast<double>(k));
    return rep;
}

double failure_rate(const std::vector<double>& nme_values, double threshold_pct) {
    if (nme_values.empty()) return 0.0;
    int failures = 0;
    for (double v : nme_values)
        if (v > threshold_pct) ++failures;
    return 100.0 * failures / static_cast<double>(nme_values.size());
}

namespace {

// F from pixel counts; F = 0 when precision + recall = 0
double f_from_counts(int64_t tp, int64_t fp, int64_t fn) {
    const double p = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double r = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    if (p + r == 0.0) return 0.0;
    return 2.0 * p * r / (p + r);
}

} // namespace

FscoreReport fscore(const std::vector<std::vector<int>>& pred, const std::vector<std::vector<int>>& gt,
                    int class_count, const std::map<std::string, std::vector<int>>& composites) {
    if (pred.size() != gt.size()) throw std::invalid_argument("fscore: sample count mismatch");
    FscoreReport rep;
    rep.per_class.assign(static_cast<size_t>(class_count), 0.0);
    rep.per_class_images.assign(static_cast<size_t>(class_count), 0);
    for (auto& [name, members] : composites) rep.composites[name] = 0.0;
    std::map<std::string, int> comp_images;
    for (auto& [name, members] : composites) comp_images[name] = 0;

    for (size_t s = 0; s < pred.size(); ++s) {
        if (pred[s].size() != gt[s].size()) throw std::invalid_argument("fscore: extent mismatch");
        for (int c = 0; c < class_count; ++c) {
            int64_t tp = 0, fp = 0, fn = 0;
            for (size_t i = 0; i < pred[s].size(); ++i) {
                const bool p = pred[s][i] == c, g = gt[s][i] == c;
                tp += p && g;
                fp += p && !g;
                fn += !p && g;
            }
            if (tp + fp + fn == 0) continue; // class absent in both: skipped for this image
            rep.per_class[static_cast<size_t>(c)] += f_from_counts(tp, fp, fn);
            rep.per_class_images[static_cast<size_t>(c)] += 1;
        }
        for (auto& [name, members] : composites) {
            int64_t tp = 0, fp = 0, fn = 0;
            auto in_members = [&](int v) {
                for (int m : members)
                    if (v == m) return true;
                return false;
            };
            for (size_t i = 0; i < pred[s].size(); ++i) {
                const bool p = in_members(pred[s][i]), g = in_members(gt[s][i]);
                tp += p && g;
                fp += p && !g;
                fn += !p && g;
            }
            if (tp + fp + fn == 0) continue;
            rep.composites[name] += f_from_counts(tp, fp, fn);
            comp_images[name] += 1;
        }
    }
    for (int c = 0; c < class_count; ++c)
        if (rep.per_class_images[static_cast<size_t>(c)] > 0)
            rep.per_class[static_cast<size_t>(c)] =
                rep.per_class[static_cast<size_t>(c)] / rep.per_class_images[static_cast<size_t>(c)] * 100.0;
    for (auto& [name, v] : rep.composites)
        if (comp_images[name] > 0) v = v / comp_images[name] * 100.0;
    return rep;
}

AccuracyReport accuracy(const std::vector<int>& pred, const std::vector<int>& gt, int class_count) {
    if (pred.size() != gt.size()) throw std::invalid_argument("accuracy: length mismatch");
    AccuracyReport rep;
    rep.confusion.assign(static_cast<size_t>(class_count), std::vector<int>(static_cast<size_t>(class_count), 0));
    int correct = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (gt[i] < 0 || gt[i] >= class_count || pred[i] < 0 || pred[i] >= class_count)
            throw std::invalid_argument("accuracy: class index out of range");
        rep.confusion[static_cast<size_t>(gt[i])][static_cast<size_t>(pred[i])] += 1;
        correct += pred[i] == gt[i];
    }
    rep.accuracy = pred.empty() ? 0.0 : 100.0 * correct / static_cast<double>(pred.size());
    return rep;
}

} // namespace ifan
