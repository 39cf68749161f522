#pragma once

// Evaluation metrics: inter-ocular-normalized landmark error, failure
// rate, per-class/composite F-scores, classification accuracy.

#include <map>
#include <string>
#include <vector>

namespace ifan {

struct NmeReport {
    std::vector<double> per_landmark;                    // mean over samples, %
    double mean = 0.0;                                   // over samples and landmarks, %
    std::vector<std::vector<double>> per_sample_landmark; // [kept samples][K], %
    int rejected = 0;                                    // coincident ground-truth eyes
};

// coords laid out as (x, y) pairs; gt landmarks 0 and 1 are the eyes
NmeReport nme(const std::vector<std::vector<double>>& pred, const std::vector<std::vector<double>>& gt);

// fraction strictly above the threshold, in %
double failure_rate(const std::vector<double>& nme_values, double threshold_pct = 10.0);

struct FscoreReport {
    std::vector<double> per_class;     // %, NaN-free: classes absent everywhere report 0 with count 0
    std::vector<int> per_class_images; // images contributing to each class average
    std::map<std::string, double> composites; // named pooled-foreground scores, %
};

// composites: name -> member classes pooled as one foreground class
FscoreReport fscore(const std::vector<std::vector<int>>& pred, const std::vector<std::vector<int>>& gt,
                    int class_count, const std::map<std::string, std::vector<int>>& composites);

struct AccuracyReport {
    double accuracy = 0.0;                 // %
    std::vector<std::vector<int>> confusion; // rows = ground truth
};

AccuracyReport accuracy(const std::vector<int>& pred, const std::vector<int>& gt, int class_count);

} // namespace ifan
