#pragma once

// Procedural synthetic multi-task face data. Every sample carries exactly
// one task's label; datasets for different tasks are disjoint by id and
// differ in brightness/noise (the per-task distribution shift).

#include <array>
#include <string>
#include <vector>

#include "ifan/heads.hpp"
#include "ifan/tensor.hpp"

namespace ifan {

struct DistributionShift {
    double brightness = 0.0;
    double noise = 0.02;
};

// All geometry lives in the unit square; the emotion class is a
// deterministic function of the mouth curvature band.
struct SyntheticFaceParams {
    double cx, cy, ax, ay;                     // face ellipse
    double eye_lx, eye_ly, eye_rx, eye_ry;     // eye centers
    double eye_r;                              // eye disk radius
    double mouth_lx, mouth_ly, mouth_rx, mouth_ry; // mouth arc endpoints
    double mouth_curv;                         // midpoint vertical displacement
    double mouth_thick;
    double brightness;
    double noise;
    uint64_t noise_seed;
};

// smile / neutral / frown from the curvature band
int emotion_class_of(double curvature);

// eyeL, eyeR, nose, mouthL, mouthR as (x, y) pairs
std::array<double, 10> landmarks_of(const SyntheticFaceParams& p);

// mask classes
constexpr int kMaskBackground = 0;
constexpr int kMaskSkin = 1;
constexpr int kMaskEye = 2;
constexpr int kMaskMouth = 3;
constexpr int kMaskClasses = 4;
constexpr int kLandmarks = 5;
constexpr int kEmotionClasses = 3;

SyntheticFaceParams sample_face(uint64_t seed, const DistributionShift& shift);
void render_mask(const SyntheticFaceParams& p, int res, int* mask);
void render_image(const SyntheticFaceParams& p, int res, float* image);

struct Sample {
    int64_t id = 0;
    Tensor image; // [1, R, R]
    Modality modality = Modality::Coords;
    std::vector<float> coords; // 2K
    std::vector<int> mask;     // R*R
    int cls = -1;
    TaskId source_task = 0;
};

struct Dataset {
    TaskId task = 0;
    Modality modality = Modality::Coords;
    int image_size = 0;
    std::vector<Sample> samples;
};

// Sample ids are id_base + index; the default base keeps ids globally
// unique across tasks (a negative base selects the default).
Dataset generate_dataset(TaskId task, Modality modality, int n, int image_size,
                         const DistributionShift& shift, uint64_t seed, int64_t id_base = -1);

// on-disk format: index.csv + images.bin + manifest.json
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

} // namespace ifan
