#include "ifan/data.hpp"

#include <cmath>
#include <sstream>

#include "ifan/io_util.hpp"
#include "ifan/rng.hpp"

namespace ifan {

namespace {

// curvature bands: smile dips the midpoint down (positive y), frown pulls
// it up; a gap between the bands keeps the classes separable
constexpr double kCurvStrong = 0.085;
constexpr double kCurvWeak = 0.055;
constexpr double kCurvNeutral = 0.012;

double arc_y(const SyntheticFaceParams& p, double t) {
    return p.mouth_ly + (p.mouth_ry - p.mouth_ly) * t + p.mouth_curv * 4.0 * t * (1.0 - t);
}

double arc_x(const SyntheticFaceParams& p, double t) {
    return p.mouth_lx + (p.mouth_rx - p.mouth_lx) * t;
}

bool in_ellipse(const SyntheticFaceParams& p, double x, double y) {
    const double dx = (x - p.cx) / p.ax, dy = (y - p.cy) / p.ay;
    return dx * dx + dy * dy <= 1.0;
}

bool in_eye(const SyntheticFaceParams& p, double x, double y) {
    const double dl = (x - p.eye_lx) * (x - p.eye_lx) + (y - p.eye_ly) * (y - p.eye_ly);
    const double dr = (x - p.eye_rx) * (x - p.eye_rx) + (y - p.eye_ry) * (y - p.eye_ry);
    return dl <= p.eye_r * p.eye_r || dr <= p.eye_r * p.eye_r;
}

bool in_mouth(const SyntheticFaceParams& p, double x, double y) {
    // distance to the sampled arc polyline
    double best = 1e9;
    for (int k = 0; k <= 24; ++k) {
        const double t = k / 24.0;
        const double dx = x - arc_x(p, t), dy = y - arc_y(p, t);
        best = std::min(best, dx * dx + dy * dy);
    }
    return best <= p.mouth_thick * p.mouth_thick;
}

} // namespace

int emotion_class_of(double curvature) {
    if (curvature >= kCurvWeak) return 0;  // smile
    if (curvature <= -kCurvWeak) return 2; // frown
    return 1;                              // neutral
}

std::array<double, 10> landmarks_of(const SyntheticFaceParams& p) {
    const double emx = 0.5 * (p.eye_lx + p.eye_rx), emy = 0.5 * (p.eye_ly + p.eye_ry);
    const double mmx = 0.5 * (p.mouth_lx + p.mouth_rx), mmy = 0.5 * (p.mouth_ly + p.mouth_ry);
    return {p.eye_lx, p.eye_ly, p.eye_rx, p.eye_ry,
            emx + 0.45 * (mmx - emx), emy + 0.45 * (mmy - emy),
            p.mouth_lx, p.mouth_ly, p.mouth_rx, p.mouth_ry};
}

SyntheticFaceParams sample_face(uint64_t seed, const DistributionShift& shift) {
    Rng rng(seed);
    SyntheticFaceParams p{};
    p.cx = 0.5 + rng.uniform(-0.08, 0.08);
    p.cy = 0.5 + rng.uniform(-0.08, 0.08);
    p.ax = rng.uniform(0.26, 0.40);
    p.ay = rng.uniform(0.34, 0.44);

    const double eye_dx = p.ax * rng.uniform(0.38, 0.54);
    const double eye_dy = p.ay * rng.uniform(0.26, 0.38);
    p.eye_lx = p.cx - eye_dx;
    p.eye_rx = p.cx + eye_dx;
    p.eye_ly = p.eye_ry = p.cy - eye_dy;
    p.eye_r = rng.uniform(0.035, 0.060);

    const double mouth_dx = p.ax * rng.uniform(0.34, 0.50);
    const double mouth_dy = p.ay * rng.uniform(0.44, 0.52);
    p.mouth_lx = p.cx - mouth_dx;
    p.mouth_rx = p.cx + mouth_dx;
    p.mouth_ly = p.mouth_ry = p.cy + mouth_dy;
    p.mouth_thick = rng.uniform(0.024, 0.036);

    const int mood = static_cast<int>(rng.uniform_int(3));
    // a frown arc rises towards the nose; keep its peak clear of the
    // nose landmark at 45% of the eye-to-mouth distance
    const double frown_cap =
        std::min(kCurvStrong, 0.55 * (p.mouth_ly - p.eye_ly) - p.mouth_thick - 0.03);
    if (mood == 0) p.mouth_curv = rng.uniform(kCurvWeak + 0.01, kCurvStrong);          // smile
    else if (mood == 2) p.mouth_curv = -rng.uniform(kCurvWeak + 0.01, frown_cap);      // frown
    else p.mouth_curv = rng.uniform(-kCurvNeutral, kCurvNeutral);

    p.brightness = shift.brightness + rng.uniform(-0.08, 0.08);
    p.noise = shift.noise;
    p.noise_seed = rng.next_u64();
    return p;
}

void render_mask(const SyntheticFaceParams& p, int res, int* mask) {
    for (int i = 0; i < res; ++i)
        for (int j = 0; j < res; ++j) {
            const double x = static_cast<double>(j) / (res - 1);
            const double y = static_cast<double>(i) / (res - 1);
            int cls = kMaskBackground;
            if (in_ellipse(p, x, y)) {
                cls = kMaskSkin;
                if (in_eye(p, x, y)) cls = kMaskEye;
                else if (in_mouth(p, x, y)) cls = kMaskMouth;
            }
            mask[i * res + j] = cls;
        }
}

void render_image(const SyntheticFaceParams& p, int res, float* image) {
    std::vector<int> mask(static_cast<size_t>(res) * res);
    render_mask(p, res, mask.data());
    Rng noise(p.noise_seed);
    for (int i = 0; i < res * res; ++i) {
        double v = 0.12;
        if (mask[static_cast<size_t>(i)] == kMaskSkin) v = 0.72;
        else if (mask[static_cast<size_t>(i)] == kMaskEye) v = 0.08;
        else if (mask[static_cast<size_t>(i)] == kMaskMouth) v = 0.25;
        v += p.brightness + noise.normal() * p.noise;
        image[i] = static_cast<float>(std::min(1.0, std::max(0.0, v)));
    }
}

Dataset generate_dataset(TaskId task, Modality modality, int n, int image_size,
                         const DistributionShift& shift, uint64_t seed, int64_t id_base) {
    if (n <= 0) throw std::invalid_argument("generate_dataset: n must be positive");
    if (id_base < 0) id_base = static_cast<int64_t>(task) * 10000000;
    Dataset ds;
    ds.task = task;
    ds.modality = modality;
    ds.image_size = image_size;
    ds.samples.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const auto p = sample_face(seed_mix({seed, static_cast<uint64_t>(task), static_cast<uint64_t>(i)}), shift);
        Sample s;
        s.id = id_base + i;
        s.source_task = task;
        s.modality = modality;
        s.image = Tensor(Shape{1, image_size, image_size});
        render_image(p, image_size, s.image.data());
        switch (modality) {
            case Modality::Coords: {
                const auto lm = landmarks_of(p);
                s.coords.assign(lm.begin(), lm.end());
                break;
            }
            case Modality::Mask: {
                s.mask.resize(static_cast<size_t>(image_size) * image_size);
                render_mask(p, image_size, s.mask.data());
                break;
            }
            case Modality::Class: s.cls = emotion_class_of(p.mouth_curv); break;
        }
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
    ensure_dir(dir);
    std::ostringstream index;
    index << "# schema=ifan-dataset-v1\n";
    index << "id,task,modality,label\n";
    std::string images;
    for (const auto& s : ds.samples) {
        index << s.id << "," << s.source_task << ",";
        switch (s.modality) {
            case Modality::Coords: {
                index << "coords,";
                for (size_t i = 0; i < s.coords.size(); ++i) index << (i ? " " : "") << fmt_double(s.coords[i]);
                break;
            }
            case Modality::Mask: {
                index << "mask,";
                for (size_t i = 0; i < s.mask.size(); ++i) index << (i ? " " : "") << s.mask[i];
                break;
            }
            case Modality::Class: index << "class," << s.cls; break;
        }
        index << "\n";
        for (int64_t i = 0; i < s.image.numel(); ++i) put_f32(images, s.image.data()[i]);
    }
    write_file(dir + "/index.csv", index.str());
    write_file(dir + "/images.bin", images);

    std::ostringstream manifest;
    manifest << "{\n  \"schema\": \"ifan-dataset-v1\",\n";
    manifest << "  \"task\": " << ds.task << ",\n  \"count\": " << ds.samples.size() << ",\n";
    manifest << "  \"image_size\": " << ds.image_size << ",\n";
    manifest << "  \"digests\": {\n";
    manifest << "    \"index.csv\": \"" << file_digest_hex(dir + "/index.csv") << "\",\n";
    manifest << "    \"images.bin\": \"" << file_digest_hex(dir + "/images.bin") << "\"\n  }\n}\n";
    write_file(dir + "/manifest.json", manifest.str());
}

Dataset load_dataset(const std::string& dir) {
    const std::string index = read_file(dir + "/index.csv");
    const std::string images = read_file(dir + "/images.bin");
    std::istringstream in(index);
    std::string line;
    if (!std::getline(in, line) || line != "# schema=ifan-dataset-v1")
        throw std::runtime_error("dataset index: unknown schema in " + dir);
    std::getline(in, line); // header

    Dataset ds;
    size_t img_off = 0;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        Sample s;
        std::istringstream ls(line);
        std::string field;
        std::getline(ls, field, ',');
        s.id = std::stoll(field);
        std::getline(ls, field, ',');
        s.source_task = std::stoi(field);
        std::getline(ls, field, ',');
        std::string payload;
        std::getline(ls, payload);
        if (field == "coords") {
            s.modality = Modality::Coords;
            std::istringstream ps(payload);
            float v;
            while (ps >> v) s.coords.push_back(v);
        } else if (field == "mask") {
            s.modality = Modality::Mask;
            std::istringstream ps(payload);
            int v;
            while (ps >> v) s.mask.push_back(v);
        } else if (field == "class") {
            s.modality = Modality::Class;
            s.cls = std::stoi(payload);
        } else {
            throw std::runtime_error("dataset index: unknown modality " + field);
        }
        if (first) {
            if (s.modality == Modality::Mask)
                ds.image_size = static_cast<int>(std::lround(std::sqrt(static_cast<double>(s.mask.size()))));
            ds.task = s.source_task;
            ds.modality = s.modality;
            first = false;
        }
        ds.samples.push_back(std::move(s));
    }
    if (ds.samples.empty()) throw std::runtime_error("dataset index: empty in " + dir);
    if (ds.image_size == 0) {
        const size_t per = images.size() / 4 / ds.samples.size();
        ds.image_size = static_cast<int>(std::lround(std::sqrt(static_cast<double>(per))));
    }
    const int r = ds.image_size;
    for (auto& s : ds.samples) {
        s.image = Tensor(Shape{1, r, r});
        for (int64_t i = 0; i < s.image.numel(); ++i) s.image.data()[i] = get_f32(images, img_off);
    }
    if (img_off != images.size()) throw std::runtime_error("dataset images.bin: trailing bytes in " + dir);
    return ds;
}

} // namespace ifan
