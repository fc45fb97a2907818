#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "psrd/box.hpp"
#include "psrd/eval.hpp"
#include "psrd/ppm.hpp"
#include "psrd/rng.hpp"
#include "psrd/tensor.hpp"
#include "psrd/text.hpp"

namespace psrd {

/// Synthetic scenes: three localizable classes on a textured background.
/// Class 1 is a filled disc, class 2 an axis-aligned square, class 3 an
/// upward triangle; every class has its own color family so crops stay
/// separable.
struct DatasetSpec {
    int n_train = 180;
    int n_val = 20;
    int n_test = 25;
    int height = 64;
    int width = 64;
    std::uint64_t seed = 42;
    int objects_min = 1;
    int objects_max = 3;
    Real noise_sigma = Real(0.02);

    void validate() const {
        if (n_train <= 0 || n_val <= 0 || n_test <= 0) {
            throw ConfigError("dataset spec: split counts must be positive");
        }
        if (height < 32 || width < 32) throw ConfigError("dataset spec: image size must be at least 32");
        if (objects_min < 1 || objects_max < objects_min) {
            throw ConfigError("dataset spec: objects_per_scene range is invalid");
        }
        if (noise_sigma < Real(0)) throw ConfigError("dataset spec: noise_sigma must be nonnegative");
    }
};

struct Scene {
    Tensor image;  // [3,H,W] in [0,1]
    GroundTruth annotations;
    std::string image_id;
};

namespace synth_detail {

struct Color {
    Real r, g, b;
};

inline constexpr Color kClassColors[3] = {
    {Real(0.82), Real(0.20), Real(0.18)},  // class 1: red disc
    {Real(0.18), Real(0.32), Real(0.85)},  // class 2: blue square
    {Real(0.88), Real(0.80), Real(0.16)},  // class 3: yellow triangle
};

inline void put_pixel(Tensor& img, int x, int y, const Color& c) {
    const int H = img.dim(1), W = img.dim(2);
    img[(static_cast<std::int64_t>(0) * H + y) * W + x] = c.r;
    img[(static_cast<std::int64_t>(1) * H + y) * W + x] = c.g;
    img[(static_cast<std::int64_t>(2) * H + y) * W + x] = c.b;
}

}  // namespace synth_detail

/// Fills all pixels whose centers lie inside the circle. Returns the tight
/// analytic bound (cx-r, cy-r, cx+r, cy+r).
inline Box draw_disc(Tensor& img, Real cx, Real cy, Real radius, const synth_detail::Color& c) {
    const int H = img.dim(1), W = img.dim(2);
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
    const int y1 = std::min(H - 1, static_cast<int>(std::ceil(cy + radius)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
    const int x1 = std::min(W - 1, static_cast<int>(std::ceil(cx + radius)));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const Real dx = static_cast<Real>(x) + Real(0.5) - cx;
            const Real dy = static_cast<Real>(y) + Real(0.5) - cy;
            if (dx * dx + dy * dy <= radius * radius) synth_detail::put_pixel(img, x, y, c);
        }
    }
    return {cx - radius, cy - radius, cx + radius, cy + radius};
}

inline Box draw_square(Tensor& img, Real cx, Real cy, Real half, const synth_detail::Color& c) {
    const int H = img.dim(1), W = img.dim(2);
    for (int y = 0; y < H; ++y) {
        const Real py = static_cast<Real>(y) + Real(0.5);
        if (py < cy - half || py > cy + half) continue;
        for (int x = 0; x < W; ++x) {
            const Real px = static_cast<Real>(x) + Real(0.5);
            if (px >= cx - half && px <= cx + half) synth_detail::put_pixel(img, x, y, c);
        }
    }
    return {cx - half, cy - half, cx + half, cy + half};
}

/// Isosceles triangle, apex up, spanning extent x extent.
inline Box draw_triangle(Tensor& img, Real cx, Real cy, Real half, const synth_detail::Color& c) {
    const int H = img.dim(1), W = img.dim(2);
    for (int y = 0; y < H; ++y) {
        const Real py = static_cast<Real>(y) + Real(0.5);
        const Real t = (py - (cy - half)) / (2 * half);
        if (t < Real(0) || t > Real(1)) continue;
        const Real hw = t * half;
        for (int x = 0; x < W; ++x) {
            const Real px = static_cast<Real>(x) + Real(0.5);
            if (std::abs(px - cx) <= hw) synth_detail::put_pixel(img, x, y, c);
        }
    }
    return {cx - half, cy - half, cx + half, cy + half};
}

/// Renders one scene from the given stream. Boxes of distinct objects
/// overlap pairwise with IoU < 0.3; each object is retried up to 100 times
/// before the scene is declared unplaceable.
inline Scene render_scene(const DatasetSpec& spec, Rng& rng, std::string image_id) {
    const int H = spec.height, W = spec.width;
    Scene scene;
    scene.image_id = std::move(image_id);
    scene.image = Tensor({3, H, W});

    // textured background: earthy base plus a directional gradient
    const Real base_r = static_cast<Real>(rng.uniform(0.28, 0.38));
    const Real base_g = static_cast<Real>(rng.uniform(0.33, 0.48));
    const Real base_b = static_cast<Real>(rng.uniform(0.20, 0.30));
    const Real gx = static_cast<Real>(rng.uniform(-1.0, 1.0));
    const Real gy = static_cast<Real>(rng.uniform(-1.0, 1.0));
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const Real shade = Real(0.06) * (gx * static_cast<Real>(x) / W + gy * static_cast<Real>(y) / H);
            synth_detail::put_pixel(scene.image, x, y,
                                    {base_r + shade, base_g + shade, base_b + shade});
        }
    }

    const int count = rng.uniform_int(spec.objects_min, spec.objects_max);
    const Real min_extent = Real(8);
    const Real max_extent = static_cast<Real>(std::min(H, W)) / Real(3);
    for (int obj = 0; obj < count; ++obj) {
        const int cls = rng.uniform_int(1, 3);
        bool placed = false;
        for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
            const Real extent = static_cast<Real>(rng.uniform(min_extent, max_extent));
            const Real half = extent / 2;
            const Real cx = static_cast<Real>(rng.uniform(half, W - half));
            const Real cy = static_cast<Real>(rng.uniform(half, H - half));
            const Box candidate = {cx - half, cy - half, cx + half, cy + half};
            bool ok = true;
            for (const auto& [c, existing] : scene.annotations) {
                if (iou(candidate, existing) >= Real(0.3)) {
                    ok = false;
                    break;
                }
            }
            if (!ok) continue;
            synth_detail::Color color = synth_detail::kClassColors[cls - 1];
            color.r += static_cast<Real>(rng.uniform(-0.08, 0.08));
            color.g += static_cast<Real>(rng.uniform(-0.08, 0.08));
            color.b += static_cast<Real>(rng.uniform(-0.08, 0.08));
            Box tight;
            if (cls == 1) {
                tight = draw_disc(scene.image, cx, cy, half, color);
            } else if (cls == 2) {
                tight = draw_square(scene.image, cx, cy, half, color);
            } else {
                tight = draw_triangle(scene.image, cx, cy, half, color);
            }
            scene.annotations.emplace_back(cls, tight);
            placed = true;
        }
        if (!placed) {
            throw PlacementError("render_scene: could not place object " + std::to_string(obj + 1) +
                                 " of " + std::to_string(count) + " within 100 attempts");
        }
    }

    if (spec.noise_sigma > Real(0)) {
        for (std::int64_t i = 0; i < scene.image.numel(); ++i) {
            scene.image[i] += static_cast<Real>(rng.normal(0.0, static_cast<double>(spec.noise_sigma)));
        }
    }
    for (std::int64_t i = 0; i < scene.image.numel(); ++i) {
        scene.image[i] = std::clamp(scene.image[i], Real(0), Real(1));
    }
    return scene;
}

struct Dataset {
    DatasetSpec spec;
    std::vector<Scene> train, val, test;
};

namespace synth_detail {

inline constexpr const char* kSplitNames[3] = {"train", "val", "test"};

inline std::string scene_id(const char* split, int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%04d", split, index);
    return buf;
}

// per-scene stream: split tag in the high bits, index in the low bits
inline Rng scene_rng(const DatasetSpec& spec, int split_tag, int index) {
    return Rng(spec.seed).fork((static_cast<std::uint64_t>(split_tag) << 32) |
                               static_cast<std::uint64_t>(index));
}

inline std::string annotation_line(const std::string& image_id, int cls, const Box& b) {
    std::ostringstream os;
    os << image_id << ' ' << cls << ' ' << real_to_string(static_cast<double>(b.x1)) << ' '
       << real_to_string(static_cast<double>(b.y1)) << ' ' << real_to_string(static_cast<double>(b.x2))
       << ' ' << real_to_string(static_cast<double>(b.y2));
    return os.str();
}

}  // namespace synth_detail

inline Dataset generate_dataset(const DatasetSpec& spec) {
    spec.validate();
    Dataset ds;
    ds.spec = spec;
    const int counts[3] = {spec.n_train, spec.n_val, spec.n_test};
    std::vector<Scene>* splits[3] = {&ds.train, &ds.val, &ds.test};
    for (int s = 0; s < 3; ++s) {
        for (int i = 0; i < counts[s]; ++i) {
            Rng rng = synth_detail::scene_rng(spec, s, i);
            splits[s]->push_back(render_scene(spec, rng, synth_detail::scene_id(synth_detail::kSplitNames[s], i)));
        }
    }
    return ds;
}

/// Writes images (binary PPM), per-split annotation files and a manifest.
/// Returns the manifest text.
inline std::string write_dataset(const DatasetSpec& spec, const std::string& dir) {
    Dataset ds = generate_dataset(spec);
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "images", ec);
    if (ec) throw IoError("cannot create dataset directory " + dir + ": " + ec.message());

    std::ostringstream manifest;
    manifest << "# synthetic dataset manifest\n";
    manifest << "height = " << spec.height << "\n";
    manifest << "width = " << spec.width << "\n";
    manifest << "n_train = " << spec.n_train << "\n";
    manifest << "n_val = " << spec.n_val << "\n";
    manifest << "n_test = " << spec.n_test << "\n";
    manifest << "seed = " << spec.seed << "\n";
    manifest << "objects_min = " << spec.objects_min << "\n";
    manifest << "objects_max = " << spec.objects_max << "\n";
    manifest << "noise_sigma = " << real_to_string(static_cast<double>(spec.noise_sigma)) << "\n";

    const std::vector<Scene>* splits[3] = {&ds.train, &ds.val, &ds.test};
    for (int s = 0; s < 3; ++s) {
        const char* name = synth_detail::kSplitNames[s];
        std::ofstream ann(fs::path(dir) / (std::string(name) + ".txt"));
        if (!ann) throw IoError("cannot write annotations in " + dir);
        std::string ids;
        for (const Scene& scene : *splits[s]) {
            write_ppm((fs::path(dir) / "images" / (scene.image_id + ".ppm")).string(),
                      tensor_to_image(scene.image));
            for (const auto& [cls, box] : scene.annotations) {
                ann << synth_detail::annotation_line(scene.image_id, cls, box) << '\n';
            }
            if (!ids.empty()) ids += ' ';
            ids += scene.image_id;
        }
        manifest << "split." << name << " = " << ids << "\n";
    }
    std::ofstream mf(fs::path(dir) / "manifest.cfg");
    if (!mf) throw IoError("cannot write manifest in " + dir);
    mf << manifest.str();
    if (!mf) throw IoError("failed writing manifest in " + dir);
    return manifest.str();
}

inline std::map<std::string, GroundTruth> read_annotations(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open annotations: " + path);
    std::map<std::string, GroundTruth> out;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        std::istringstream ls(line);
        std::string id;
        int cls;
        double x1, y1, x2, y2;
        if (!(ls >> id >> cls >> x1 >> y1 >> x2 >> y2)) {
            throw ParseError(path + ": line " + std::to_string(line_no) +
                             ": expected 'image_id class_id x1 y1 x2 y2'");
        }
        out[id].emplace_back(cls, Box{static_cast<Real>(x1), static_cast<Real>(y1),
                                      static_cast<Real>(x2), static_cast<Real>(y2)});
    }
    return out;
}

inline Dataset read_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream mf(fs::path(dir) / "manifest.cfg");
    if (!mf) throw IoError("cannot open dataset manifest in " + dir);
    const auto pairs = parse_kv(mf, (fs::path(dir) / "manifest.cfg").string());

    Dataset ds;
    std::map<std::string, std::vector<std::string>> split_ids;
    for (const auto& [key, value] : pairs) {
        try {
            if (key == "height") ds.spec.height = std::stoi(value);
            else if (key == "width") ds.spec.width = std::stoi(value);
            else if (key == "n_train") ds.spec.n_train = std::stoi(value);
            else if (key == "n_val") ds.spec.n_val = std::stoi(value);
            else if (key == "n_test") ds.spec.n_test = std::stoi(value);
            else if (key == "seed") ds.spec.seed = std::stoull(value);
            else if (key == "objects_min") ds.spec.objects_min = std::stoi(value);
            else if (key == "objects_max") ds.spec.objects_max = std::stoi(value);
            else if (key == "noise_sigma") ds.spec.noise_sigma = static_cast<Real>(std::stod(value));
            else if (key.rfind("split.", 0) == 0) {
                for (const std::string& id : split(value, ' '))
                    if (!id.empty()) split_ids[key.substr(6)].push_back(id);
            } else {
                throw ParseError("unknown manifest key: " + key);
            }
        } catch (const ParseError&) {
            throw;
        } catch (const std::exception&) {
            throw ParseError("bad manifest value for " + key + ": " + value);
        }
    }

    std::vector<Scene>* splits[3] = {&ds.train, &ds.val, &ds.test};
    for (int s = 0; s < 3; ++s) {
        const char* name = synth_detail::kSplitNames[s];
        const auto ann = read_annotations((fs::path(dir) / (std::string(name) + ".txt")).string());
        for (const std::string& id : split_ids[name]) {
            Scene scene;
            scene.image_id = id;
            scene.image = image_to_tensor(read_ppm((fs::path(dir) / "images" / (id + ".ppm")).string()));
            auto it = ann.find(id);
            if (it != ann.end()) scene.annotations = it->second;
            splits[s]->push_back(std::move(scene));
        }
    }
    return ds;
}

}  // namespace psrd
