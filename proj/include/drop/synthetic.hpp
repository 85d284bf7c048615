#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "drop/image_io.hpp"
#include "drop/rng.hpp"
#include "drop/tensor.hpp"

namespace drop {

// ---------------------------------------------------------------------------
// Procedural pedestrian dataset: colored stick figures on textured
// backgrounds, rendered under two virtual cameras, with optional lower-body
// occluders and pixel-accurate part masks. Everything is a deterministic
// function of the seed.
// ---------------------------------------------------------------------------

enum class OccluderKind { Box, SecondPerson };

inline std::string occluder_name(OccluderKind k) {
    return k == OccluderKind::Box ? "box" : "second_person";
}
inline OccluderKind occluder_from_name(const std::string& s) {
    if (s == "box") return OccluderKind::Box;
    if (s == "second_person") return OccluderKind::SecondPerson;
    throw ConfigError("unknown occluder kind: " + s);
}

struct SyntheticConfig {
    int n_identities = 20;
    int images_per_identity = 40;
    int height = 64;
    int width = 32;
    int k_parts = 8;  // 8 = full taxonomy, 5 = grouped limbs
    double occlusion_prob = 0.3;
    OccluderKind occluder = OccluderKind::Box;
    bool occlude_queries = true;  // render every query image occluded
    double train_fraction = 0.5;
    double query_fraction = 0.25;  // remainder becomes the gallery
    double color_separation = 0.35;
    uint64_t seed = 1;

    void validate() const {
        check_config(n_identities >= 2, "data: need at least 2 identities");
        check_config(images_per_identity >= 4, "data: need at least 4 images per identity");
        check_config(height >= 32 && width >= 16, "data: image too small to draw a figure");
        check_config(k_parts == 5 || k_parts == 8, "data: k_parts must be 5 or 8");
        check_config(occlusion_prob >= 0.0 && occlusion_prob <= 1.0,
                     "data: occlusion_prob must be in [0,1]");
        check_config(train_fraction > 0.0 && query_fraction > 0.0 &&
                         train_fraction + query_fraction < 1.0,
                     "data: split fractions must be positive and leave room for a gallery");
        check_config(color_separation > 0.0 && color_separation < 1.2,
                     "data: color_separation out of range");
    }
};

// Label ids of the eight atomic body shapes under the current taxonomy.
// With 8 parts: head, torso, right arm, left arm, right leg, left leg,
// right foot, left foot (1-based; 0 is background). With 5 parts the
// left/right pairs collapse: head, torso, arms, legs, feet.
struct PartLabels {
    int head, torso, arm_r, arm_l, leg_r, leg_l, foot_r, foot_l;
};

inline PartLabels part_labels(int k_parts) {
    check_config(k_parts == 5 || k_parts == 8, "data: k_parts must be 5 or 8");
    if (k_parts == 8) return {1, 2, 3, 4, 5, 6, 7, 8};
    return {1, 2, 3, 3, 4, 4, 5, 5};
}

// Horizontal mirroring swaps left/right part labels; with the grouped
// taxonomy it is the identity map. map[0] == 0 always.
inline std::vector<int> flip_label_map(int k_parts) {
    check_config(k_parts == 5 || k_parts == 8, "data: k_parts must be 5 or 8");
    if (k_parts == 5) return {0, 1, 2, 3, 4, 5};
    return {0, 1, 2, 4, 3, 6, 5, 8, 7};
}

struct IdentityAppearance {
    std::vector<std::array<double, 3>> part_colors;  // [k_parts] entries
    double height_scale = 1.0;                       // 0.92 .. 1.0
    double width_scale = 1.0;                        // 0.82 .. 1.0
};

// Largest per-part color distance between two appearances; identities must
// differ by at least `color_separation` in some part.
inline double appearance_distance(const IdentityAppearance& a, const IdentityAppearance& b) {
    check_config(a.part_colors.size() == b.part_colors.size(), "data: taxonomy mismatch");
    double best = 0.0;
    for (size_t k = 0; k < a.part_colors.size(); ++k) {
        double s = 0.0;
        for (int c = 0; c < 3; ++c) {
            const double d = a.part_colors[k][(size_t)c] - b.part_colors[k][(size_t)c];
            s += d * d;
        }
        best = std::max(best, std::sqrt(s));
    }
    return best;
}

inline IdentityAppearance random_appearance(int k_parts, Rng& g) {
    IdentityAppearance ap;
    ap.part_colors.resize((size_t)k_parts);
    for (auto& c : ap.part_colors)
        for (int i = 0; i < 3; ++i) c[(size_t)i] = uniform(g, 0.15, 0.95);
    ap.height_scale = uniform(g, 0.92, 1.0);
    ap.width_scale = uniform(g, 0.82, 1.0);
    return ap;
}

// Rejection-sample appearances until all pairs are separated; a bounded
// attempt budget turns an over-constrained configuration into an error.
inline std::vector<IdentityAppearance> generate_identities(const SyntheticConfig& cfg) {
    std::vector<IdentityAppearance> ids;
    Rng g(split_seed(cfg.seed, 0xA11CE5));
    const int budget = 10000;
    int attempts = 0;
    while ((int)ids.size() < cfg.n_identities) {
        check_config(attempts++ < budget,
                     "data: could not place " + std::to_string(cfg.n_identities) +
                         " identities with color separation " +
                         std::to_string(cfg.color_separation) + " within the attempt budget");
        IdentityAppearance cand = random_appearance(cfg.k_parts, g);
        bool ok = true;
        for (const auto& prev : ids)
            if (appearance_distance(prev, cand) < cfg.color_separation) {
                ok = false;
                break;
            }
        if (ok) ids.push_back(std::move(cand));
    }
    return ids;
}

struct Sample {
    Tensor image;  // [3,H,W] in [0,1]
    Tensor mask;   // [H,W] labels in 0..k_parts
    int identity = 0;
    int camera = 0;
    bool occluded = false;
    std::string split;  // "train" | "query" | "gallery"
};

namespace detail {

struct FigureFrame {
    double dx = 0.0, dy = 0.0;       // whole-body jitter, in pixels
    double hs = 1.0, ws = 1.0;       // identity body proportions
};

// Paint one figure. Rectangles are specified in fractional coordinates and
// scaled about the figure's vertical axis / feet line so that proportions
// shrink the silhouette without moving it off-frame.
inline void draw_figure(Tensor& image, Tensor& mask, const IdentityAppearance& ap,
                        const PartLabels& L, const FigureFrame& f, int H, int W) {
    auto paint = [&](double y0, double y1, double x0, double x1, int label) {
        const auto& col = ap.part_colors[(size_t)(label - 1)];
        // proportion scaling about x=0.5 and y=1.0 (figures stand on the
        // bottom line, so height scaling pulls the head down, not any limb
        // through the floor)
        auto sx = [&](double x) { return 0.5 + (x - 0.5) * f.ws; };
        auto sy = [&](double y) { return 1.0 + (y - 1.0) * f.hs; };
        const int py0 = std::max(0, (int)std::floor(sy(y0) * H + f.dy));
        const int py1 = std::min(H, (int)std::ceil(sy(y1) * H + f.dy));
        const int px0 = std::max(0, (int)std::floor(sx(x0) * W + f.dx));
        const int px1 = std::min(W, (int)std::ceil(sx(x1) * W + f.dx));
        for (int y = py0; y < py1; ++y)
            for (int x = px0; x < px1; ++x) {
                const double cy = (y + 0.5 - f.dy) / H;
                const double cx = (x + 0.5 - f.dx) / W;
                if (cy < sy(y0) || cy >= sy(y1) || cx < sx(x0) || cx >= sx(x1)) continue;
                for (int c = 0; c < 3; ++c) image.at(c, y, x) = col[(size_t)c];
                mask.at(y, x) = (double)label;
            }
    };
    auto ellipse = [&](double cy0, double cx0, double ry, double rx, int label) {
        const auto& col = ap.part_colors[(size_t)(label - 1)];
        auto syc = [&](double y) { return 1.0 + (y - 1.0) * f.hs; };
        const double cy = syc(cy0) * H + f.dy, cx = 0.5 * W + (cx0 - 0.5) * W * f.ws + f.dx;
        const double ay = ry * H * f.hs, ax = rx * W * f.ws;
        const int y0 = std::max(0, (int)std::floor(cy - ay)), y1 = std::min(H, (int)std::ceil(cy + ay));
        const int x0 = std::max(0, (int)std::floor(cx - ax)), x1 = std::min(W, (int)std::ceil(cx + ax));
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) {
                const double ny = (y + 0.5 - cy) / ay, nx = (x + 0.5 - cx) / ax;
                if (ny * ny + nx * nx > 1.0) continue;
                for (int c = 0; c < 3; ++c) image.at(c, y, x) = col[(size_t)c];
                mask.at(y, x) = (double)label;
            }
    };

    paint(0.20, 0.52, 0.30, 0.70, L.torso);
    paint(0.21, 0.50, 0.12, 0.26, L.arm_r);
    paint(0.21, 0.50, 0.74, 0.88, L.arm_l);
    paint(0.54, 0.86, 0.32, 0.47, L.leg_r);
    paint(0.54, 0.86, 0.53, 0.68, L.leg_l);
    paint(0.88, 0.97, 0.28, 0.47, L.foot_r);
    paint(0.88, 0.97, 0.53, 0.72, L.foot_l);
    ellipse(0.115, 0.5, 0.075, 0.16, L.head);
}

}  // namespace detail

// Figure + background + (optionally) occluder, before any camera transform
// or sensor noise. Pixels labeled part k in the mask carry exactly the
// identity's part-k color here; occluded pixels are relabeled background.
inline Sample render_core(const IdentityAppearance& ap, const SyntheticConfig& cfg, Rng& g,
                          bool occlude) {
    const int H = cfg.height, W = cfg.width;
    Sample s;
    s.image = Tensor({3, H, W});
    s.mask = Tensor({H, W});
    s.occluded = occlude;

    // background: vertical gray gradient with mild per-pixel speckle
    const double g0 = uniform(g, 0.50, 0.60), g1 = uniform(g, 0.68, 0.78);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double base = g0 + (g1 - g0) * y / (H - 1);
            for (int c = 0; c < 3; ++c)
                s.image.at(c, y, x) = std::clamp(base + uniform(g, -0.03, 0.03), 0.0, 1.0);
        }

    detail::FigureFrame f;
    f.dx = uniform(g, -0.04, 0.04) * W;
    f.dy = uniform(g, -0.015, 0.015) * H;
    f.hs = ap.height_scale;
    f.ws = ap.width_scale;
    detail::draw_figure(s.image, s.mask, ap, part_labels(cfg.k_parts), f, H, W);

    if (occlude) {
        if (cfg.occluder == OccluderKind::Box) {
            // Full-width box from mid-thigh height to the bottom edge: the
            // legs and feet are always fully covered.
            const int y0 = (int)std::floor(uniform(g, 0.46, 0.51) * H);
            const double r = uniform(g, 0.35, 0.8), gg = uniform(g, 0.35, 0.8),
                         b = uniform(g, 0.35, 0.8);
            for (int y = y0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const double band = 0.03 * std::sin(2.0 * 3.14159265358979 * y / 7.0);
                    s.image.at(0, y, x) = std::clamp(r + band, 0.0, 1.0);
                    s.image.at(1, y, x) = std::clamp(gg + band, 0.0, 1.0);
                    s.image.at(2, y, x) = std::clamp(b + band, 0.0, 1.0);
                    s.mask.at(y, x) = 0.0;
                }
        } else {
            // A second, unrelated figure walks through the lower half of the
            // frame; its pixels are labeled background.
            IdentityAppearance other = random_appearance(cfg.k_parts, g);
            Tensor oimg({3, H, W}), omask({H, W});
            detail::FigureFrame of;
            of.dx = uniform(g, -0.12, 0.12) * W;
            of.dy = 0.30 * H;
            of.hs = 0.95;
            of.ws = 1.0;
            detail::draw_figure(oimg, omask, other, part_labels(cfg.k_parts), of, H, W);
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    if (omask.at(y, x) != 0.0) {
                        for (int c = 0; c < 3; ++c) s.image.at(c, y, x) = oimg.at(c, y, x);
                        s.mask.at(y, x) = 0.0;
                    }
        }
    }
    return s;
}

// Per-camera photometric transform plus sensor noise. Camera 0 is neutral;
// camera 1 is brighter with lower contrast and a warm channel bias.
inline void apply_camera(Tensor& image, int camera, Rng& g) {
    check_config(camera == 0 || camera == 1, "data: camera must be 0 or 1");
    const double contrast = camera == 0 ? 1.0 : 0.82;
    const double brightness = camera == 0 ? 0.0 : 0.07;
    const double gain[3] = {camera == 0 ? 1.0 : 1.05, 1.0, camera == 0 ? 1.0 : 0.93};
    const int H = image.dim(1), W = image.dim(2);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double v = image.at(c, y, x);
                v = gain[c] * (contrast * (v - 0.5) + 0.5 + brightness);
                v += uniform(g, -0.01, 0.01);
                image.at(c, y, x) = std::clamp(v, 0.0, 1.0);
            }
}

struct Dataset {
    SyntheticConfig cfg;
    std::vector<Sample> samples;
    std::vector<int> train_indices, query_indices, gallery_indices;

    const std::vector<int>& split_indices(const std::string& split) const {
        if (split == "train") return train_indices;
        if (split == "query") return query_indices;
        if (split == "gallery") return gallery_indices;
        throw ConfigError("unknown split: " + split);
    }
};

inline Dataset generate_dataset(const SyntheticConfig& cfg) {
    cfg.validate();
    Dataset ds;
    ds.cfg = cfg;
    auto identities = generate_identities(cfg);

    const int per = cfg.images_per_identity;
    const int train_n = (int)std::lround(cfg.train_fraction * per);
    const int query_n = (int)std::lround(cfg.query_fraction * per);
    check_config(train_n >= 2 && query_n >= 1 && per - train_n - query_n >= 2,
                 "data: split fractions leave too few images per identity");

    for (int id = 0; id < cfg.n_identities; ++id) {
        for (int j = 0; j < per; ++j) {
            const uint64_t tag = 0xD5000000ULL + (uint64_t)id * 1000003ULL + (uint64_t)j;
            Rng g(split_seed(cfg.seed, tag));
            Sample s;
            const std::string split =
                j < train_n ? "train" : (j < train_n + query_n ? "query" : "gallery");
            bool occlude;
            const double coin = uniform(g, 0.0, 1.0);  // always drawn, keeps streams aligned
            if (split == "gallery")
                occlude = false;
            else if (split == "query" && cfg.occlude_queries)
                occlude = true;
            else
                occlude = coin < cfg.occlusion_prob;
            s = render_core(identities[(size_t)id], cfg, g, occlude);
            s.identity = id;
            s.camera = j % 2;
            s.split = split;
            apply_camera(s.image, s.camera, g);
            const int index = (int)ds.samples.size();
            if (split == "train")
                ds.train_indices.push_back(index);
            else if (split == "query")
                ds.query_indices.push_back(index);
            else
                ds.gallery_indices.push_back(index);
            ds.samples.push_back(std::move(s));
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Training-time augmentation.
// ---------------------------------------------------------------------------
struct AugmentConfig {
    double flip_prob = 0.5;
    int pad = 2;               // pad-then-crop translation radius (0 disables)
    double erase_prob = 0.3;   // random erasing; erased mask pixels -> background
};

inline Sample flip_sample(const Sample& s, int k_parts) {
    Sample out = s;
    const int H = s.image.dim(1), W = s.image.dim(2);
    const auto map = flip_label_map(k_parts);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            for (int c = 0; c < 3; ++c) out.image.at(c, y, x) = s.image.at(c, y, W - 1 - x);
            const int lbl = (int)s.mask.at(y, W - 1 - x);
            check_config(lbl >= 0 && lbl < (int)map.size(), "flip: label out of range");
            out.mask.at(y, x) = (double)map[(size_t)lbl];
        }
    return out;
}

inline Sample augment_sample(const Sample& s, const AugmentConfig& aug, int k_parts, Rng& g) {
    Sample out = s;
    if (aug.flip_prob > 0.0 && uniform(g, 0.0, 1.0) < aug.flip_prob)
        out = flip_sample(out, k_parts);
    if (aug.pad > 0) {
        const int H = out.image.dim(1), W = out.image.dim(2), p = aug.pad;
        const int oy = uniform_int(g, -p, p), ox = uniform_int(g, -p, p);
        Tensor img({3, H, W}), msk({H, W});
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const int sy = std::clamp(y + oy, 0, H - 1), sx = std::clamp(x + ox, 0, W - 1);
                for (int c = 0; c < 3; ++c) img.at(c, y, x) = out.image.at(c, sy, sx);
                // translated-out rows/cols replicate the border pixel for the
                // image but are background in the mask to avoid label smearing
                msk.at(y, x) = (y + oy == sy && x + ox == sx) ? out.mask.at(sy, sx) : 0.0;
            }
        out.image = std::move(img);
        out.mask = std::move(msk);
    }
    if (aug.erase_prob > 0.0 && uniform(g, 0.0, 1.0) < aug.erase_prob) {
        const int H = out.image.dim(1), W = out.image.dim(2);
        const int eh = uniform_int(g, H / 10, H / 4), ew = uniform_int(g, W / 5, W / 2);
        const int y0 = uniform_int(g, 0, H - eh), x0 = uniform_int(g, 0, W - ew);
        for (int y = y0; y < y0 + eh; ++y)
            for (int x = x0; x < x0 + ew; ++x) {
                for (int c = 0; c < 3; ++c) out.image.at(c, y, x) = uniform(g, 0.0, 1.0);
                out.mask.at(y, x) = 0.0;
            }
    }
    return out;
}

// Majority-vote label downsampling by an integer factor; ties pick the
// smaller label so background wins against any single part.
inline Tensor downsample_mask_majority(const Tensor& mask, int factor) {
    check_config(mask.ndim() == 2, "mask downsample: mask must be [H,W]");
    check_config(factor >= 1, "mask downsample: factor must be >= 1");
    const int H = mask.dim(0), W = mask.dim(1);
    check_config(H % factor == 0 && W % factor == 0,
                 "mask downsample: dims not divisible by factor");
    const int OH = H / factor, OW = W / factor;
    Tensor out({OH, OW});
    std::vector<int> counts;
    for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
            counts.assign(256, 0);
            int max_label = 0;
            for (int dy = 0; dy < factor; ++dy)
                for (int dx = 0; dx < factor; ++dx) {
                    const int lbl = (int)mask.at(oy * factor + dy, ox * factor + dx);
                    check_config(lbl >= 0 && lbl < 256, "mask downsample: label out of range");
                    ++counts[(size_t)lbl];
                    max_label = std::max(max_label, lbl);
                }
            int best = 0;
            for (int lbl = 0; lbl <= max_label; ++lbl)
                if (counts[(size_t)lbl] > counts[(size_t)best]) best = lbl;
            out.at(oy, ox) = (double)best;
        }
    return out;
}

// ---------------------------------------------------------------------------
// On-disk format: images/NNNNNN.ppm, masks/NNNNNN.pgm, manifest.json.
// ---------------------------------------------------------------------------
namespace detail {
inline std::string sample_stem(int index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06d", index);
    return buf;
}
}  // namespace detail

inline void write_dataset(const Dataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "masks");

    nlohmann::ordered_json manifest;
    manifest["format"] = "drop-dataset";
    manifest["version"] = 1;
    manifest["seed"] = ds.cfg.seed;
    manifest["height"] = ds.cfg.height;
    manifest["width"] = ds.cfg.width;
    manifest["k_parts"] = ds.cfg.k_parts;
    manifest["n_identities"] = ds.cfg.n_identities;
    manifest["images_per_identity"] = ds.cfg.images_per_identity;
    manifest["occlusion_prob"] = ds.cfg.occlusion_prob;
    manifest["occluder"] = occluder_name(ds.cfg.occluder);
    manifest["occlude_queries"] = ds.cfg.occlude_queries;
    manifest["train_fraction"] = ds.cfg.train_fraction;
    manifest["query_fraction"] = ds.cfg.query_fraction;
    manifest["color_separation"] = ds.cfg.color_separation;
    manifest["samples"] = nlohmann::ordered_json::array();

    for (size_t i = 0; i < ds.samples.size(); ++i) {
        const Sample& s = ds.samples[i];
        const std::string stem = detail::sample_stem((int)i);
        const std::string img_rel = "images/" + stem + ".ppm";
        const std::string msk_rel = "masks/" + stem + ".pgm";
        write_ppm((fs::path(dir) / img_rel).string(), s.image);
        write_pgm((fs::path(dir) / msk_rel).string(), s.mask);
        nlohmann::ordered_json row;
        row["index"] = i;
        row["identity"] = s.identity;
        row["camera"] = s.camera;
        row["split"] = s.split;
        row["occluded"] = s.occluded;
        row["image"] = img_rel;
        row["mask"] = msk_rel;
        manifest["samples"].push_back(std::move(row));
    }
    std::ofstream out((fs::path(dir) / "manifest.json").string());
    check_io(out.good(), "dataset: cannot write manifest in " + dir);
    out << manifest.dump(2) << "\n";
    check_io(out.good(), "dataset: manifest write failed in " + dir);
}

inline Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream in((fs::path(dir) / "manifest.json").string());
    check_io(in.good(), "dataset: cannot open manifest in " + dir);
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError("dataset: manifest parse error: " + std::string(e.what()));
    }
    check_io(manifest.value("format", "") == "drop-dataset", "dataset: wrong manifest format");

    Dataset ds;
    ds.cfg.seed = manifest.at("seed").get<uint64_t>();
    ds.cfg.height = manifest.at("height").get<int>();
    ds.cfg.width = manifest.at("width").get<int>();
    ds.cfg.k_parts = manifest.at("k_parts").get<int>();
    ds.cfg.n_identities = manifest.at("n_identities").get<int>();
    ds.cfg.images_per_identity = manifest.at("images_per_identity").get<int>();
    ds.cfg.occlusion_prob = manifest.at("occlusion_prob").get<double>();
    ds.cfg.occluder = occluder_from_name(manifest.at("occluder").get<std::string>());
    ds.cfg.occlude_queries = manifest.at("occlude_queries").get<bool>();
    ds.cfg.train_fraction = manifest.at("train_fraction").get<double>();
    ds.cfg.query_fraction = manifest.at("query_fraction").get<double>();
    ds.cfg.color_separation = manifest.at("color_separation").get<double>();

    for (const auto& row : manifest.at("samples")) {
        Sample s;
        s.identity = row.at("identity").get<int>();
        s.camera = row.at("camera").get<int>();
        s.split = row.at("split").get<std::string>();
        s.occluded = row.at("occluded").get<bool>();
        s.image = read_ppm((fs::path(dir) / row.at("image").get<std::string>()).string());
        s.mask = read_pgm((fs::path(dir) / row.at("mask").get<std::string>()).string());
        check_io(s.image.dim(1) == ds.cfg.height && s.image.dim(2) == ds.cfg.width,
                 "dataset: image size disagrees with manifest");
        const int index = (int)ds.samples.size();
        if (s.split == "train")
            ds.train_indices.push_back(index);
        else if (s.split == "query")
            ds.query_indices.push_back(index);
        else if (s.split == "gallery")
            ds.gallery_indices.push_back(index);
        else
            throw IoError("dataset: unknown split in manifest: " + s.split);
        ds.samples.push_back(std::move(s));
    }
    check_io(!ds.samples.empty(), "dataset: manifest lists no samples");
    return ds;
}

}  // namespace drop
