#include "core/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vsod {

namespace {

constexpr double kPi = 3.14159265358979323846;

enum class ShapeKind { Ellipse, Rectangle, Triangle };

struct ShapeSpec {
    ShapeKind kind = ShapeKind::Ellipse;
    double rx = 8.0, ry = 8.0;
    float color[3] = {0.5f, 0.5f, 0.5f};
};

struct Trajectory {
    double cx0 = 0.0, cy0 = 0.0;
    double vx = 0.0, vy = 0.0;       // px per frame
    double amp = 0.0, omega = 0.0, phase = 0.0;  // sinusoidal sway on y
};

struct Field {
    double ax, fx, fy, phase;
};

struct BackgroundModel {
    std::vector<Field> fields;
    float tint[3];
};

bool inside(const ShapeSpec& s, double cx, double cy, double px, double py) {
    const double dx = px - cx, dy = py - cy;
    switch (s.kind) {
        case ShapeKind::Ellipse: {
            const double nx = dx / s.rx, ny = dy / s.ry;
            return nx * nx + ny * ny <= 1.0;
        }
        case ShapeKind::Rectangle:
            return std::abs(dx) <= s.rx && std::abs(dy) <= s.ry;
        case ShapeKind::Triangle: {
            // isoceles: apex up at (cx, cy-ry), base at cy+ry
            if (dy < -s.ry || dy > s.ry) return false;
            const double half = s.rx * (dy + s.ry) / (2.0 * s.ry);
            return std::abs(dx) <= half;
        }
    }
    return false;
}

double background_luma(const BackgroundModel& bg, int x, int y, int w, int h) {
    double v = 0.5;
    for (const Field& f : bg.fields) {
        v += f.ax * std::cos(2.0 * kPi * (f.fx * double(x) / w + f.fy * double(y) / h) + f.phase);
    }
    return std::min(std::max(v, 0.05), 0.95);
}

std::pair<double, double> center_at(const Trajectory& tr, int t, int width, int height,
                                    double margin) {
    double cx = tr.cx0 + tr.vx * t;
    double cy = tr.cy0 + tr.vy * t + tr.amp * std::sin(tr.omega * t + tr.phase);
    // reflect off the walls so the shape stays visible
    const double lox = margin, hix = double(width - 1) - margin;
    const double loy = margin, hiy = double(height - 1) - margin;
    auto reflect = [](double v, double lo, double hi) {
        const double span = hi - lo;
        if (span <= 0.0) return (lo + hi) / 2.0;
        double u = std::fmod(v - lo, 2.0 * span);
        if (u < 0.0) u += 2.0 * span;
        return u <= span ? lo + u : hi - (u - span);
    };
    return {reflect(cx, lox, hix), reflect(cy, loy, hiy)};
}

ShapeSpec sample_shape(Rng& rng, int min_r, int max_r) {
    ShapeSpec s;
    const int k = rng.uniform_int(0, 2);
    s.kind = k == 0 ? ShapeKind::Ellipse : (k == 1 ? ShapeKind::Rectangle : ShapeKind::Triangle);
    s.rx = rng.uniform(min_r, max_r);
    s.ry = rng.uniform(min_r, max_r);
    for (auto& c : s.color) c = float(rng.uniform(0.0, 1.0));
    return s;
}

void pick_contrasting_color(ShapeSpec& s, const BackgroundModel& bg, double cx, double cy,
                            const SyntheticConfig& cfg, Rng& rng) {
    // mean background luminance in a box around the spawn position
    const int x0 = std::max(0, int(cx - s.rx)), x1 = std::min(cfg.width - 1, int(cx + s.rx));
    const int y0 = std::max(0, int(cy - s.ry)), y1 = std::min(cfg.height - 1, int(cy + s.ry));
    double mean_bg = 0.0;
    int count = 0;
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            mean_bg += background_luma(bg, x, y, cfg.width, cfg.height);
            ++count;
        }
    }
    mean_bg /= std::max(count, 1);

    for (int tries = 0; tries < 32; ++tries) {
        const double luma = (s.color[0] + s.color[1] + s.color[2]) / 3.0;
        if (std::abs(luma - mean_bg) >= cfg.min_contrast) return;
        for (auto& c : s.color) c = float(rng.uniform(0.0, 1.0));
    }
    // fall back to the opposite extreme
    const float v = mean_bg > 0.5 ? 0.08f : 0.92f;
    for (auto& c : s.color) c = float(rng.uniform(v - 0.05, v + 0.05));
}

} // namespace

std::string video_id_string(int index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%05d", index);
    return buf;
}

SyntheticVideo generate_video(const SyntheticConfig& cfg, int index) {
    if (cfg.width < 16 || cfg.height < 16) throw std::invalid_argument("generate_video: size too small");
    if (cfg.frames_per_video < 1) throw std::invalid_argument("generate_video: needs at least one frame");
    const int min_r = std::max(3, cfg.height / 12);
    const int max_r = std::max(min_r + 1, cfg.height / 5);
    if (max_r <= 0) throw std::invalid_argument("generate_video: shape radius collapses to zero");

    Rng rng = Rng(cfg.seed).fork(std::uint64_t(index) + 1);

    BackgroundModel bg;
    bg.fields.resize(std::size_t(std::max(cfg.background_fields, 0)));
    for (auto& f : bg.fields) {
        f.ax = rng.uniform(0.04, 0.14);
        f.fx = rng.uniform(0.3, 2.0);
        f.fy = rng.uniform(0.3, 2.0);
        f.phase = rng.uniform(0.0, 2.0 * kPi);
    }
    for (auto& t : bg.tint) t = float(rng.uniform(-0.06, 0.06));

    // salient shape + trajectory
    ShapeSpec salient = sample_shape(rng, min_r, max_r);
    Trajectory traj;
    const double margin = std::max(salient.rx, salient.ry) * 0.7;
    traj.cx0 = rng.uniform(margin + 2.0, cfg.width - margin - 3.0);
    traj.cy0 = rng.uniform(margin + 2.0, cfg.height - margin - 3.0);
    const double speed = rng.uniform(0.6, 2.2);
    const double dir = rng.uniform(0.0, 2.0 * kPi);
    traj.vx = speed * std::cos(dir);
    traj.vy = speed * std::sin(dir);
    if (rng.coin()) {  // sinusoidal variant
        traj.amp = rng.uniform(1.0, 3.0);
        traj.omega = rng.uniform(0.3, 0.9);
        traj.phase = rng.uniform(0.0, 2.0 * kPi);
    }
    pick_contrasting_color(salient, bg, traj.cx0, traj.cy0, cfg, rng);

    // static distractors, same appearance pool as the salient shape
    struct Distractor {
        ShapeSpec shape;
        double cx, cy;
    };
    std::vector<Distractor> distractors(std::size_t(std::max(cfg.distractors, 0)));
    for (auto& d : distractors) {
        d.shape = sample_shape(rng, min_r, max_r);
        const double m = std::max(d.shape.rx, d.shape.ry) * 0.7;
        d.cx = rng.uniform(m + 2.0, cfg.width - m - 3.0);
        d.cy = rng.uniform(m + 2.0, cfg.height - m - 3.0);
        pick_contrasting_color(d.shape, bg, d.cx, d.cy, cfg, rng);
    }

    SyntheticVideo video;
    video.id = video_id_string(index);
    video.has_shift = !distractors.empty() && rng.coin(cfg.shift_prob) && cfg.frames_per_video >= 4;
    if (video.has_shift) video.shift_frame = cfg.frames_per_video / 2;

    // after the shift the promoted distractor moves with its own trajectory
    Trajectory shift_traj;
    std::size_t promoted = 0;
    if (video.has_shift) {
        promoted = std::size_t(rng.uniform_int(0, int(distractors.size()) - 1));
        const double sp = rng.uniform(0.6, 2.2);
        const double sd = rng.uniform(0.0, 2.0 * kPi);
        shift_traj.vx = sp * std::cos(sd);
        shift_traj.vy = sp * std::sin(sd);
        shift_traj.cx0 = distractors[promoted].cx;
        shift_traj.cy0 = distractors[promoted].cy;
    }

    const double traj_margin = std::max(salient.rx, salient.ry) * 0.7;
    std::pair<double, double> frozen{0.0, 0.0};

    for (int t = 0; t < cfg.frames_per_video; ++t) {
        Image frame(3, cfg.height, cfg.width);
        Image mask(1, cfg.height, cfg.width);

        const bool shifted = video.has_shift && t >= video.shift_frame;
        auto pos_a = center_at(traj, t, cfg.width, cfg.height, traj_margin);
        if (video.has_shift && t == video.shift_frame) frozen = pos_a;
        if (shifted) pos_a = frozen;

        std::pair<double, double> pos_b{0.0, 0.0};
        if (video.has_shift) {
            const auto& pd = distractors[promoted];
            const double m = std::max(pd.shape.rx, pd.shape.ry) * 0.7;
            if (shifted) {
                pos_b = center_at(shift_traj, t - video.shift_frame, cfg.width, cfg.height, m);
            } else {
                pos_b = {pd.cx, pd.cy};
            }
        }

        // the currently salient shape and its support define the mask
        const ShapeSpec& sal_shape = shifted ? distractors[promoted].shape : salient;
        const auto sal_pos = shifted ? pos_b : pos_a;
        video.centers.push_back(sal_pos);

        for (int y = 0; y < cfg.height; ++y) {
            for (int x = 0; x < cfg.width; ++x) {
                const double px = x + 0.5, py = y + 0.5;
                const double luma = background_luma(bg, x, y, cfg.width, cfg.height);
                float rgb[3];
                for (int c = 0; c < 3; ++c) {
                    rgb[c] = float(std::min(std::max(luma + bg.tint[c], 0.0), 1.0));
                }
                // non-salient shapes first, currently salient on top
                for (std::size_t di = 0; di < distractors.size(); ++di) {
                    if (shifted && di == promoted) continue;
                    const auto& d = distractors[di];
                    if (inside(d.shape, d.cx, d.cy, px, py)) {
                        for (int c = 0; c < 3; ++c) rgb[c] = d.shape.color[c];
                    }
                }
                if (video.has_shift && shifted) {
                    // old salient shape stays in the scene, frozen, below the new one
                    if (inside(salient, pos_a.first, pos_a.second, px, py)) {
                        for (int c = 0; c < 3; ++c) rgb[c] = salient.color[c];
                    }
                }
                bool on = inside(sal_shape, sal_pos.first, sal_pos.second, px, py);
                if (on) {
                    for (int c = 0; c < 3; ++c) rgb[c] = sal_shape.color[c];
                }
                for (int c = 0; c < 3; ++c) {
                    const double noisy = double(rgb[c]) + rng.uniform(-cfg.noise_amplitude, cfg.noise_amplitude);
                    frame.at(c, y, x) = float(std::min(std::max(noisy, 0.0), 1.0));
                }
                mask.at(0, y, x) = on ? 1.0f : 0.0f;
            }
        }

        video.frames.push_back(std::move(frame));
        video.masks.push_back(std::move(mask));
    }
    return video;
}

void generate_dataset(const SyntheticConfig& cfg, const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    for (int v = 0; v < cfg.videos; ++v) {
        SyntheticVideo video = generate_video(cfg, v);
        const fs::path vdir = out_dir / video.id;
        fs::create_directories(vdir / "frames");
        fs::create_directories(vdir / "masks");
        for (int t = 0; t < int(video.frames.size()); ++t) {
            char name[16];
            std::snprintf(name, sizeof name, "%05d", t + 1);
            write_ppm(vdir / "frames" / (std::string(name) + ".ppm"), video.frames[std::size_t(t)]);
            write_mask_pgm(vdir / "masks" / (std::string(name) + ".pgm"), video.masks[std::size_t(t)]);
        }
    }
}

} // namespace vsod
