#include "refocs/glyphs.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "refocs/errors.hpp"
#include "refocs/rng.hpp"

namespace refocs {

namespace {

struct Vec2 {
    double x, y;
};

struct Rgb {
    double r, g, b;
};

constexpr std::array<Rgb, 8> kPalette{{{0.90, 0.12, 0.12},
                                       {0.10, 0.75, 0.15},
                                       {0.15, 0.32, 0.95},
                                       {0.95, 0.80, 0.10},
                                       {0.85, 0.15, 0.85},
                                       {0.10, 0.80, 0.80},
                                       {0.95, 0.52, 0.10},
                                       {0.92, 0.92, 0.92}}};

double sd_circle(Vec2 p, double r) { return std::hypot(p.x, p.y) - r; }

double sd_box(Vec2 p, double rx, double ry) {
    return std::max(std::abs(p.x) - rx, std::abs(p.y) - ry);
}

double sd_diamond(Vec2 p, double r) { return std::abs(p.x) + std::abs(p.y) - r; }

double sd_triangle(Vec2 p, double r, bool up) {
    const double y = up ? p.y : -p.y;
    // equilateral-ish triangle from three half planes
    const double a = 0.866 * p.x + 0.5 * y;
    const double b = -0.866 * p.x + 0.5 * y;
    const double c = -y;
    return std::max({a, b, c}) - 0.55 * r;
}

double sd_hexagon(Vec2 p, double r) {
    const double qx = std::abs(p.x), qy = std::abs(p.y);
    return std::max(qx * 0.866025 + qy * 0.5, qy) - r;
}

double sd_ring(Vec2 p, double r, double half_width) {
    return std::abs(std::hypot(p.x, p.y) - r) - half_width;
}

double sd_plus(Vec2 p, double r, double bar) {
    return std::min(sd_box(p, r, bar), sd_box(p, bar, r));
}

double outer_sdf(int shape, Vec2 p) {
    constexpr double r = 0.72;
    switch (shape) {
        case 0: return sd_circle(p, r);
        case 1: return sd_box(p, r * 0.88, r * 0.88);
        case 2: return sd_diamond(p, r * 1.12);
        case 3: return sd_triangle(p, r * 1.5, true);
        case 4: return sd_triangle(p, r * 1.5, false);
        case 5: return sd_hexagon(p, r * 0.92);
        case 6: return sd_ring(p, r * 0.78, r * 0.30);
        default: return sd_plus(p, r, r * 0.36);
    }
}

double mark_sdf(int mark, Vec2 p) {
    switch (mark) {
        case 0: return 1e9;  // no mark
        case 1: return sd_circle(p, 0.16);
        case 2: return sd_box(p, 0.34, 0.10);
        case 3: return sd_box(p, 0.10, 0.34);
        case 4: {
            const double inv = 0.7071067811865476;
            const Vec2 q{inv * (p.x + p.y), inv * (p.y - p.x)};
            return sd_plus(q, 0.34, 0.09);
        }
        case 5: return sd_box(p, 0.20, 0.20);
        case 6: return std::min(sd_circle({p.x - 0.22, p.y}, 0.12),
                                sd_circle({p.x + 0.22, p.y}, 0.12));
        default: return sd_ring(p, 0.26, 0.08);
    }
}

double coverage(double d, double aa) { return std::clamp(0.5 - d / aa, 0.0, 1.0); }

// Renders glyph `cls` into [3,h,w]. The transform maps pixel coordinates back
// into glyph space, so rotation/translation cost no resampling pass.
Tensor render_glyph(int cls, int h, int w, double theta, double tx, double ty, Rgb bg,
                    double brightness, double contrast, Rng* noise_rng, double noise_sigma) {
    const int shape = cls / 8;
    const int mark = cls % 8;
    const Rgb fg = kPalette[static_cast<std::size_t>((cls * 3 + 1) % 8)];
    const Rgb mk{1.0 - fg.r, 1.0 - fg.g, 1.0 - fg.b};
    const double aa = 2.0 / std::min(h, w);
    const double ct = std::cos(theta), st = std::sin(theta);

    Tensor out({3, h, w});
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            const double px = (j + 0.5) / w * 2.0 - 1.0 - tx;
            const double py = (i + 0.5) / h * 2.0 - 1.0 - ty;
            const Vec2 q{ct * px + st * py, -st * px + ct * py};
            const double a_outer = coverage(outer_sdf(shape, q), aa);
            const double a_mark = coverage(mark_sdf(mark, q), aa) * a_outer;
            double c[3] = {bg.r, bg.g, bg.b};
            const double f[3] = {fg.r, fg.g, fg.b};
            const double m[3] = {mk.r, mk.g, mk.b};
            for (int ch = 0; ch < 3; ++ch) {
                double v = c[ch] * (1.0 - a_outer) + f[ch] * a_outer;
                v = v * (1.0 - a_mark) + m[ch] * a_mark;
                v = (v - 0.5) * contrast + 0.5 + brightness;
                if (noise_rng) v += noise_rng->normal() * noise_sigma;
                out[(static_cast<std::size_t>(ch) * h + i) * w + j] = std::clamp(v, 0.0, 1.0);
            }
        }
    }
    return out;
}

Rgb base_background(int cls) {
    const Rgb tint = kPalette[static_cast<std::size_t>((cls * 5 + 2) % 8)];
    return {0.13 + 0.10 * tint.r, 0.13 + 0.10 * tint.g, 0.13 + 0.10 * tint.b};
}

}  // namespace

DatasetManifest generate_glyph_dataset(int num_classes, int samples_per_class,
                                       std::pair<int, int> image_size, std::uint64_t seed) {
    if (num_classes < 2) throw ConfigError("glyph dataset needs at least 2 classes");
    if (samples_per_class < 1) throw ConfigError("glyph dataset needs at least 1 sample per class");
    if (num_classes > kGlyphVocabularySize) {
        throw ConfigError("glyph vocabulary holds " + std::to_string(kGlyphVocabularySize) +
                          " classes, requested " + std::to_string(num_classes));
    }
    const auto [h, w] = image_size;
    if (h < 8 || w < 8) throw ConfigError("glyph images must be at least 8x8");

    DatasetManifest man("glyphs", h, w);
    constexpr double kDeg15 = 15.0 * 3.14159265358979323846 / 180.0;
    for (int c = 0; c < num_classes; ++c) {
        const Rgb bg = base_background(c);
        for (int k = 0; k < samples_per_class; ++k) {
            Rng rng(mix_keys(seed, static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(k)));
            const double theta = rng.uniform(-kDeg15, kDeg15);
            const double tx = rng.uniform(-0.2, 0.2);  // +-10% of width in [-1,1] coords
            const double ty = rng.uniform(-0.2, 0.2);
            const double brightness = rng.uniform(-0.12, 0.12);
            const double contrast = rng.uniform(0.82, 1.18);
            const Rgb sbg{std::clamp(bg.r + rng.uniform(-0.06, 0.06), 0.0, 1.0),
                          std::clamp(bg.g + rng.uniform(-0.06, 0.06), 0.0, 1.0),
                          std::clamp(bg.b + rng.uniform(-0.06, 0.06), 0.0, 1.0)};
            Tensor pixels =
                render_glyph(c, h, w, theta, tx, ty, sbg, brightness, contrast, &rng, 0.03);
            man.add_sample({std::move(pixels), c, static_cast<std::int64_t>(c) * 1000000 + k});
        }
        Tensor clean = render_glyph(c, h, w, 0.0, 0.0, 0.0, bg, 0.0, 1.0, nullptr, 0.0);
        man.attach_exemplar({std::move(clean), c, Provenance::canonical});
    }
    return man;
}

}  // namespace refocs
