#include "mpa/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mpa {

const char* texture_name(TextureKind t) {
    switch (t) {
        case TextureKind::flat: return "flat";
        case TextureKind::perlin: return "perlin";
        case TextureKind::stripes: return "stripes";
    }
    return "?";
}

TextureKind texture_from_name(const std::string& name) {
    if (name == "flat") return TextureKind::flat;
    if (name == "perlin") return TextureKind::perlin;
    if (name == "stripes") return TextureKind::stripes;
    throw std::invalid_argument("unknown texture: " + name);
}

const char* shape_family_name(ShapeFamily s) {
    switch (s) {
        case ShapeFamily::blob: return "blob";
        case ShapeFamily::ring: return "ring";
        case ShapeFamily::multi_blob: return "multi-blob";
        case ShapeFamily::thin_structure: return "thin-structure";
    }
    return "?";
}

ShapeFamily shape_family_from_name(const std::string& name) {
    if (name == "blob") return ShapeFamily::blob;
    if (name == "ring") return ShapeFamily::ring;
    if (name == "multi-blob") return ShapeFamily::multi_blob;
    if (name == "thin-structure") return ShapeFamily::thin_structure;
    throw std::invalid_argument("unknown shape family: " + name);
}

void validate_domain_spec(const DomainSpec& spec) {
    if (!(spec.fg_area_min > 0.02 && spec.fg_area_max < 0.8 &&
          spec.fg_area_min < spec.fg_area_max)) {
        throw std::invalid_argument("domain spec: fg area range must sit inside (0.02, 0.8)");
    }
    for (const double v : spec.fg_color) {
        if (v < 0.0 || v > 1.0) {
            throw std::invalid_argument("domain spec: fg color out of [0,1]");
        }
    }
    for (const double v : spec.bg_color) {
        if (v < 0.0 || v > 1.0) {
            throw std::invalid_argument("domain spec: bg color out of [0,1]");
        }
    }
    if (spec.image_size < 16) {
        throw std::invalid_argument("domain spec: image size must be >= 16");
    }
    if (spec.noise_amplitude < 0.0 || spec.texture_amplitude < 0.0) {
        throw std::invalid_argument("domain spec: amplitudes must be non-negative");
    }
}

namespace {

constexpr double kPi = 3.14159265358979323846;

// Per-category shape parameters, fixed by (spec seed, category).
struct CategoryParams {
    double wobble = 0.2;       // radial irregularity of blobs
    double eccentricity = 1.0; // y/x radius ratio
    double ring_ratio = 0.55;  // inner/outer radius
    int blob_count = 3;
    double stripe_freq = 3.0;
    double curve_waves = 1.5;  // oscillations of the thin structure
};

CategoryParams category_params(const DomainSpec& spec, int category_id) {
    SplitMix rng(seed_mix(spec.rng_seed, static_cast<std::uint64_t>(category_id), 0xCA7ULL));
    CategoryParams p;
    p.wobble = rng.uniform(0.08, 0.3);
    p.eccentricity = rng.uniform(0.7, 1.4);
    p.ring_ratio = rng.uniform(0.45, 0.65);
    p.blob_count = static_cast<int>(rng.uniform_int(2, 4));
    p.stripe_freq = rng.uniform(2.0, 5.0);
    p.curve_waves = rng.uniform(1.0, 2.5);
    return p;
}

struct Blob {
    double cx, cy;       // center, pixels
    double radius;       // base radius before the global scale
    double phase[3];     // wobble harmonics phase
    double amp[3];       // wobble harmonics amplitude
    double eccentricity;
};

double blob_radius_at(const Blob& b, double theta) {
    double r = 1.0;
    for (int k = 0; k < 3; ++k) {
        r += b.amp[k] * std::sin((k + 1) * theta + b.phase[k]);
    }
    return b.radius * std::max(r, 0.2);
}

bool inside_blob(const Blob& b, double x, double y, double scale) {
    const double dx = x - b.cx;
    const double dy = (y - b.cy) / b.eccentricity;
    const double d = std::sqrt(dx * dx + dy * dy);
    const double theta = std::atan2(dy, dx);
    return d <= scale * blob_radius_at(b, theta);
}

struct ShapeDraw {
    std::vector<Blob> blobs;
    double ring_ratio = 0.0;  // > 0 marks an annulus
    // thin structure
    bool is_curve = false;
    std::vector<std::pair<double, double>> curve;  // sampled polyline
    double thickness = 1.0;
};

ShapeDraw draw_shape(const DomainSpec& spec, const CategoryParams& cat, SplitMix& rng) {
    const double s = spec.image_size;
    ShapeDraw d;
    auto make_blob = [&](double cx, double cy, double radius) {
        Blob b;
        b.cx = cx;
        b.cy = cy;
        b.radius = radius;
        b.eccentricity = cat.eccentricity;
        for (int k = 0; k < 3; ++k) {
            b.phase[k] = rng.uniform(0.0, 2.0 * kPi);
            b.amp[k] = rng.uniform(0.0, cat.wobble) / (k + 1);
        }
        return b;
    };

    switch (spec.shape_family) {
        case ShapeFamily::blob: {
            d.blobs.push_back(make_blob(rng.uniform(0.38 * s, 0.62 * s),
                                        rng.uniform(0.38 * s, 0.62 * s), 0.25 * s));
            break;
        }
        case ShapeFamily::ring: {
            d.blobs.push_back(make_blob(rng.uniform(0.42 * s, 0.58 * s),
                                        rng.uniform(0.42 * s, 0.58 * s), 0.3 * s));
            d.ring_ratio = cat.ring_ratio;
            break;
        }
        case ShapeFamily::multi_blob: {
            for (int i = 0; i < cat.blob_count; ++i) {
                d.blobs.push_back(make_blob(rng.uniform(0.2 * s, 0.8 * s),
                                            rng.uniform(0.2 * s, 0.8 * s),
                                            rng.uniform(0.08 * s, 0.16 * s)));
            }
            break;
        }
        case ShapeFamily::thin_structure: {
            d.is_curve = true;
            const double x0 = rng.uniform(0.05 * s, 0.2 * s);
            const double x1 = rng.uniform(0.8 * s, 0.95 * s);
            const double ybase = rng.uniform(0.25 * s, 0.75 * s);
            const double amp = rng.uniform(0.1 * s, 0.25 * s);
            const double phase = rng.uniform(0.0, 2.0 * kPi);
            const double tilt = rng.uniform(-0.25, 0.25);
            const int samples = 160;
            for (int i = 0; i <= samples; ++i) {
                const double u = static_cast<double>(i) / samples;
                const double x = x0 + u * (x1 - x0);
                const double y = ybase + tilt * (x - 0.5 * s) +
                                 amp * std::sin(2.0 * kPi * cat.curve_waves * u + phase);
                d.curve.emplace_back(x, std::clamp(y, 0.05 * s, 0.95 * s));
            }
            d.thickness = 1.0;
            break;
        }
    }
    return d;
}

// Rasterize at a given global scale (blob radii multiplier, or curve
// thickness in pixels). Foreground area is monotone in the scale, which the
// caller exploits with a bisection search.
BinaryMask rasterize(const ShapeDraw& d, int size, double scale) {
    BinaryMask mask(size, size, 0);
    if (d.is_curve) {
        const double t = scale;
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const double px = x + 0.5;
                const double py = y + 0.5;
                double best = 1e18;
                for (const auto& [cx, cy] : d.curve) {
                    const double dx = px - cx;
                    const double dy = py - cy;
                    const double dist = dx * dx + dy * dy;
                    best = std::min(best, dist);
                }
                if (best <= t * t) {
                    mask.at(y, x) = 1;
                }
            }
        }
        return mask;
    }
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double px = x + 0.5;
            const double py = y + 0.5;
            bool in = false;
            for (const auto& b : d.blobs) {
                if (inside_blob(b, px, py, scale)) {
                    in = true;
                    break;
                }
            }
            if (in && d.ring_ratio > 0.0) {
                // Annulus: carve out the scaled-down interior.
                bool in_inner = true;
                for (const auto& b : d.blobs) {
                    if (!inside_blob(b, px, py, scale * d.ring_ratio)) {
                        in_inner = false;
                        break;
                    }
                }
                in = !in_inner;
            }
            if (in) {
                mask.at(y, x) = 1;
            }
        }
    }
    return mask;
}

double fg_fraction(const BinaryMask& mask) {
    return static_cast<double>(mask.foreground_count()) / static_cast<double>(mask.data.size());
}

// Bisection on the monotone scale to land the foreground fraction inside
// [lo, hi]. The area ranges are wide relative to single-pixel steps, so the
// search always terminates inside the band.
BinaryMask shape_in_area_range(const ShapeDraw& d, int size, double lo, double hi) {
    double s_lo = d.is_curve ? 0.5 : 0.05;
    double s_hi = d.is_curve ? 0.5 * size : 4.0;
    BinaryMask mask = rasterize(d, size, 0.5 * (s_lo + s_hi));
    for (int iter = 0; iter < 48; ++iter) {
        const double f = fg_fraction(mask);
        if (f >= lo && f <= hi) {
            return mask;
        }
        const double mid = 0.5 * (s_lo + s_hi);
        if (f < lo) {
            s_lo = mid;
        } else {
            s_hi = mid;
        }
        mask = rasterize(d, size, 0.5 * (s_lo + s_hi));
    }
    return mask;
}

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
    const double mx = std::max({r, g, b});
    const double mn = std::min({r, g, b});
    const double dd = mx - mn;
    v = mx;
    s = mx > 0.0 ? dd / mx : 0.0;
    if (dd <= 0.0) {
        h = 0.0;
        return;
    }
    if (mx == r) {
        h = 60.0 * std::fmod((g - b) / dd, 6.0);
    } else if (mx == g) {
        h = 60.0 * ((b - r) / dd + 2.0);
    } else {
        h = 60.0 * ((r - g) / dd + 4.0);
    }
    if (h < 0.0) {
        h += 360.0;
    }
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
    const double c = v * s;
    const double hp = h / 60.0;
    const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r1 = 0.0, g1 = 0.0, b1 = 0.0;
    if (hp < 1.0) {
        r1 = c; g1 = x;
    } else if (hp < 2.0) {
        r1 = x; g1 = c;
    } else if (hp < 3.0) {
        g1 = c; b1 = x;
    } else if (hp < 4.0) {
        g1 = x; b1 = c;
    } else if (hp < 5.0) {
        r1 = x; b1 = c;
    } else {
        r1 = c; b1 = x;
    }
    const double m = v - c;
    r = r1 + m;
    g = g1 + m;
    b = b1 + m;
}

std::array<double, 3> jitter_color(const std::array<double, 3>& color, double hue_shift,
                                   double brightness_shift) {
    double h, s, v;
    rgb_to_hsv(color[0], color[1], color[2], h, s, v);
    h = std::fmod(h + hue_shift + 360.0, 360.0);
    double r, g, b;
    hsv_to_rgb(h, s, v, r, g, b);
    return {std::clamp(r + brightness_shift, 0.0, 1.0),
            std::clamp(g + brightness_shift, 0.0, 1.0),
            std::clamp(b + brightness_shift, 0.0, 1.0)};
}

// Texture field value at a pixel, in [-1, 1] before amplitude scaling.
struct TextureField {
    TextureKind kind;
    double freq = 3.0;
    double angle = 0.0;
    double phase = 0.0;
    std::vector<double> lattice;  // perlin-like value noise lattice
    int lattice_n = 5;

    double value(double x, double y, int size) const {
        switch (kind) {
            case TextureKind::flat:
                return 0.0;
            case TextureKind::stripes: {
                const double fx = std::cos(angle) * freq;
                const double fy = std::sin(angle) * freq;
                return std::sin(2.0 * kPi * (fx * x + fy * y) / size + phase);
            }
            case TextureKind::perlin: {
                const double gx = x / size * (lattice_n - 1);
                const double gy = y / size * (lattice_n - 1);
                const int ix = std::min(static_cast<int>(gx), lattice_n - 2);
                const int iy = std::min(static_cast<int>(gy), lattice_n - 2);
                const double tx = gx - ix;
                const double ty = gy - iy;
                auto at = [&](int r, int c) { return lattice[static_cast<std::size_t>(r) * lattice_n + c]; };
                const double a = at(iy, ix) * (1 - tx) + at(iy, ix + 1) * tx;
                const double b = at(iy + 1, ix) * (1 - tx) + at(iy + 1, ix + 1) * tx;
                return a * (1 - ty) + b * ty;
            }
        }
        return 0.0;
    }
};

TextureField make_texture(const DomainSpec& spec, const CategoryParams& cat, SplitMix& rng) {
    TextureField field;
    field.kind = spec.texture;
    field.freq = cat.stripe_freq;
    field.angle = rng.uniform(0.0, kPi);
    field.phase = rng.uniform(0.0, 2.0 * kPi);
    if (spec.texture == TextureKind::perlin) {
        field.lattice.resize(static_cast<std::size_t>(field.lattice_n) * field.lattice_n);
        for (auto& v : field.lattice) {
            v = rng.uniform(-1.0, 1.0);
        }
    }
    return field;
}

}  // namespace

GeneratedSample gen_sample(const DomainSpec& spec, int category_id, std::uint64_t seed) {
    validate_domain_spec(spec);
    const CategoryParams cat = category_params(spec, category_id);
    SplitMix rng(seed_mix(spec.rng_seed, static_cast<std::uint64_t>(category_id), seed));

    const ShapeDraw shape = draw_shape(spec, cat, rng);
    BinaryMask mask = shape_in_area_range(shape, spec.image_size, spec.fg_area_min,
                                          spec.fg_area_max);

    const double hue_shift = rng.uniform(-spec.jitter_hue, spec.jitter_hue);
    const double brightness_shift =
        rng.uniform(-spec.jitter_brightness, spec.jitter_brightness);
    const auto fg = jitter_color(spec.fg_color, hue_shift, brightness_shift);
    const auto bg = jitter_color(spec.bg_color, hue_shift, brightness_shift);

    const TextureField texture = make_texture(spec, cat, rng);

    Image image(3, spec.image_size, spec.image_size);
    for (int y = 0; y < spec.image_size; ++y) {
        for (int x = 0; x < spec.image_size; ++x) {
            const bool in_fg = mask.at(y, x) != 0;
            const auto& base = in_fg ? fg : bg;
            const double tex = spec.texture_amplitude * texture.value(x + 0.5, y + 0.5,
                                                                      spec.image_size);
            for (int c = 0; c < 3; ++c) {
                const double noise = spec.noise_amplitude * rng.uniform(-1.0, 1.0);
                image.at(c, y, x) = std::clamp(base[c] + tex + noise, 0.0, 1.0);
            }
        }
    }

    GeneratedSample out;
    out.image = std::move(image);
    out.mask = std::move(mask);
    out.domain_id = spec.id;
    out.category_id = category_id;
    return out;
}

Episode sample_episode(const DomainSpec& spec, int category_id, int k, int n_eval,
                       std::uint64_t seed) {
    if (k < 1 || n_eval < 1) {
        throw std::invalid_argument("sample_episode: k and n_eval must be >= 1");
    }
    Episode ep;
    ep.category_id = category_id;
    ep.domain_id = spec.id;
    for (int i = 0; i < k + n_eval; ++i) {
        GeneratedSample s =
            gen_sample(spec, category_id, seed_mix(seed, static_cast<std::uint64_t>(i), 0xE5ULL));
        auto pair = std::make_pair(std::move(s.image), std::move(s.mask));
        if (i < k) {
            ep.supports.push_back(std::move(pair));
        } else {
            ep.eval_queries.push_back(std::move(pair));
        }
    }
    return ep;
}

std::vector<DomainSpec> preset_domains() {
    std::vector<DomainSpec> out;

    DomainSpec aerial;
    aerial.name = "aerial-like";
    aerial.id = 0;
    aerial.fg_color = {0.16, 0.28, 0.48};
    aerial.bg_color = {0.42, 0.47, 0.28};
    aerial.noise_amplitude = 0.07;
    aerial.jitter_hue = 10.0;
    aerial.jitter_brightness = 0.08;
    aerial.texture_amplitude = 0.14;
    aerial.texture = TextureKind::stripes;
    aerial.shape_family = ShapeFamily::multi_blob;
    aerial.fg_area_min = 0.08;
    aerial.fg_area_max = 0.32;
    aerial.rng_seed = 11;
    out.push_back(aerial);

    DomainSpec lesion;
    lesion.name = "lesion-like";
    lesion.id = 1;
    lesion.fg_color = {0.45, 0.26, 0.19};
    lesion.bg_color = {0.86, 0.67, 0.55};
    lesion.noise_amplitude = 0.05;
    lesion.jitter_hue = 8.0;
    lesion.jitter_brightness = 0.10;
    lesion.texture_amplitude = 0.0;
    lesion.texture = TextureKind::flat;
    lesion.shape_family = ShapeFamily::blob;
    lesion.fg_area_min = 0.22;
    lesion.fg_area_max = 0.55;
    lesion.rng_seed = 12;
    out.push_back(lesion);

    DomainSpec xray;
    xray.name = "xray-like";
    xray.id = 2;
    xray.fg_color = {0.72, 0.72, 0.72};
    xray.bg_color = {0.16, 0.16, 0.18};
    xray.noise_amplitude = 0.06;
    xray.jitter_hue = 0.0;
    xray.jitter_brightness = 0.10;
    xray.texture_amplitude = 0.10;
    xray.texture = TextureKind::perlin;
    xray.shape_family = ShapeFamily::ring;
    xray.fg_area_min = 0.10;
    xray.fg_area_max = 0.30;
    xray.rng_seed = 13;
    out.push_back(xray);

    DomainSpec objects;
    objects.name = "objects-like";
    objects.id = 3;
    objects.fg_color = {0.78, 0.30, 0.24};
    objects.bg_color = {0.58, 0.58, 0.62};
    objects.noise_amplitude = 0.05;
    objects.jitter_hue = 14.0;
    objects.jitter_brightness = 0.08;
    objects.texture_amplitude = 0.10;
    objects.texture = TextureKind::perlin;
    objects.shape_family = ShapeFamily::blob;
    objects.fg_area_min = 0.03;
    objects.fg_area_max = 0.10;
    objects.rng_seed = 14;
    out.push_back(objects);

    DomainSpec underwater;
    underwater.name = "underwater-like";
    underwater.id = 4;
    underwater.fg_color = {0.88, 0.58, 0.30};
    underwater.bg_color = {0.06, 0.30, 0.44};
    underwater.noise_amplitude = 0.07;
    underwater.jitter_hue = 12.0;
    underwater.jitter_brightness = 0.08;
    underwater.texture_amplitude = 0.12;
    underwater.texture = TextureKind::stripes;
    underwater.shape_family = ShapeFamily::thin_structure;
    underwater.fg_area_min = 0.04;
    underwater.fg_area_max = 0.15;
    underwater.rng_seed = 15;
    out.push_back(underwater);

    return out;
}

DomainSpec find_preset(const std::string& name) {
    for (auto& spec : preset_domains()) {
        if (spec.name == name) {
            return spec;
        }
    }
    throw config_error("unknown domain preset: " + name);
}

}  // namespace mpa
