#include "mpa/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mpa {

const char* aug_kind_name(AugKind kind) {
    switch (kind) {
        case AugKind::hflip: return "hflip";
        case AugKind::vflip: return "vflip";
        case AugKind::rot90: return "rot90";
        case AugKind::brightness: return "brightness";
        case AugKind::hue: return "hue";
        case AugKind::grid_shuffle: return "grid_shuffle";
    }
    return "?";
}

AugKind aug_kind_from_name(const std::string& name) {
    if (name == "hflip") return AugKind::hflip;
    if (name == "vflip") return AugKind::vflip;
    if (name == "rot90") return AugKind::rot90;
    if (name == "brightness") return AugKind::brightness;
    if (name == "hue") return AugKind::hue;
    if (name == "grid_shuffle") return AugKind::grid_shuffle;
    throw std::invalid_argument("unknown augmentation kind: " + name);
}

const char* aug_mode_name(AugMode mode) {
    switch (mode) {
        case AugMode::cumulative: return "cumulative";
        case AugMode::replacement: return "replacement";
        case AugMode::simple: return "simple";
    }
    return "?";
}

AugMode aug_mode_from_name(const std::string& name) {
    if (name == "cumulative") return AugMode::cumulative;
    if (name == "replacement") return AugMode::replacement;
    if (name == "simple") return AugMode::simple;
    throw std::invalid_argument("unknown augmentation mode: " + name);
}

void validate_hpa_config(const HpaConfig& cfg) {
    if (cfg.n_max < 1 || cfg.n_max > static_cast<int>(cfg.ladder.size())) {
        throw std::invalid_argument("hpa config: n_max must be in [1, ladder length]");
    }
    if (cfg.patience < 1) {
        throw std::invalid_argument("hpa config: patience must be >= 1");
    }
    if (cfg.grid_cells.empty()) {
        throw std::invalid_argument("hpa config: grid_cells must not be empty");
    }
    for (const int c : cfg.grid_cells) {
        if (c < 2) {
            throw std::invalid_argument("hpa config: grid cells must be >= 2");
        }
    }
}

namespace {

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
    const double mx = std::max({r, g, b});
    const double mn = std::min({r, g, b});
    const double d = mx - mn;
    v = mx;
    s = mx > 0.0 ? d / mx : 0.0;
    if (d <= 0.0) {
        h = 0.0;
        return;
    }
    if (mx == r) {
        h = 60.0 * std::fmod((g - b) / d, 6.0);
    } else if (mx == g) {
        h = 60.0 * ((b - r) / d + 2.0);
    } else {
        h = 60.0 * ((r - g) / d + 4.0);
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

std::pair<Image, BinaryMask> flip_h(const Image& img, const BinaryMask& mask) {
    Image out(img.channels, img.height, img.width);
    BinaryMask mout(mask.height, mask.width);
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width; ++x) {
                out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
            }
        }
    }
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            mout.at(y, x) = mask.at(y, mask.width - 1 - x);
        }
    }
    return {std::move(out), std::move(mout)};
}

std::pair<Image, BinaryMask> flip_v(const Image& img, const BinaryMask& mask) {
    Image out(img.channels, img.height, img.width);
    BinaryMask mout(mask.height, mask.width);
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width; ++x) {
                out.at(c, y, x) = img.at(c, img.height - 1 - y, x);
            }
        }
    }
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            mout.at(y, x) = mask.at(mask.height - 1 - y, x);
        }
    }
    return {std::move(out), std::move(mout)};
}

// 90 degrees clockwise; output is W x H.
std::pair<Image, BinaryMask> rotate90(const Image& img, const BinaryMask& mask) {
    Image out(img.channels, img.width, img.height);
    BinaryMask mout(mask.width, mask.height);
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < out.height; ++y) {
            for (int x = 0; x < out.width; ++x) {
                out.at(c, y, x) = img.at(c, img.height - 1 - x, y);
            }
        }
    }
    for (int y = 0; y < mout.height; ++y) {
        for (int x = 0; x < mout.width; ++x) {
            mout.at(y, x) = mask.at(mask.height - 1 - x, y);
        }
    }
    return {std::move(out), std::move(mout)};
}

std::pair<Image, BinaryMask> shift_brightness(const Image& img, const BinaryMask& mask,
                                              double delta) {
    Image out = img;
    for (auto& v : out.data) {
        v = std::clamp(v + delta, 0.0, 1.0);
    }
    return {std::move(out), mask};
}

std::pair<Image, BinaryMask> shift_hue(const Image& img, const BinaryMask& mask,
                                       double degrees) {
    if (img.channels != 3) {
        throw std::invalid_argument("hue shift requires a 3-channel image");
    }
    Image out(img.channels, img.height, img.width);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double h, s, v;
            rgb_to_hsv(img.at(0, y, x), img.at(1, y, x), img.at(2, y, x), h, s, v);
            h = std::fmod(h + degrees + 360.0, 360.0);
            double r, g, b;
            hsv_to_rgb(h, s, v, r, g, b);
            out.at(0, y, x) = std::clamp(r, 0.0, 1.0);
            out.at(1, y, x) = std::clamp(g, 0.0, 1.0);
            out.at(2, y, x) = std::clamp(b, 0.0, 1.0);
        }
    }
    return {std::move(out), mask};
}

std::pair<Image, BinaryMask> grid_shuffle(const Image& img, const BinaryMask& mask,
                                          int cells, std::uint64_t seed) {
    const int h = img.height;
    const int w = img.width;
    // Pad up to a multiple of the cell count, shuffle, crop back. When the
    // sides already divide evenly this is a pure pixel permutation.
    const int hp = ((h + cells - 1) / cells) * cells;
    const int wp = ((w + cells - 1) / cells) * cells;
    const int bh = hp / cells;
    const int bw = wp / cells;

    std::vector<int> perm(static_cast<std::size_t>(cells) * cells);
    std::iota(perm.begin(), perm.end(), 0);
    SplitMix rng(seed);
    fisher_yates_shuffle(perm.begin(), perm.end(), rng);

    Image padded(img.channels, hp, wp, 0.0);
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                padded.at(c, y, x) = img.at(c, y, x);
            }
        }
    }
    BinaryMask mpadded(hp, wp, 0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            mpadded.at(y, x) = mask.at(y, x);
        }
    }

    Image shuffled(img.channels, hp, wp, 0.0);
    BinaryMask mshuffled(hp, wp, 0);
    for (int dst = 0; dst < cells * cells; ++dst) {
        const int src = perm[static_cast<std::size_t>(dst)];
        const int dy = (dst / cells) * bh;
        const int dx = (dst % cells) * bw;
        const int sy = (src / cells) * bh;
        const int sx = (src % cells) * bw;
        for (int c = 0; c < img.channels; ++c) {
            for (int y = 0; y < bh; ++y) {
                for (int x = 0; x < bw; ++x) {
                    shuffled.at(c, dy + y, dx + x) = padded.at(c, sy + y, sx + x);
                }
            }
        }
        for (int y = 0; y < bh; ++y) {
            for (int x = 0; x < bw; ++x) {
                mshuffled.at(dy + y, dx + x) = mpadded.at(sy + y, sx + x);
            }
        }
    }

    Image out(img.channels, h, w);
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                out.at(c, y, x) = shuffled.at(c, y, x);
            }
        }
    }
    BinaryMask mout(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            mout.at(y, x) = mshuffled.at(y, x);
        }
    }
    return {std::move(out), std::move(mout)};
}

AugOp make_op(AugKind kind, std::uint64_t op_seed, const HpaConfig& cfg) {
    SplitMix rng(op_seed);
    AugOp op;
    op.kind = kind;
    switch (kind) {
        case AugKind::brightness:
            op.magnitude = rng.uniform(-cfg.brightness_range, cfg.brightness_range);
            break;
        case AugKind::hue:
            op.magnitude = rng.uniform(-cfg.hue_range, cfg.hue_range);
            break;
        case AugKind::grid_shuffle:
            op.magnitude = static_cast<double>(
                cfg.grid_cells[static_cast<std::size_t>(rng.uniform_int(
                    0, static_cast<std::int64_t>(cfg.grid_cells.size()) - 1))]);
            op.seed = rng.next();
            break;
        default:
            break;
    }
    return op;
}

}  // namespace

std::pair<Image, BinaryMask> apply_aug(const Image& image, const BinaryMask& mask,
                                       const AugOp& op) {
    if (image.height != mask.height || image.width != mask.width) {
        throw std::invalid_argument("apply_aug: image and mask dimensions differ");
    }
    switch (op.kind) {
        case AugKind::hflip: return flip_h(image, mask);
        case AugKind::vflip: return flip_v(image, mask);
        case AugKind::rot90: return rotate90(image, mask);
        case AugKind::brightness: return shift_brightness(image, mask, op.magnitude);
        case AugKind::hue: return shift_hue(image, mask, op.magnitude);
        case AugKind::grid_shuffle:
            return grid_shuffle(image, mask, static_cast<int>(op.magnitude), op.seed);
    }
    throw std::invalid_argument("apply_aug: unknown op kind");
}

AugChain build_chain(int level, std::uint64_t seed, const HpaConfig& cfg) {
    return build_chain_variant(level, seed, cfg, AugMode::cumulative);
}

AugChain build_chain_variant(int level, std::uint64_t seed, const HpaConfig& cfg,
                             AugMode mode) {
    validate_hpa_config(cfg);
    if (level < 1 || level > cfg.n_max) {
        throw std::invalid_argument("build_chain: level out of range");
    }
    AugChain chain;
    chain.level = level;
    switch (mode) {
        case AugMode::cumulative:
            // Each op's parameters depend only on (seed, op index), so the
            // level-L chain is an exact prefix of the level-(L+1) chain.
            for (int k = 0; k < level; ++k) {
                chain.ops.push_back(
                    make_op(cfg.ladder[static_cast<std::size_t>(k)],
                            seed_mix(seed, static_cast<std::uint64_t>(k)), cfg));
            }
            break;
        case AugMode::replacement:
            chain.ops.push_back(
                make_op(cfg.ladder[static_cast<std::size_t>(level - 1)],
                        seed_mix(seed, static_cast<std::uint64_t>(level - 1)), cfg));
            break;
        case AugMode::simple: {
            static constexpr AugKind kFlips[] = {AugKind::hflip, AugKind::vflip, AugKind::rot90};
            SplitMix rng(seed_mix(seed, 0x73696d70ULL));
            chain.ops.push_back(make_op(kFlips[rng.uniform_int(0, 2)], rng.next(), cfg));
            break;
        }
    }
    return chain;
}

ViewSet generate_views(const Image& support_image, const BinaryMask& support_mask, int n,
                       std::uint64_t seed, const HpaConfig& cfg, AugMode mode) {
    validate_hpa_config(cfg);
    if (n < 1 || n > cfg.n_max) {
        throw std::invalid_argument("generate_views: n out of range");
    }
    ViewSet set;
    set.views.reserve(static_cast<std::size_t>(n));
    for (int i = 1; i <= n; ++i) {
        const AugChain chain =
            build_chain_variant(i, seed ^ static_cast<std::uint64_t>(i), cfg, mode);
        Image img = support_image;
        BinaryMask msk = support_mask;
        for (const AugOp& op : chain.ops) {
            auto [next_img, next_msk] = apply_aug(img, msk, op);
            img = std::move(next_img);
            msk = std::move(next_msk);
        }
        set.views.push_back({std::move(img), std::move(msk), chain});
    }
    return set;
}

SchedulerState scheduler_step(SchedulerState state, double epoch_metric,
                              const HpaConfig& cfg) {
    state.epoch += 1;
    if (epoch_metric > state.best_metric + cfg.delta) {
        state.best_metric = epoch_metric;
        state.stagnation_count = 0;
        return state;
    }
    state.stagnation_count += 1;
    if (state.stagnation_count >= cfg.patience && state.current_n < cfg.n_max) {
        state.current_n += 1;
        state.stagnation_count = 0;
        state.best_metric = epoch_metric;
    }
    return state;
}

}  // namespace mpa
