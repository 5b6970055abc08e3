#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "mpa/common.hpp"

// Cumulative augmentation chains of increasing complexity, query-view
// generation from a single support pair, and the plateau scheduler that
// grows the number of views during adaptation.

namespace mpa {

enum class AugKind { hflip, vflip, rot90, brightness, hue, grid_shuffle };

const char* aug_kind_name(AugKind kind);
AugKind aug_kind_from_name(const std::string& name);

struct AugOp {
    AugKind kind = AugKind::hflip;
    double magnitude = 0.0;   // brightness delta, hue degrees, or grid cells per side
    std::uint64_t seed = 0;   // grid permutation seed
};

struct AugChain {
    int level = 0;
    std::vector<AugOp> ops;
};

struct View {
    Image image;
    BinaryMask mask;
    AugChain chain;
};

struct ViewSet {
    std::vector<View> views;  // views[i] holds view i+1 (level i+1)
};

// How a view at a given level is augmented: the cumulative ladder prefix,
// the single ladder op of that level alone, or a single flip-family op.
enum class AugMode { cumulative, replacement, simple };

const char* aug_mode_name(AugMode mode);
AugMode aug_mode_from_name(const std::string& name);

struct HpaConfig {
    int n_max = 6;
    double delta = 1e-4;  // minimum improvement that resets the plateau counter
    int patience = 3;     // consecutive non-improving epochs before adding a view
    double brightness_range = 0.3;
    double hue_range = 30.0;
    // Grid cells are drawn from this list. The default {2,4} always divides
    // encoder-valid image sides, keeping grid shuffle a pure permutation;
    // 3 is accepted and handled by the pad-then-crop path.
    std::vector<int> grid_cells{2, 4};
    std::vector<AugKind> ladder{AugKind::hflip,     AugKind::brightness, AugKind::vflip,
                                AugKind::hue,       AugKind::rot90,      AugKind::grid_shuffle};
};

void validate_hpa_config(const HpaConfig& cfg);

std::pair<Image, BinaryMask> apply_aug(const Image& image, const BinaryMask& mask,
                                       const AugOp& op);

// Deterministic cumulative chain; chains with the same seed are ordered
// prefix-extensions of each other across levels.
AugChain build_chain(int level, std::uint64_t seed, const HpaConfig& cfg = {});

AugChain build_chain_variant(int level, std::uint64_t seed, const HpaConfig& cfg, AugMode mode);

ViewSet generate_views(const Image& support_image, const BinaryMask& support_mask, int n,
                       std::uint64_t seed, const HpaConfig& cfg = {},
                       AugMode mode = AugMode::cumulative);

struct SchedulerState {
    int current_n = 1;
    int stagnation_count = 0;
    double best_metric = -std::numeric_limits<double>::infinity();
    int epoch = 0;
};

// Plateau rule: a metric improvement above delta resets the counter; after
// `patience` consecutive non-improving epochs one harder view is added (the
// counter and best metric reset), saturating at n_max.
SchedulerState scheduler_step(SchedulerState state, double epoch_metric,
                              const HpaConfig& cfg = {});

}  // namespace mpa
