#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mpa/common.hpp"

// Procedural cross-domain segmentation episodes. Five preset domains with
// distinct palettes, textures and shape families stand in for real
// benchmarks; per-sample color jitter and per-pixel noise act as the
// domain-gap knobs.

namespace mpa {

enum class TextureKind { flat, perlin, stripes };
enum class ShapeFamily { blob, ring, multi_blob, thin_structure };

const char* texture_name(TextureKind t);
TextureKind texture_from_name(const std::string& name);
const char* shape_family_name(ShapeFamily s);
ShapeFamily shape_family_from_name(const std::string& name);

struct DomainSpec {
    std::string name;
    int id = 0;
    std::array<double, 3> fg_color{0.8, 0.3, 0.2};
    std::array<double, 3> bg_color{0.2, 0.4, 0.6};
    double noise_amplitude = 0.05;      // per-pixel uniform color noise
    double jitter_hue = 0.0;            // per-sample hue shift range, degrees
    double jitter_brightness = 0.0;     // per-sample brightness shift range
    double texture_amplitude = 0.12;
    TextureKind texture = TextureKind::flat;
    ShapeFamily shape_family = ShapeFamily::blob;
    double fg_area_min = 0.1;
    double fg_area_max = 0.4;
    int image_size = 32;
    std::uint64_t rng_seed = 0;
};

void validate_domain_spec(const DomainSpec& spec);

struct GeneratedSample {
    Image image;
    BinaryMask mask;
    int domain_id = 0;
    int category_id = 0;
};

// Deterministic in (spec, category_id, seed). The category selects a shape
// parameter sub-family; the seed varies placement and appearance within it.
// The mask foreground fraction always lands inside the spec's area range.
GeneratedSample gen_sample(const DomainSpec& spec, int category_id, std::uint64_t seed);

Episode sample_episode(const DomainSpec& spec, int category_id, int k, int n_eval,
                       std::uint64_t seed);

// The five built-in domains: aerial-like, lesion-like, xray-like,
// objects-like, underwater-like.
std::vector<DomainSpec> preset_domains();

DomainSpec find_preset(const std::string& name);

}  // namespace mpa
