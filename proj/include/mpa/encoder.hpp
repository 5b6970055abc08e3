#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mpa/common.hpp"
#include "mpa/tensor.hpp"

// Small weight-shared convolutional feature extractor. Four 3x3 blocks by
// default, stride 2 on the middle two, ReLU after every block except the
// last, trained from scratch during adaptation.

namespace mpa {

struct EncoderConfig {
    std::vector<int> widths{16, 32, 64, 64};
    std::vector<int> strides{1, 2, 2, 1};
    int kernel = 3;
    int padding = 1;
    int in_channels = 3;
};

inline void validate_encoder_config(const EncoderConfig& cfg) {
    if (cfg.widths.empty() || cfg.widths.size() != cfg.strides.size()) {
        throw std::invalid_argument("encoder config: widths and strides must be non-empty and equal-length");
    }
    for (const int w : cfg.widths) {
        if (w < 1) {
            throw std::invalid_argument("encoder config: channel widths must be positive");
        }
    }
    for (const int s : cfg.strides) {
        if (s < 1) {
            throw std::invalid_argument("encoder config: strides must be positive");
        }
    }
    if (cfg.kernel < 1 || cfg.padding < 0 || cfg.in_channels < 1) {
        throw std::invalid_argument("encoder config: bad kernel/padding/in_channels");
    }
}

inline int encoder_total_stride(const EncoderConfig& cfg) {
    int s = 1;
    for (const int v : cfg.strides) {
        s *= v;
    }
    return s;
}

inline int encoder_out_channels(const EncoderConfig& cfg) { return cfg.widths.back(); }

template <class Real>
struct EncoderParams {
    struct Layer {
        Tensor<Real> weights;  // C_out*C_in*k*k
        Tensor<Real> bias;     // C_out
        int stride = 1;
    };
    EncoderConfig config;
    std::vector<Layer> layers;

    std::vector<Tensor<Real>> parameters() const {
        std::vector<Tensor<Real>> out;
        out.reserve(layers.size() * 2);
        for (const auto& l : layers) {
            out.push_back(l.weights);
            out.push_back(l.bias);
        }
        return out;
    }

    EncoderParams clone() const {
        EncoderParams copy;
        copy.config = config;
        copy.layers.reserve(layers.size());
        for (const auto& l : layers) {
            copy.layers.push_back({l.weights.clone(), l.bias.clone(), l.stride});
        }
        return copy;
    }
};

// He-style initialization, std sqrt(2/fan_in), zero biases. Draws happen in
// double and are cast to Real so the 32-bit parameters are the rounded
// 64-bit ones.
template <class Real>
EncoderParams<Real> init_encoder(std::uint64_t seed, const EncoderConfig& cfg = {}) {
    validate_encoder_config(cfg);
    EncoderParams<Real> params;
    params.config = cfg;
    SplitMix rng(seed_mix(seed, 0x656e636fULL));
    int c_in = cfg.in_channels;
    for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
        const int c_out = cfg.widths[i];
        const int k = cfg.kernel;
        const double stddev = std::sqrt(2.0 / (static_cast<double>(c_in) * k * k));
        std::vector<Real> w(static_cast<std::size_t>(c_out) * c_in * k * k);
        for (auto& v : w) {
            v = static_cast<Real>(stddev * rng.normal());
        }
        typename EncoderParams<Real>::Layer layer;
        layer.weights = Tensor<Real>::from_data(std::move(w), {c_out, c_in, k, k}, true);
        layer.bias = Tensor<Real>::zeros({c_out}, true);
        layer.stride = cfg.strides[i];
        params.layers.push_back(std::move(layer));
        c_in = c_out;
    }
    return params;
}

template <class Real>
Tensor<Real> encode(const EncoderParams<Real>& params, const Tensor<Real>& image) {
    if (image.rank() != 3 || image.dim(0) != params.config.in_channels) {
        throw std::invalid_argument("encode: expected a C*H*W image matching the encoder input channels");
    }
    const int h = image.dim(1);
    const int w = image.dim(2);
    const int total_stride = encoder_total_stride(params.config);
    if (h < 16 || w < 16 || h % total_stride != 0 || w % total_stride != 0) {
        throw std::invalid_argument("encode: image sides must be >= 16 and divisible by the stride product");
    }
    Tensor<Real> x = image;
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        const auto& l = params.layers[i];
        x = conv2d(x, l.weights, l.bias, l.stride, params.config.padding);
        if (i + 1 < params.layers.size()) {
            x = relu(x);
        }
    }
    return x;
}

}  // namespace mpa
