#pragma once

#include <cstdint>
#include <vector>

#include "mpa/common.hpp"
#include "mpa/tensor.hpp"

// Prototype extraction and prototype-based mask prediction: masked average
// pooling, foreground/background cosine-softmax prediction, and
// self-support refinement from confidently predicted pixels.

namespace mpa {

template <class Real>
struct PrototypePair {
    Tensor<Real> fg;
    Tensor<Real> bg;
};

template <class Real>
struct PredictedMask {
    Tensor<Real> probs;  // 2*h*w, channels sum to 1 per pixel
    BinaryMask hard;     // argmax, ties resolved to foreground
};

struct SspConfig {
    double theta_fg = 0.7;  // pixels with fg prob above this refine the fg prototype
    double theta_bg = 0.3;  // pixels with fg prob below this refine the bg prototype
    bool hard_gate = false; // gate with {0,1} weights instead of the soft probabilities
};

// Masked average pooling over a soft mask in [0,1]; the background half uses
// the complement weights. Throws if the mask carries no foreground mass at
// all; an all-ones mask yields a zero background prototype instead (the
// denominator floor keeps it finite).
template <class Real>
PrototypePair<Real> map_prototype(const Tensor<Real>& features, const Tensor<Real>& mask) {
    if (features.rank() != 3 || mask.rank() != 2 ||
        features.dim(1) != mask.dim(0) || features.dim(2) != mask.dim(1)) {
        throw std::invalid_argument("map_prototype: mask must match the feature grid");
    }
    Real wsum = Real(0);
    for (const Real v : mask.data()) {
        wsum += v;
    }
    if (!(wsum > Real(0))) {
        throw degenerate_mask_error("map_prototype: mask has no foreground mass");
    }
    std::vector<Real> inv(mask.data().size());
    for (std::size_t i = 0; i < inv.size(); ++i) {
        inv[i] = Real(1) - mask.data()[i];
    }
    Tensor<Real> complement =
        Tensor<Real>::from_data(std::move(inv), mask.shape(), false);
    PrototypePair<Real> out;
    out.fg = masked_average(features, mask);
    out.bg = masked_average(features, complement);
    return out;
}

template <class Real>
PredictedMask<Real> predict_mask(const Tensor<Real>& features, const PrototypePair<Real>& protos,
                                 Real temperature) {
    Tensor<Real> fg_sim = cosine_map(features, protos.fg);
    Tensor<Real> bg_sim = cosine_map(features, protos.bg);
    PredictedMask<Real> out;
    out.probs = fgbg_softmax(fg_sim, bg_sim, temperature);
    const int h = out.probs.dim(1);
    const int w = out.probs.dim(2);
    const std::size_t pixels = static_cast<std::size_t>(h) * w;
    out.hard = BinaryMask(h, w);
    for (std::size_t i = 0; i < pixels; ++i) {
        out.hard.data[i] = out.probs.data()[i] >= out.probs.data()[pixels + i] ? 1 : 0;
    }
    return out;
}

// Self-support refinement: predict with the guide, gate confidently
// predicted pixels, and re-pool prototypes from them. An empty gate falls
// back to the corresponding guide half, so the result is always usable.
// Gradients flow through the soft probabilities (and the features); the
// confidence gate itself is a constant.
template <class Real>
PrototypePair<Real> ssp_refine(const Tensor<Real>& query_features,
                               const PrototypePair<Real>& guide, Real temperature,
                               const SspConfig& cfg = {}) {
    PredictedMask<Real> pred = predict_mask(query_features, guide, temperature);
    Tensor<Real> p_fg = channel(pred.probs, 0);
    Tensor<Real> p_bg = channel(pred.probs, 1);

    const auto& pf = p_fg.data();
    std::vector<std::uint8_t> fg_keep(pf.size());
    std::vector<std::uint8_t> bg_keep(pf.size());
    bool any_fg = false;
    bool any_bg = false;
    for (std::size_t i = 0; i < pf.size(); ++i) {
        fg_keep[i] = pf[i] > static_cast<Real>(cfg.theta_fg) ? 1 : 0;
        bg_keep[i] = pf[i] < static_cast<Real>(cfg.theta_bg) ? 1 : 0;
        any_fg = any_fg || fg_keep[i];
        any_bg = any_bg || bg_keep[i];
    }

    auto gate = [&](const Tensor<Real>& probs, const std::vector<std::uint8_t>& keep) {
        if (cfg.hard_gate) {
            std::vector<Real> w(keep.size());
            for (std::size_t i = 0; i < w.size(); ++i) {
                w[i] = keep[i] ? Real(1) : Real(0);
            }
            return Tensor<Real>::from_data(std::move(w), probs.shape(), false);
        }
        return masked_keep(probs, keep);
    };

    PrototypePair<Real> out;
    out.fg = any_fg ? masked_average(query_features, gate(p_fg, fg_keep)) : guide.fg;
    out.bg = any_bg ? masked_average(query_features, gate(p_bg, bg_keep)) : guide.bg;
    return out;
}

}  // namespace mpa
