#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mpa/augment.hpp"
#include "mpa/common.hpp"
#include "mpa/encoder.hpp"
#include "mpa/proto.hpp"
#include "mpa/tensor.hpp"

// Dual-chain multi-view adaptation: a sequential prediction chain that
// threads refined support prototypes from view to view (so errors propagate)
// and a parallel chain of independent support-to-view predictions, both with
// reverse support reconstruction, assembled into one weighted loss and
// minimized over the encoder parameters.

namespace mpa {

struct LossWeights {
    double bs = 0.2;
    double seq = 0.1;
    double s_par = 0.4;
    double q_par = 1.0;
};

struct DmpConfig {
    LossWeights weights;
    double lr = 5e-4;
    int max_epochs = 200;
    double temperature = 20.0;
    SspConfig ssp;
    std::string optimizer = "sgd";  // "sgd" or "adam"
    double momentum = 0.0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
};

struct AdaptOptions {
    DmpConfig dmp;
    HpaConfig hpa;
    bool sequential_on = true;
    bool parallel_on = true;
    bool progressive_on = true;
    int fixed_views = 1;  // view count when the progressive scheduler is off
    AugMode aug_mode = AugMode::cumulative;
    std::uint64_t seed = 0;
};

struct EpochRecord {
    int epoch = 0;
    double total = 0.0;
    double l_bs = 0.0;
    std::vector<double> l_q_seq;  // view indices 2..N
    std::vector<double> l_s_seq;  // view indices 2..N
    std::vector<double> l_q_par;  // view indices 1..N
    std::vector<double> l_s_par;  // view indices 1..N
    int current_n = 1;
    int stagnation_count = 0;
    bool proto_fallback = false;
};

struct AdaptationLog {
    std::vector<EpochRecord> epochs;
    bool any_fallback = false;
};

// ---------------------------------------------------------------------------
// Tensor adapters

template <class Real>
Tensor<Real> image_to_tensor(const Image& img) {
    std::vector<Real> data(img.data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        data[i] = static_cast<Real>(img.data[i]);
    }
    return Tensor<Real>::from_data(std::move(data), {img.channels, img.height, img.width}, false);
}

template <class Real>
Tensor<Real> mask_to_tensor(const BinaryMask& mask) {
    std::vector<Real> data(mask.data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        data[i] = mask.data[i] ? Real(1) : Real(0);
    }
    return Tensor<Real>::from_data(std::move(data), {mask.height, mask.width}, false);
}

// Spatial size of the encoder output for an H*W input.
inline std::pair<int, int> encoded_spatial(const EncoderConfig& cfg, int h, int w) {
    for (std::size_t i = 0; i < cfg.strides.size(); ++i) {
        h = (h + 2 * cfg.padding - cfg.kernel) / cfg.strides[i] + 1;
        w = (w + 2 * cfg.padding - cfg.kernel) / cfg.strides[i] + 1;
    }
    return {h, w};
}

inline BinaryMask upsample_nearest(const BinaryMask& mask, int target_h, int target_w) {
    BinaryMask out(target_h, target_w);
    for (int y = 0; y < target_h; ++y) {
        const int sy = static_cast<int>((static_cast<std::int64_t>(y) * mask.height) / target_h);
        for (int x = 0; x < target_w; ++x) {
            const int sx = static_cast<int>((static_cast<std::int64_t>(x) * mask.width) / target_w);
            out.at(y, x) = mask.at(sy, sx);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Prototypes with degenerate-mask fallback

template <class Real>
struct EncodedPair {
    Tensor<Real> features;   // C*h*w
    Tensor<Real> down_mask;  // h*w soft weights, constant
};

// Like map_prototype but total: a mask half with no mass falls back to the
// global average feature instead of failing. Aggressive augmentations can
// empty a half at feature resolution.
template <class Real>
PrototypePair<Real> prototype_with_fallback(const Tensor<Real>& features,
                                            const Tensor<Real>& down_mask, bool* fell_back) {
    Real fg_sum = Real(0);
    for (const Real v : down_mask.data()) {
        fg_sum += v;
    }
    const Real total = static_cast<Real>(down_mask.numel());
    const Real bg_sum = total - fg_sum;

    auto global_average = [&]() {
        return masked_average(features, Tensor<Real>::full(down_mask.shape(), Real(1)));
    };

    PrototypePair<Real> out;
    if (fg_sum > Real(0)) {
        out.fg = masked_average(features, down_mask);
    } else {
        out.fg = global_average();
        if (fell_back) {
            *fell_back = true;
        }
    }
    if (bg_sum > Real(0)) {
        std::vector<Real> inv(down_mask.data().size());
        for (std::size_t i = 0; i < inv.size(); ++i) {
            inv[i] = Real(1) - down_mask.data()[i];
        }
        out.bg = masked_average(
            features, Tensor<Real>::from_data(std::move(inv), down_mask.shape(), false));
    } else {
        out.bg = global_average();
        if (fell_back) {
            *fell_back = true;
        }
    }
    return out;
}

template <class Real>
PrototypePair<Real> average_prototypes(const std::vector<PrototypePair<Real>>& protos) {
    if (protos.size() == 1) {
        return protos[0];
    }
    std::vector<Tensor<Real>> fgs;
    std::vector<Tensor<Real>> bgs;
    std::vector<Real> coeffs(protos.size(), Real(1) / static_cast<Real>(protos.size()));
    for (const auto& p : protos) {
        fgs.push_back(p.fg);
        bgs.push_back(p.bg);
    }
    return {weighted_sum(fgs, coeffs), weighted_sum(bgs, coeffs)};
}

// Averaged support prototype for the K-shot setting; K=1 reduces to the
// plain masked-average prototype.
template <class Real>
PrototypePair<Real> kshot_prototype(const std::vector<EncodedPair<Real>>& supports,
                                    bool* fell_back = nullptr) {
    if (supports.empty()) {
        throw std::invalid_argument("kshot_prototype: need at least one support");
    }
    std::vector<PrototypePair<Real>> protos;
    protos.reserve(supports.size());
    for (const auto& s : supports) {
        protos.push_back(prototype_with_fallback(s.features, s.down_mask, fell_back));
    }
    return average_prototypes(protos);
}

template <class Real>
Tensor<Real> mean_loss(std::vector<Tensor<Real>> losses) {
    if (losses.size() == 1) {
        return losses[0];
    }
    return weighted_sum(losses,
                        std::vector<Real>(losses.size(), Real(1) / static_cast<Real>(losses.size())));
}

// Support self-prediction loss (per-support BCE against the ground-truth
// mask, averaged over the K supports).
template <class Real>
Tensor<Real> base_loss(const std::vector<EncodedPair<Real>>& supports,
                       const PrototypePair<Real>& guide, Real temperature) {
    std::vector<Tensor<Real>> losses;
    losses.reserve(supports.size());
    for (const auto& s : supports) {
        PredictedMask<Real> pred = predict_mask(s.features, guide, temperature);
        losses.push_back(bce_loss(channel(pred.probs, 0), s.down_mask));
    }
    return mean_loss(std::move(losses));
}

// ---------------------------------------------------------------------------
// Prediction chains

template <class Real>
struct ChainOutputs {
    // Entry j corresponds to view j+1. Losses for every index are computed;
    // the loss assembly decides which enter the total.
    std::vector<Tensor<Real>> q_losses;
    std::vector<Tensor<Real>> s_losses;
    std::vector<PrototypePair<Real>> q_protos;
    std::vector<PrototypePair<Real>> s_protos;
};

namespace detail {

// One forward/reverse step shared by both chains: refine a query prototype
// from the guide, score the view, then reconstruct each support from the
// query prototype.
template <class Real>
void chain_step(const std::vector<EncodedPair<Real>>& supports,
                const PrototypePair<Real>& guide, const EncodedPair<Real>& view,
                Real temperature, const SspConfig& ssp, ChainOutputs<Real>& out) {
    PrototypePair<Real> q_proto = ssp_refine(view.features, guide, temperature, ssp);
    PredictedMask<Real> q_pred = predict_mask(view.features, q_proto, temperature);
    out.q_losses.push_back(bce_loss(channel(q_pred.probs, 0), view.down_mask));
    out.q_protos.push_back(q_proto);

    std::vector<Tensor<Real>> s_losses;
    std::vector<PrototypePair<Real>> s_protos;
    s_losses.reserve(supports.size());
    s_protos.reserve(supports.size());
    for (const auto& s : supports) {
        PrototypePair<Real> s_proto = ssp_refine(s.features, q_proto, temperature, ssp);
        PredictedMask<Real> s_pred = predict_mask(s.features, s_proto, temperature);
        s_losses.push_back(bce_loss(channel(s_pred.probs, 0), s.down_mask));
        s_protos.push_back(s_proto);
    }
    out.s_losses.push_back(mean_loss(std::move(s_losses)));
    out.s_protos.push_back(average_prototypes(s_protos));
}

}  // namespace detail

// Sequential chain: the reverse support prototype of step j guides step j+1,
// so prediction errors propagate down the chain.
template <class Real>
ChainOutputs<Real> sequential_chain(const std::vector<EncodedPair<Real>>& supports,
                                    const PrototypePair<Real>& guide,
                                    const std::vector<EncodedPair<Real>>& views,
                                    Real temperature, const SspConfig& ssp = {}) {
    ChainOutputs<Real> out;
    PrototypePair<Real> threaded = guide;
    for (const auto& view : views) {
        detail::chain_step(supports, threaded, view, temperature, ssp, out);
        threaded = out.s_protos.back();
    }
    return out;
}

// Parallel chain: every view is predicted from the original guide, no state
// crosses view boundaries.
template <class Real>
ChainOutputs<Real> parallel_chain(const std::vector<EncodedPair<Real>>& supports,
                                  const PrototypePair<Real>& guide,
                                  const std::vector<EncodedPair<Real>>& views,
                                  Real temperature, const SspConfig& ssp = {}) {
    ChainOutputs<Real> out;
    for (const auto& view : views) {
        detail::chain_step(supports, guide, view, temperature, ssp, out);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Loss assembly

template <class Real>
struct LossBreakdown {
    Tensor<Real> total;
    double l_bs = 0.0;
    std::vector<double> l_q_seq;  // indices 2..N
    std::vector<double> l_s_seq;  // indices 2..N
    std::vector<double> l_q_par;  // indices 1..N
    std::vector<double> l_s_par;  // indices 1..N
};

// total = w.bs*l_bs + w.seq*sum_{i>=2}(l_q_seq_i + l_s_seq_i)
//       + w.s_par*sum_i l_s_par_i + w.q_par*sum_i l_q_par_i
// composed in exactly this order. Sequential index-1 terms duplicate the
// parallel ones and are excluded.
template <class Real>
LossBreakdown<Real> assemble_total(const Tensor<Real>& l_bs, const ChainOutputs<Real>& seq,
                                   const ChainOutputs<Real>& par, const LossWeights& weights) {
    LossBreakdown<Real> out;
    std::vector<Tensor<Real>> terms{l_bs};
    std::vector<Real> coeffs{static_cast<Real>(weights.bs)};
    out.l_bs = static_cast<double>(l_bs.item());

    for (std::size_t j = 1; j < seq.q_losses.size(); ++j) {
        terms.push_back(seq.q_losses[j]);
        coeffs.push_back(static_cast<Real>(weights.seq));
        terms.push_back(seq.s_losses[j]);
        coeffs.push_back(static_cast<Real>(weights.seq));
        out.l_q_seq.push_back(static_cast<double>(seq.q_losses[j].item()));
        out.l_s_seq.push_back(static_cast<double>(seq.s_losses[j].item()));
    }
    for (const auto& l : par.s_losses) {
        terms.push_back(l);
        coeffs.push_back(static_cast<Real>(weights.s_par));
        out.l_s_par.push_back(static_cast<double>(l.item()));
    }
    for (const auto& l : par.q_losses) {
        terms.push_back(l);
        coeffs.push_back(static_cast<Real>(weights.q_par));
        out.l_q_par.push_back(static_cast<double>(l.item()));
    }
    out.total = weighted_sum(terms, coeffs);
    return out;
}

// ---------------------------------------------------------------------------
// Optimizer

template <class Real>
class Optimizer {
public:
    Optimizer(std::vector<Tensor<Real>> params, const DmpConfig& cfg)
        : params_(std::move(params)), cfg_(cfg) {
        if (cfg_.optimizer != "sgd" && cfg_.optimizer != "adam") {
            throw std::invalid_argument("optimizer must be 'sgd' or 'adam'");
        }
        if (cfg_.optimizer == "adam" || cfg_.momentum != 0.0) {
            m_.resize(params_.size());
            v_.resize(params_.size());
            for (std::size_t i = 0; i < params_.size(); ++i) {
                m_[i].assign(params_[i].data().size(), Real(0));
                v_[i].assign(params_[i].data().size(), Real(0));
            }
        }
    }

    void step() {
        ++t_;
        const Real lr = static_cast<Real>(cfg_.lr);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& data = params_[i].mutable_data();
            if (!params_[i].has_grad()) {
                continue;
            }
            const auto& grad = params_[i].grad();
            if (cfg_.optimizer == "adam") {
                const Real b1 = static_cast<Real>(cfg_.adam_beta1);
                const Real b2 = static_cast<Real>(cfg_.adam_beta2);
                const Real eps = static_cast<Real>(cfg_.adam_eps);
                const Real bc1 = Real(1) - std::pow(b1, static_cast<Real>(t_));
                const Real bc2 = Real(1) - std::pow(b2, static_cast<Real>(t_));
                for (std::size_t j = 0; j < data.size(); ++j) {
                    m_[i][j] = b1 * m_[i][j] + (Real(1) - b1) * grad[j];
                    v_[i][j] = b2 * v_[i][j] + (Real(1) - b2) * grad[j] * grad[j];
                    data[j] -= lr * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + eps);
                }
            } else if (cfg_.momentum != 0.0) {
                const Real mu = static_cast<Real>(cfg_.momentum);
                for (std::size_t j = 0; j < data.size(); ++j) {
                    m_[i][j] = mu * m_[i][j] + grad[j];
                    data[j] -= lr * m_[i][j];
                }
            } else {
                for (std::size_t j = 0; j < data.size(); ++j) {
                    data[j] -= lr * grad[j];
                }
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) {
            p.zero_grad();
        }
    }

private:
    std::vector<Tensor<Real>> params_;
    DmpConfig cfg_;
    std::vector<std::vector<Real>> m_;
    std::vector<std::vector<Real>> v_;
    int t_ = 0;
};

// ---------------------------------------------------------------------------
// Adaptation loop

template <class Real>
struct AdaptResult {
    EncoderParams<Real> params;
    AdaptationLog log;
};

template <class Real>
AdaptResult<Real> adapt_episode(const Episode& episode, EncoderParams<Real> params,
                                const AdaptOptions& opt) {
    if (episode.supports.empty()) {
        throw config_error("adapt_episode: episode has no supports");
    }
    validate_hpa_config(opt.hpa);
    for (const auto& [img, mask] : episode.supports) {
        const auto fg = mask.foreground_count();
        if (fg == 0 || fg == static_cast<std::int64_t>(mask.data.size())) {
            throw config_error("adapt_episode: degenerate support mask");
        }
    }

    const Real temperature = static_cast<Real>(opt.dmp.temperature);
    const auto k = episode.supports.size();

    // The view-source support is fixed for the whole run.
    std::size_t src_index = 0;
    if (k > 1) {
        SplitMix pick(seed_mix(opt.seed, 0x76737263ULL));
        src_index = static_cast<std::size_t>(pick.uniform_int(0, static_cast<std::int64_t>(k) - 1));
    }
    const Image& src_image = episode.supports[src_index].first;
    const BinaryMask& src_mask = episode.supports[src_index].second;
    const std::uint64_t view_seed = seed_mix(opt.seed, 0x76696577ULL);

    // Support tensors are constants; only their features change per epoch.
    std::vector<Tensor<Real>> support_images;
    std::vector<Tensor<Real>> support_down_masks;
    for (const auto& [img, mask] : episode.supports) {
        support_images.push_back(image_to_tensor<Real>(img));
        const auto [fh, fw] = encoded_spatial(params.config, img.height, img.width);
        support_down_masks.push_back(downsample_mask(mask_to_tensor<Real>(mask), fh, fw));
    }

    SchedulerState sched;
    int n_views = opt.progressive_on ? 1 : opt.fixed_views;
    if (n_views < 1 || n_views > opt.hpa.n_max) {
        throw config_error("adapt_episode: fixed view count out of range");
    }

    std::vector<Tensor<Real>> view_images;
    std::vector<Tensor<Real>> view_down_masks;
    auto rebuild_views = [&](int n) {
        // Views depend only on (seed, index); growing n keeps earlier views
        // bit-identical, it only appends the next harder one.
        ViewSet set = generate_views(src_image, src_mask, n, view_seed, opt.hpa, opt.aug_mode);
        view_images.clear();
        view_down_masks.clear();
        for (const auto& view : set.views) {
            view_images.push_back(image_to_tensor<Real>(view.image));
            const auto [fh, fw] =
                encoded_spatial(params.config, view.image.height, view.image.width);
            view_down_masks.push_back(downsample_mask(mask_to_tensor<Real>(view.mask), fh, fw));
        }
    };
    rebuild_views(n_views);

    Optimizer<Real> optim(params.parameters(), opt.dmp);
    AdaptationLog log;

    for (int epoch = 0; epoch < opt.dmp.max_epochs; ++epoch) {
        bool fallback = false;

        std::vector<EncodedPair<Real>> supports;
        for (std::size_t i = 0; i < support_images.size(); ++i) {
            supports.push_back({encode(params, support_images[i]), support_down_masks[i]});
        }
        std::vector<EncodedPair<Real>> views;
        for (std::size_t i = 0; i < view_images.size(); ++i) {
            views.push_back({encode(params, view_images[i]), view_down_masks[i]});
        }

        PrototypePair<Real> guide = kshot_prototype(supports, &fallback);
        Tensor<Real> l_bs = base_loss(supports, guide, temperature);
        ChainOutputs<Real> seq;
        ChainOutputs<Real> par;
        if (opt.sequential_on) {
            seq = sequential_chain(supports, guide, views, temperature, opt.dmp.ssp);
        }
        if (opt.parallel_on) {
            par = parallel_chain(supports, guide, views, temperature, opt.dmp.ssp);
        }
        LossBreakdown<Real> breakdown = assemble_total(l_bs, seq, par, opt.dmp.weights);

        const double total = static_cast<double>(breakdown.total.item());
        if (!std::isfinite(total)) {
            throw adaptation_error("adapt_episode: non-finite loss at epoch " +
                                   std::to_string(epoch) + " (l_bs=" +
                                   std::to_string(breakdown.l_bs) + ")");
        }

        backward(breakdown.total);
        optim.step();
        optim.zero_grad();

        EpochRecord rec;
        rec.epoch = epoch;
        rec.total = total;
        rec.l_bs = breakdown.l_bs;
        rec.l_q_seq = breakdown.l_q_seq;
        rec.l_s_seq = breakdown.l_s_seq;
        rec.l_q_par = breakdown.l_q_par;
        rec.l_s_par = breakdown.l_s_par;
        rec.proto_fallback = fallback;
        log.any_fallback = log.any_fallback || fallback;

        if (opt.progressive_on) {
            sched = scheduler_step(sched, -total, opt.hpa);
            if (sched.current_n > n_views) {
                n_views = sched.current_n;
                rebuild_views(n_views);
            }
        }
        rec.current_n = n_views;
        rec.stagnation_count = sched.stagnation_count;
        log.epochs.push_back(std::move(rec));
    }

    return {std::move(params), std::move(log)};
}

// ---------------------------------------------------------------------------
// Inference

template <class Real>
struct InferResult {
    PredictedMask<Real> feature_level;  // probabilities and argmax on the feature grid
    BinaryMask mask;                    // argmax upsampled to query resolution
};

template <class Real>
InferResult<Real> infer(const EncoderParams<Real>& params,
                        const std::vector<std::pair<Image, BinaryMask>>& supports,
                        const Image& query_image, Real temperature,
                        const SspConfig& ssp = {}) {
    if (supports.empty()) {
        throw config_error("infer: no supports");
    }
    for (const auto& [img, mask] : supports) {
        const auto fg = mask.foreground_count();
        if (fg == 0 || fg == static_cast<std::int64_t>(mask.data.size())) {
            throw config_error("infer: degenerate support mask");
        }
    }
    // Inference does not need gradients; detach a copy of the parameters so
    // no tape is recorded.
    EncoderParams<Real> frozen;
    frozen.config = params.config;
    for (const auto& l : params.layers) {
        frozen.layers.push_back({Tensor<Real>::from_data(l.weights.data(), l.weights.shape(), false),
                                 Tensor<Real>::from_data(l.bias.data(), l.bias.shape(), false),
                                 l.stride});
    }

    std::vector<EncodedPair<Real>> encoded;
    for (const auto& [img, mask] : supports) {
        Tensor<Real> features = encode(frozen, image_to_tensor<Real>(img));
        const auto [fh, fw] = encoded_spatial(frozen.config, img.height, img.width);
        encoded.push_back({features, downsample_mask(mask_to_tensor<Real>(mask), fh, fw)});
    }
    PrototypePair<Real> guide = kshot_prototype(encoded);

    Tensor<Real> query_features = encode(frozen, image_to_tensor<Real>(query_image));
    PrototypePair<Real> refined = ssp_refine(query_features, guide, temperature, ssp);

    InferResult<Real> out;
    out.feature_level = predict_mask(query_features, refined, temperature);
    out.mask = upsample_nearest(out.feature_level.hard, query_image.height, query_image.width);
    return out;
}

}  // namespace mpa
