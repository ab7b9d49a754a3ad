#include "objstyle/losses.hpp"

#include <cmath>
#include <iostream>

#include "objstyle/errors.hpp"
#include "objstyle/matting.hpp"

namespace objstyle {

namespace {

// Guards the affinity column sums; affinities can underflow to zero when a
// column is far from every target vector.
constexpr double kDenomFloor = 1e-35;

torch::Tensor flat_mask(const torch::Tensor& theta, std::int64_t expected,
                        torch::Dtype dtype) {
    auto t = theta.reshape({-1});
    if (t.numel() != expected)
        throw ShapeMismatch("mask has " + std::to_string(t.numel()) + " entries, layer has " +
                            std::to_string(expected) + " columns");
    return t.to(dtype);
}

torch::Tensor masked_columns(const torch::Tensor& F, const torch::Tensor& theta) {
    auto flat = flat_mask(theta, F.size(1), F.scalar_type());
    auto idx = flat.nonzero().squeeze(1);
    if (idx.numel() == 0)
        throw EmptyMask("mask selects zero feature columns");
    return F.index_select(1, idx);
}

} // namespace

void LossWeights::validate() const {
    const double all[] = {alpha, beta, alpha1, alpha2, beta1, beta2, lambda_m};
    for (double v : all)
        if (!std::isfinite(v) || v < 0)
            throw Error("loss weights must be finite and non-negative");
    if (alpha <= 0 && beta <= 0)
        throw Error("at least one of alpha, beta must be positive");
    if (!(cx_bandwidth > 0) || !(cx_eps > 0))
        throw Error("contextual bandwidth and eps must be positive");
    if (style_layers.empty() || content_layer.empty())
        throw Error("style and content layer lists must be non-empty");
}

torch::Tensor gram(const torch::Tensor& F) {
    TORCH_CHECK(F.dim() == 2, "gram expects an N x D matrix");
    return torch::matmul(F, F.t());
}

torch::Tensor gram_loss_diffusion(const torch::Tensor& F_O, const torch::Tensor& F_S,
                                  const torch::Tensor& theta_cn) {
    if (F_O.size(0) != F_S.size(0))
        throw ShapeMismatch("feature matrices disagree on channel count");
    const auto n = F_O.size(0);
    auto masked = F_O * flat_mask(theta_cn, F_O.size(1), F_O.scalar_type()).unsqueeze(0);
    auto diff = gram(masked) - gram(F_S);
    return diff.pow(2).sum() / (2.0 * static_cast<double>(n) * static_cast<double>(n));
}

torch::Tensor gram_loss_utilization(const torch::Tensor& F_O, const torch::Tensor& F_S,
                                    const torch::Tensor& theta_sm) {
    if (F_O.size(0) != F_S.size(0))
        throw ShapeMismatch("feature matrices disagree on channel count");
    const auto n = F_O.size(0);
    auto masked = F_S * flat_mask(theta_sm, F_S.size(1), F_S.scalar_type()).unsqueeze(0);
    auto diff = gram(F_O) - gram(masked);
    return diff.pow(2).sum() / (2.0 * static_cast<double>(n) * static_cast<double>(n));
}

torch::Tensor contextual_similarity(const torch::Tensor& X, const torch::Tensor& Y,
                                    double bandwidth, double eps) {
    TORCH_CHECK(X.dim() == 2 && Y.dim() == 2, "contextual_similarity expects matrices");
    if (X.size(0) != Y.size(0))
        throw ShapeMismatch("feature sets disagree on vector dimension");
    TORCH_CHECK(X.size(1) >= 1 && Y.size(1) >= 1, "feature sets must be non-empty");

    auto mu = Y.mean(1, /*keepdim=*/true);
    auto xc = X - mu;
    auto yc = Y - mu;
    // zero-norm columns are perturbed by eps rather than raising
    auto xu = xc / xc.norm(2, 0, true).clamp_min(eps);
    auto yu = yc / yc.norm(2, 0, true).clamp_min(eps);

    auto dist = 1.0 - torch::matmul(yu.t(), xu);       // rows: Y vectors, cols: X vectors
    auto dmin = std::get<0>(dist.min(0, true));        // nearest Y vector per X column
    auto rel = dist / (dmin + eps);
    auto aff = ((1.0 - rel) / bandwidth).exp();
    auto cx = aff / aff.sum(0, true).clamp_min(kDenomFloor);
    return std::get<0>(cx.max(0)).mean();
}

torch::Tensor contextual_content_loss(const torch::Tensor& F_O, const torch::Tensor& F_C,
                                      double bandwidth, double eps) {
    return -contextual_similarity(F_O, F_C, bandwidth, eps).log();
}

torch::Tensor contextual_style_loss(const torch::Tensor& F_O, const torch::Tensor& F_S,
                                    const std::optional<torch::Tensor>& theta, MaskSide side,
                                    double bandwidth, double eps) {
    auto x = F_O;
    auto y = F_S;
    if (theta) {
        if (side == MaskSide::output)
            x = masked_columns(F_O, *theta);
        else
            y = masked_columns(F_S, *theta);
    }
    return -contextual_similarity(x, y, bandwidth, eps).log();
}

torch::Tensor segmented_style_loss(const torch::Tensor& F_O, const torch::Tensor& F_S,
                                   const PairMaskTensors& pair_masks, bool mean_normalize,
                                   bool skip_empty) {
    if (F_O.size(0) != F_S.size(0))
        throw ShapeMismatch("feature matrices disagree on channel count");
    const auto n = F_O.size(0);
    auto loss = torch::zeros({}, F_O.options());
    for (const auto& [cm, sm] : pair_masks) {
        auto cflat = flat_mask(cm, F_O.size(1), F_O.scalar_type());
        auto sflat = flat_mask(sm, F_S.size(1), F_S.scalar_type());
        const double c_cnt = cflat.sum().item<double>();
        const double s_cnt = sflat.sum().item<double>();
        if (c_cnt == 0 || s_cnt == 0) {
            if (!skip_empty)
                throw EmptyMask("pair mask vanished at this layer scale");
            std::cerr << "objstyle: warning: pair mask vanished at layer scale, pair skipped\n";
            continue;
        }
        auto go = gram(F_O * cflat.unsqueeze(0));
        auto gs = gram(F_S * sflat.unsqueeze(0));
        if (mean_normalize) {
            go = go / c_cnt;
            gs = gs / s_cnt;
        }
        loss = loss + (go - gs).pow(2).sum() / (2.0 * static_cast<double>(n) * static_cast<double>(n));
    }
    return loss;
}

torch::Tensor content_loss(const torch::Tensor& F_O, const torch::Tensor& F_C) {
    if (F_O.sizes() != F_C.sizes())
        throw ShapeMismatch("content features disagree on shape");
    const double n = static_cast<double>(F_O.size(0));
    const double d = static_cast<double>(F_O.size(1));
    return (F_O - F_C).pow(2).sum() / (2.0 * n * d);
}

namespace {

torch::Tensor select_columns(const torch::Tensor& F, const torch::Tensor& idx) {
    return idx.numel() == 0 ? F : F.index_select(1, idx);
}

} // namespace

LossBreakdown mapped_loss(const LossContext& ctx, const FeatureStack& output_features,
                          const torch::Tensor& output_image) {
    const auto& w = ctx.weights;
    auto zero = torch::zeros({}, output_image.options());
    auto seg = zero.clone();
    auto content = zero.clone();
    auto photo = zero.clone();
    auto ctx_content = zero.clone();

    if (w.alpha1 > 0) {
        for (const auto& layer : w.style_layers) {
            auto it = ctx.pair_masks.find(layer);
            if (it == ctx.pair_masks.end() || it->second.empty()) continue;
            seg = seg + segmented_style_loss(vectorize(output_features, layer),
                                             ctx.style_features.at(layer), it->second,
                                             w.masked_gram_mean_norm, w.skip_empty_pairs);
        }
        content = content_loss(vectorize(output_features, w.content_layer),
                               ctx.content_features.at(w.content_layer));
        if (w.lambda_m > 0)
            photo = photorealism_loss(output_image, ctx.matting);
    }
    if (w.alpha2 > 0) {
        for (const auto& layer : w.ctx_layers) {
            auto out = select_columns(vectorize(output_features, layer),
                                      ctx.ctx_content_out_idx.at(layer));
            ctx_content = ctx_content + contextual_content_loss(out, ctx.ctx_content_target.at(layer),
                                                                w.cx_bandwidth, w.cx_eps);
        }
    }

    LossBreakdown bd;
    bd.total = w.alpha1 * (seg + content + w.lambda_m * photo) + w.alpha2 * ctx_content;
    bd.terms["dps_style"] = w.alpha1 * seg.item<double>();
    bd.terms["dps_content"] = w.alpha1 * content.item<double>();
    bd.terms["photorealism"] = w.alpha1 * w.lambda_m * photo.item<double>();
    bd.terms["ctx_content"] = w.alpha2 * ctx_content.item<double>();
    for (const auto& [name, v] : bd.terms) bd.mapped += v;
    return bd;
}

LossBreakdown unmapped_loss(const LossContext& ctx, const FeatureStack& output_features) {
    if (ctx.kind == StpKind::E)
        throw WrongKind("unmapped loss is undefined for STP-E");
    const auto& w = ctx.weights;
    const auto opts = !ctx.style_features.empty()
                          ? ctx.style_features.begin()->second.options()
                          : (!output_features.maps.empty()
                                 ? output_features.maps.begin()->second.options()
                                 : torch::TensorOptions(torch::kDouble));
    auto gram_term = torch::zeros({}, opts);
    auto ctx_term = torch::zeros({}, opts);

    if (w.beta1 > 0) {
        for (const auto& layer : ctx.gram_layers_active) {
            auto fo = vectorize(output_features, layer);
            const auto& fs = ctx.style_features.at(layer);
            const auto& theta = ctx.theta_gram.at(layer);
            gram_term = gram_term + (ctx.kind == StpKind::C
                                         ? gram_loss_diffusion(fo, fs, theta)
                                         : gram_loss_utilization(fo, fs, theta));
        }
    }
    if (w.beta2 > 0) {
        for (const auto& layer : ctx.ctx_layers_active) {
            auto out = select_columns(vectorize(output_features, layer),
                                      ctx.ctx_style_out_idx.at(layer));
            ctx_term = ctx_term + contextual_style_loss(out, ctx.ctx_style_target.at(layer),
                                                        std::nullopt, MaskSide::output,
                                                        w.cx_bandwidth, w.cx_eps);
        }
    }

    LossBreakdown bd;
    bd.total = w.beta1 * gram_term + w.beta2 * ctx_term;
    bd.terms["gram_unmapped"] = w.beta1 * gram_term.item<double>();
    bd.terms["ctx_unmapped"] = w.beta2 * ctx_term.item<double>();
    for (const auto& [name, v] : bd.terms) bd.unmapped += v;
    return bd;
}

LossBreakdown total_loss(const LossContext& ctx, const FeatureStack& output_features,
                         const torch::Tensor& output_image) {
    const auto& w = ctx.weights;
    LossBreakdown bd;
    auto m = mapped_loss(ctx, output_features, output_image);
    bd.total = w.alpha * m.total;
    for (const auto& [name, v] : m.terms) {
        bd.terms[name] = w.alpha * v;
        bd.mapped += bd.terms[name];
    }

    if (ctx.kind != StpKind::E) {
        auto u = unmapped_loss(ctx, output_features);
        bd.total = bd.total + w.beta * u.total;
        for (const auto& [name, v] : u.terms) {
            bd.terms[name] = w.beta * v;
            bd.unmapped += bd.terms[name];
        }
    }
    return bd;
}

} // namespace objstyle
