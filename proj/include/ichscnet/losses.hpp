#pragma once

#include <array>
#include <string>
#include <vector>

#include "ichscnet/nn.hpp"

namespace ichscnet {

enum class MtaVariant { paper, mixture_js };

inline MtaVariant parse_mta_variant(const std::string& s) {
    if (s == "paper") return MtaVariant::paper;
    if (s == "mixture_js") return MtaVariant::mixture_js;
    throw ConfigError("unknown mta_variant: " + s);
}

inline const char* to_string(MtaVariant v) {
    return v == MtaVariant::paper ? "paper" : "mixture_js";
}

template <typename T>
struct LossWeights {
    std::array<T, 4> gamma = {T(1.0), T(0.75), T(0.5), T(0.25)};
    T alpha = T(0.2);
    T beta = T(0.8);
    T xi0 = T(1);
    T xi1 = T(1);
    T epsilon_smooth = T(1e-6);
    T epsilon_prob = T(1e-6);
    MtaVariant mta_variant = MtaVariant::paper;
};

// Per-term audit record for one optimization step.  The two compose_*
// helpers below are the single source of truth for how the scalars combine;
// the logged values satisfy them bit-for-bit in the run's precision.
struct LossBreakdown {
    std::vector<std::pair<double, double>> seg_per_scale;  // (dice_term, jaccard_term)
    double seg_total = 0, cla = 0, mta = 0, total = 0;
    bool has_seg = false, has_cla = false, has_mta = false;
};

template <typename T>
T compose_seg_total(const std::vector<std::pair<T, T>>& per_scale,
                    const std::array<T, 4>& gamma) {
    T acc = T(0);
    for (size_t i = 0; i < per_scale.size(); ++i) {
        const T term = (per_scale[i].first + per_scale[i].second) * gamma[i];
        acc = (i == 0) ? term : acc + term;
    }
    return acc;
}

template <typename T>
T compose_total(T mta, T seg_total, T cla, T alpha, T beta) {
    const T inner = seg_total * alpha + cla * beta;
    return mta + inner;
}

// ---------------------------------------------------------------------------
// per-sample terms
// ---------------------------------------------------------------------------

// Smoothed soft overlap on probabilities: returns (dice_term, jaccard_term),
// each 1 - similarity.
template <typename T>
std::pair<Var<T>, Var<T>> soft_overlap_terms(const Var<T>& pred_probs,
                                             const Tensor<T>& gt, T eps) {
    if (!pred_probs.value().same_shape(gt))
        throw ShapeError("soft_overlap_terms: prediction and target shapes differ");
    auto gt_var = Var<T>::constant(gt);
    Var<T> inter = nn::sum_all(nn::mul(pred_probs, gt_var));
    Var<T> sp = nn::sum_all(pred_probs);
    T sg = T(0);
    for (int64_t i = 0; i < gt.numel(); ++i) sg += gt[i];

    Var<T> dice = nn::div(nn::add_const(nn::mul_const(inter, T(2)), eps),
                          nn::add_const(nn::add_const(sp, sg), eps));
    Var<T> denom_j = nn::add_const(nn::sub(nn::add_const(sp, sg), inter), eps);
    Var<T> jac = nn::div(nn::add_const(inter, eps), denom_j);
    return {nn::add_const(nn::neg(dice), T(1)), nn::add_const(nn::neg(jac), T(1))};
}

// Deep-supervised segmentation loss for one sample.  Accepts 1..4 stage
// grids (the concat-fusion ablations emit a single mask); gamma weights are
// consumed in stage order.
template <typename T>
struct SegLossParts {
    std::vector<std::pair<Var<T>, Var<T>>> per_scale;
    Var<T> total;
};

template <typename T>
SegLossParts<T> seg_loss(const std::vector<Var<T>>& stage_probs,
                         const std::vector<Tensor<T>>& gt_per_scale,
                         const LossWeights<T>& w) {
    if (stage_probs.empty() || stage_probs.size() > 4 ||
        stage_probs.size() != gt_per_scale.size())
        throw ShapeError("seg_loss: expected 1..4 matched stage grids");
    SegLossParts<T> parts;
    Var<T> acc;
    for (size_t i = 0; i < stage_probs.size(); ++i) {
        auto [dice, jac] = soft_overlap_terms(stage_probs[i], gt_per_scale[i],
                                              w.epsilon_smooth);
        parts.per_scale.emplace_back(dice, jac);
        Var<T> term = nn::mul_const(nn::add(dice, jac), w.gamma[i]);
        acc = (i == 0) ? term : nn::add(acc, term);
    }
    parts.total = acc;
    return parts;
}

// Weighted cross-entropy on the softmax pair (p_good, p_poor).
template <typename T>
Var<T> cla_loss(const Var<T>& probs, int label, const LossWeights<T>& w) {
    if (probs.value().numel() != 2) throw ShapeError("cla_loss: need 2 probabilities");
    if (label != 0 && label != 1) throw DataError("cla_loss: label outside {0,1}");
    Tensor<T> onehot({2});
    onehot[label] = T(1);
    Var<T> p_l = nn::sum_all(nn::mul(probs, Var<T>::constant(onehot)));
    Var<T> clamped = nn::clamp(p_l, w.epsilon_prob, T(1) - w.epsilon_prob);
    const T xi = label == 1 ? w.xi1 : w.xi0;
    return nn::mul_const(nn::log_op(clamped), -xi);
}

// clamp each entry then renormalize every row to sum 1 (2-column layout)
template <typename T>
Var<T> clamp_renorm_rows(const Var<T>& x, T eps) {
    if (x.value().rank() != 2 || x.value().dim(1) != 2)
        throw ShapeError("clamp_renorm_rows: expected (n, 2)");
    const int64_t n = x.value().dim(0);
    const T lo = eps, hi = T(1) - eps;
    Tensor<T> out({n, 2});
    for (int64_t i = 0; i < n; ++i) {
        const T c0 = std::min(hi, std::max(lo, x.value().at2(i, 0)));
        const T c1 = std::min(hi, std::max(lo, x.value().at2(i, 1)));
        const T s = c0 + c1;
        out.at2(i, 0) = c0 / s;
        out.at2(i, 1) = c1 / s;
    }
    return Var<T>(detail::make_node<T>(std::move(out), {x.node()}, [n, lo, hi](Node<T>& nd) {
        Tensor<T> g({n, 2});
        for (int64_t i = 0; i < n; ++i) {
            const T x0 = nd.parents[0]->value.at2(i, 0);
            const T x1 = nd.parents[0]->value.at2(i, 1);
            const T c0 = std::min(hi, std::max(lo, x0));
            const T c1 = std::min(hi, std::max(lo, x1));
            const T s = c0 + c1;
            const T y0 = nd.value.at2(i, 0), y1 = nd.value.at2(i, 1);
            const T g0 = nd.grad.at2(i, 0), g1 = nd.grad.at2(i, 1);
            const T mix = g0 * y0 + g1 * y1;
            const T dc0 = (g0 - mix) / s, dc1 = (g1 - mix) / s;
            g.at2(i, 0) = (x0 > lo && x0 < hi) ? dc0 : T(0);
            g.at2(i, 1) = (x1 > lo && x1 < hi) ? dc1 : T(0);
        }
        nd.parents[0]->accumulate(g);
    }));
}

template <typename T>
Var<T> kl_rows_mean(const Var<T>& p, const Var<T>& q) {
    Var<T> kl = nn::sum_all(nn::mul(p, nn::sub(nn::log_op(p), nn::log_op(q))));
    return nn::mul_const(kl, T(1) / static_cast<T>(p.value().dim(0)));
}

// Consistency term between the classifier-branch pixel distribution P
// (n, 2) and the segmentation probabilities S (1, r, r), compared at the
// shared resolution.  Default variant is the symmetric KL sum; mixture_js
// is the mixture-based divergence behind a config flag.
template <typename T>
Var<T> mta_loss(const Var<T>& p_dist, const Var<T>& seg_probs, const LossWeights<T>& w) {
    const int64_t n = p_dist.value().dim(0);
    if (seg_probs.value().numel() != n)
        throw ShapeError("mta_loss: resolution mismatch between P and S");
    Var<T> s_col = nn::reshape(seg_probs, {n, 1});
    Var<T> s_tilde = nn::concat_cols<T>({nn::add_const(nn::neg(s_col), T(1)), s_col});
    Var<T> p = clamp_renorm_rows(p_dist, w.epsilon_prob);
    Var<T> s = clamp_renorm_rows(s_tilde, w.epsilon_prob);
    if (w.mta_variant == MtaVariant::paper)
        return nn::add(kl_rows_mean(p, s), kl_rows_mean(s, p));
    Var<T> m = nn::mul_const(nn::add(p, s), T(0.5));
    return nn::mul_const(nn::add(kl_rows_mean(p, m), kl_rows_mean(s, m)), T(0.5));
}

// ---------------------------------------------------------------------------
// batch assembly
// ---------------------------------------------------------------------------

template <typename T>
Var<T> mean_of(const std::vector<Var<T>>& xs) {
    if (xs.empty()) throw ShapeError("mean_of: empty");
    Var<T> acc = xs[0];
    for (size_t i = 1; i < xs.size(); ++i) acc = nn::add(acc, xs[i]);
    return nn::mul_const(acc, T(1) / static_cast<T>(xs.size()));
}

template <typename T>
struct TotalLoss {
    Var<T> total;
    LossBreakdown breakdown;
};

// Combines batch-mean components into the canonical composition.  Absent
// terms enter as exact zeros so the breakdown identity always holds.
template <typename T>
TotalLoss<T> total_loss(const std::vector<SegLossParts<T>>& seg_samples,
                        const std::vector<Var<T>>& cla_samples,
                        const std::vector<Var<T>>& mta_samples, const LossWeights<T>& w) {
    TotalLoss<T> out;
    const size_t scales = seg_samples.empty() ? 0 : seg_samples[0].per_scale.size();

    Var<T> seg_mean = Var<T>::scalar(T(0));
    if (!seg_samples.empty()) {
        // batch-mean the per-scale terms first, then apply gamma once, so the
        // logged per-scale values recompose into seg_total exactly
        std::vector<std::pair<Var<T>, Var<T>>> scale_means;
        for (size_t s = 0; s < scales; ++s) {
            std::vector<Var<T>> dices, jacs;
            for (const auto& smp : seg_samples) {
                dices.push_back(smp.per_scale[s].first);
                jacs.push_back(smp.per_scale[s].second);
            }
            scale_means.emplace_back(mean_of(dices), mean_of(jacs));
        }
        Var<T> acc;
        std::vector<std::pair<T, T>> vals;
        for (size_t s = 0; s < scales; ++s) {
            vals.emplace_back(scale_means[s].first.item(), scale_means[s].second.item());
            Var<T> term = nn::mul_const(
                nn::add(scale_means[s].first, scale_means[s].second), w.gamma[s]);
            acc = (s == 0) ? term : nn::add(acc, term);
        }
        seg_mean = acc;
        if (seg_mean.item() != compose_seg_total(vals, w.gamma))
            throw NumericError("seg loss composition drifted from its parts");
        for (const auto& [d, j] : vals)
            out.breakdown.seg_per_scale.emplace_back(static_cast<double>(d),
                                                     static_cast<double>(j));
        out.breakdown.has_seg = true;
    }
    Var<T> cla_mean = cla_samples.empty() ? Var<T>::scalar(T(0)) : mean_of(cla_samples);
    Var<T> mta_mean = mta_samples.empty() ? Var<T>::scalar(T(0)) : mean_of(mta_samples);
    out.breakdown.has_cla = !cla_samples.empty();
    out.breakdown.has_mta = !mta_samples.empty();

    out.total = nn::add(mta_mean, nn::add(nn::mul_const(seg_mean, w.alpha),
                                          nn::mul_const(cla_mean, w.beta)));
    out.breakdown.seg_total = static_cast<double>(seg_mean.item());
    out.breakdown.cla = static_cast<double>(cla_mean.item());
    out.breakdown.mta = static_cast<double>(mta_mean.item());
    out.breakdown.total = static_cast<double>(out.total.item());
    if (out.total.item() !=
        compose_total(mta_mean.item(), seg_mean.item(), cla_mean.item(), w.alpha, w.beta))
        throw NumericError("total loss composition drifted from its parts");
    return out;
}

}  // namespace ichscnet
