#pragma once

#include <string>
#include <vector>

#include "ichscnet/encoders.hpp"
#include "ichscnet/nn.hpp"
#include "ichscnet/params.hpp"

namespace ichscnet {

template <typename T>
struct StageOutputs {
    std::vector<Var<T>> fused;        // index = stage 0..3
    std::vector<Var<T>> stage_logits; // (1, R, R) each
    Var<T> seg_full;                  // S: (1, H, W) probabilities
    Var<T> seg_r;                     // sigmoid of stage-0 logits at R x R
    Var<T> feature;                   // F: (C_F, R, R)
};

// Multi-task feature fusion: stage-chained group aggregation bridges from
// the deepest scale to the finest, with a deep-supervision mask head per
// stage and a learned constant standing in for the absent lower feature at
// the bottom.
template <typename T>
class MtffModule {
public:
    static constexpr int64_t kGroups = 4;
    static constexpr int64_t kDilations[4] = {1, 3, 5, 7};

    // cla_only drops the deep-supervision heads; seg_only drops the P head
    MtffModule(ParamStore<T>& ps, const PyramidEncoder<T>& pyr, int64_t r, int64_t c_f = 32,
               int64_t group_out = 8, bool with_mask_heads = true,
               bool with_p_projection = true)
        : r_(r), c_f_(c_f), group_out_(group_out), ps_(&ps) {
        if (c_f % kGroups) throw ConfigError("fused channel count must divide by 4");
        for (int s = 0; s < 4; ++s) {
            const int64_t c_img = pyr.channels(s);
            if (c_img % kGroups)
                throw ShapeError("gab: image feature channels not divisible by 4");
            const int64_t in_ch = c_img / kGroups + 1 + c_f / kGroups;
            const std::string gb = "gab.stage" + std::to_string(s);
            for (int g = 0; g < kGroups; ++g) {
                const std::string base = gb + ".group" + std::to_string(g);
                ps.fanin_normal(base + ".weight", gb, Trainability::train,
                                {group_out, in_ch, 3, 3});
                ps.zeros(base + ".bias", gb, Trainability::train, {group_out});
            }
            ps.fanin_normal(gb + ".fuse.weight", gb, Trainability::train,
                            {c_f, group_out * kGroups, 1, 1});
            ps.zeros(gb + ".fuse.bias", gb, Trainability::train, {c_f});
            if (with_mask_heads) {
                const std::string mh = "mask_head.stage" + std::to_string(s);
                ps.fanin_normal(mh + ".weight", mh, Trainability::train, {1, c_f, 3, 3});
                ps.zeros(mh + ".bias", mh, Trainability::train, {1});
            }
        }
        ps.normal("mtff.bottom", "mtff.bottom", Trainability::train, {c_f, r, r}, 0.1);
        if (with_p_projection) {
            ps.fanin_normal("p_projection.weight", "p_projection", Trainability::train,
                            {2, c_f, 1, 1});
            ps.zeros("p_projection.bias", "p_projection", Trainability::train, {2});
        }
    }

    // channel-split the three inputs into 4 groups (the 1-channel valid mask
    // is replicated into every group), run the dilated convolutions, fuse
    Var<T> gab_forward(int stage, const Var<T>& image_feat, const Var<T>& valid_mask,
                       const Var<T>& lower_feat) const {
        const int64_t c_img = image_feat.value().dim(0);
        const int64_t c_low = lower_feat.value().dim(0);
        if (c_img % kGroups || c_low % kGroups)
            throw ShapeError("gab: channel count not divisible by 4");
        const std::string gb = "gab.stage" + std::to_string(stage);
        auto p = [&](const std::string& n) { return Var<T>::leaf(ps_->get(gb + n)); };
        std::vector<Var<T>> outs;
        for (int g = 0; g < kGroups; ++g) {
            Var<T> chunk = nn::concat_ch<T>(
                {nn::slice_ch(image_feat, g * c_img / kGroups, (g + 1) * c_img / kGroups),
                 valid_mask,
                 nn::slice_ch(lower_feat, g * c_low / kGroups, (g + 1) * c_low / kGroups)});
            const std::string base = ".group" + std::to_string(g);
            outs.push_back(nn::smooth_silu(
                nn::conv2d(chunk, p(base + ".weight"), p(base + ".bias"), 1, kDilations[g],
                           kDilations[g])));
        }
        return nn::smooth_silu(
            nn::conv2d(nn::concat_ch(outs), p(".fuse.weight"), p(".fuse.bias")));
    }

    // stages run deepest to finest; mask head at stage s reads the running
    // pixel-wise sum of the fused features computed so far
    StageOutputs<T> forward(const FeaturePyramid<T>& pyr, const std::vector<Var<T>>& vms,
                            int64_t full_h, int64_t full_w, bool want_masks = true) const {
        if (vms.size() != 4) throw ShapeError("mtff: expected 4 valid masks");
        StageOutputs<T> out;
        out.fused.resize(4, Var<T>());
        if (want_masks) out.stage_logits.resize(4, Var<T>());
        Var<T> lower = Var<T>::leaf(ps_->get("mtff.bottom"));
        Var<T> running;
        for (int s = 3; s >= 0; --s) {
            Var<T> fused = gab_forward(s, pyr.resized[static_cast<size_t>(s)],
                                       vms[static_cast<size_t>(s)], lower);
            out.fused[static_cast<size_t>(s)] = fused;
            running = (s == 3) ? fused : nn::add(running, fused);
            if (want_masks) {
                const std::string mh = "mask_head.stage" + std::to_string(s);
                out.stage_logits[static_cast<size_t>(s)] =
                    nn::conv2d(running, Var<T>::leaf(ps_->get(mh + ".weight")),
                               Var<T>::leaf(ps_->get(mh + ".bias")), 1, 1);
            }
            lower = fused;
        }
        out.feature = out.fused[0];
        if (want_masks) {
            out.seg_r = nn::sigmoid(out.stage_logits[0]);
            out.seg_full = nn::sigmoid(nn::bilinear(out.stage_logits[0], full_h, full_w));
        }
        return out;
    }

    // F -> per-pixel 2-class probabilities, laid out (R^2, 2)
    Var<T> project_to_distribution(const Var<T>& feature) const {
        Var<T> logits = nn::conv2d(feature, Var<T>::leaf(ps_->get("p_projection.weight")),
                                   Var<T>::leaf(ps_->get("p_projection.bias")));
        const int64_t r = logits.value().dim(1);
        Var<T> rows = nn::transpose2d(nn::reshape(logits, {2, r * r}));
        return nn::softmax_rows(rows);
    }

    int64_t c_f() const { return c_f_; }

private:
    int64_t r_, c_f_, group_out_;
    ParamStore<T>* ps_ = nullptr;
};

}  // namespace ichscnet
