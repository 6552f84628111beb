#pragma once

#include <array>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ichscnet/classifier.hpp"
#include "ichscnet/losses.hpp"
#include "ichscnet/mtff.hpp"
#include "ichscnet/sam_clip.hpp"
#include "ichscnet/text.hpp"

namespace ichscnet {

enum class Mode {
    full,
    cla_only,
    seg_only,
    sam_only,
    clip_only,
    sam_clip_no_mtff,
    clip_plus_mtff,
    sam_plus_mtff,
};

inline constexpr std::array<Mode, 8> kAllModes = {
    Mode::full,      Mode::cla_only,         Mode::seg_only,       Mode::sam_only,
    Mode::clip_only, Mode::sam_clip_no_mtff, Mode::clip_plus_mtff, Mode::sam_plus_mtff,
};

inline const char* to_string(Mode m) {
    switch (m) {
        case Mode::full: return "full";
        case Mode::cla_only: return "cla_only";
        case Mode::seg_only: return "seg_only";
        case Mode::sam_only: return "sam_only";
        case Mode::clip_only: return "clip_only";
        case Mode::sam_clip_no_mtff: return "sam_clip_no_mtff";
        case Mode::clip_plus_mtff: return "clip_plus_mtff";
        case Mode::sam_plus_mtff: return "sam_plus_mtff";
    }
    throw ConfigError("unknown mode value");
}

inline Mode parse_mode(const std::string& s) {
    for (Mode m : kAllModes)
        if (s == to_string(m)) return m;
    throw ConfigError("unknown mode: " + s);
}

// text-conditioned attention branch producing the rough mask
inline bool mode_uses_clip_path(Mode m) {
    return m != Mode::sam_only && m != Mode::sam_plus_mtff;
}

// prompt-guided decoder branch producing the valid mask
inline bool mode_uses_sam_path(Mode m) {
    return m != Mode::clip_only && m != Mode::clip_plus_mtff;
}

inline bool mode_uses_mtff(Mode m) {
    return m == Mode::full || m == Mode::cla_only || m == Mode::seg_only ||
           m == Mode::clip_plus_mtff || m == Mode::sam_plus_mtff;
}

inline bool mode_has_seg_head(Mode m) { return m != Mode::cla_only; }
inline bool mode_has_classifier(Mode m) { return m != Mode::seg_only; }
inline bool mode_uses_mta(Mode m) {
    return mode_has_seg_head(m) && mode_has_classifier(m);
}

struct ModelConfig {
    Mode mode = Mode::full;
    int64_t image_size = 128;
    ClassifierConfig classifier = {};
    int64_t d_t = 64, d_p = 64, d_a = 64, c_m = 32, c_f = 32;
    int64_t k_fg = 3, k_bg = 1;
};

template <typename T>
struct CaseInput {
    Tensor<T> image;  // (1, H, W) in [0,1]
    std::string text;
    BBox bbox;
    Mask rough;
    uint64_t prompt_seed = 0;
};

template <typename T>
struct ForwardOutputs {
    std::vector<Var<T>> m_clips;      // per scale (C_m, R, R)
    std::vector<Var<T>> vms;          // per scale (1, R, R) probabilities
    std::vector<Var<T>> stage_logits; // 4 with the fusion stack, 1 in concat modes
    std::vector<Var<T>> stage_probs;
    Var<T> seg_full;                  // (1, H, W)
    Var<T> seg_r;                     // (1, R, R)
    Var<T> feature;                   // (C_F, R, R)
    Var<T> cla_logits;                // (2)
    Var<T> cla_probs;                 // (2)
    Var<T> p_dist;                    // (R^2, 2)
};

// The whole network for one ablation mode.  Construction registers exactly
// the parameter groups that mode trains, so checkpoints are mode-shaped.
template <typename T>
class Model {
public:
    Model(const ModelConfig& cfg, uint64_t seed,
          const std::map<std::string, Trainability>& trainability_overrides = {})
        : cfg_(cfg), r_(cfg.image_size / 2), store_(seed, trainability_overrides) {
        if (cfg.image_size < 16 || cfg.image_size % 8 != 0)
            throw ConfigError("image_size must be >= 16 and divisible by 8");
        cfg_.classifier.validate();
        pyramid_ = std::make_unique<PyramidEncoder<T>>(store_);
        const bool clip = mode_uses_clip_path(cfg.mode);
        const bool sam = mode_uses_sam_path(cfg.mode);
        if (clip) {
            text_ = std::make_unique<TextEncoder<T>>(store_, cfg.d_t);
            clip_img_ = std::make_unique<ClipImageEncoder<T>>(store_, *pyramid_, cfg.c_m);
        } else {
            for (int s = 0; s < 4; ++s)
                store_.normal("rough_const.scale" + std::to_string(s), "rough_const",
                              Trainability::train, {cfg.c_m, r_, r_}, T(0.1));
        }
        if (sam) {
            prompt_ = std::make_unique<PromptEncoder<T>>(store_, cfg.d_p);
            decoder_ = std::make_unique<MaskDecoder<T>>(store_, *pyramid_, *prompt_, r_,
                                                        cfg.d_p);
        } else {
            for (int s = 0; s < 4; ++s) {
                const std::string base = "vm_proj.scale" + std::to_string(s);
                store_.fanin_normal(base + ".weight", "vm_proj", Trainability::train,
                                    {1, cfg.c_m, 1, 1});
                store_.zeros(base + ".bias", "vm_proj", Trainability::train, {1});
            }
        }
        sam_clip_ = std::make_unique<SamClipModule<T>>(
            store_, *pyramid_, clip_img_.get(), prompt_.get(), decoder_.get(), r_, cfg.d_a,
            cfg.d_t, cfg.c_m, clip, sam);
        if (mode_uses_mtff(cfg.mode)) {
            mtff_ = std::make_unique<MtffModule<T>>(store_, *pyramid_, r_, cfg.c_f, 8,
                                                    mode_has_seg_head(cfg.mode),
                                                    mode_uses_mta(cfg.mode));
        } else {
            int64_t in_ch = 4;  // the four single-channel valid masks
            for (int s = 0; s < 4; ++s) in_ch += pyramid_->channels(s);
            store_.fanin_normal("concat_fusion.fuse.weight", "concat_fusion",
                                Trainability::train, {cfg.c_f, in_ch, 1, 1});
            store_.zeros("concat_fusion.fuse.bias", "concat_fusion", Trainability::train,
                         {cfg.c_f});
            store_.fanin_normal("concat_fusion.mask_head.weight", "concat_fusion",
                                Trainability::train, {1, cfg.c_f, 3, 3});
            store_.zeros("concat_fusion.mask_head.bias", "concat_fusion",
                         Trainability::train, {1});
            store_.fanin_normal("p_projection.weight", "p_projection", Trainability::train,
                                {2, cfg.c_f, 1, 1});
            store_.zeros("p_projection.bias", "p_projection", Trainability::train, {2});
        }
        if (mode_has_classifier(cfg.mode))
            classifier_ = std::make_unique<Classifier<T>>(store_, cfg.c_f, cfg.classifier);
    }

    ForwardOutputs<T> forward(const CaseInput<T>& in) {
        if (in.image.rank() != 3 || in.image.dim(0) != 1 ||
            in.image.dim(1) != cfg_.image_size || in.image.dim(2) != cfg_.image_size)
            throw ShapeError("forward: image must be (1, H, H) at the configured size");
        const bool clip = mode_uses_clip_path(cfg_.mode);
        const bool sam = mode_uses_sam_path(cfg_.mode);

        ForwardOutputs<T> out;
        FeaturePyramid<T> pyr = pyramid_->forward(Var<T>::constant(in.image), r_);
        Var<T> text_emb;
        if (clip) text_emb = text_->encode(in.text);
        PromptSet prompts;
        if (sam)
            prompts = synthesize_prompts(in.bbox, in.rough, in.prompt_seed, cfg_.k_fg,
                                         cfg_.k_bg);

        for (int s = 0; s < 4; ++s) {
            Var<T> m_clip =
                clip ? sam_clip_->rough_mask(s, pyr.resized[static_cast<size_t>(s)], text_emb)
                     : Var<T>::leaf(store_.get("rough_const.scale" + std::to_string(s)));
            Var<T> vm;
            if (sam) {
                vm = sam_clip_->valid_mask(s, m_clip, pyr.resized[static_cast<size_t>(s)],
                                           prompts);
            } else {
                const std::string base = "vm_proj.scale" + std::to_string(s);
                vm = nn::sigmoid(nn::conv2d(m_clip,
                                            Var<T>::leaf(store_.get(base + ".weight")),
                                            Var<T>::leaf(store_.get(base + ".bias"))));
            }
            out.m_clips.push_back(m_clip);
            out.vms.push_back(vm);
        }

        const bool want_masks = mode_has_seg_head(cfg_.mode);
        if (mtff_) {
            auto so = mtff_->forward(pyr, out.vms, cfg_.image_size, cfg_.image_size,
                                     want_masks);
            out.feature = so.feature;
            if (want_masks) {
                out.stage_logits = so.stage_logits;
                for (const auto& l : out.stage_logits)
                    out.stage_probs.push_back(nn::sigmoid(l));
                out.seg_r = so.seg_r;
                out.seg_full = so.seg_full;
            }
        } else {
            std::vector<Var<T>> xs;
            for (int s = 0; s < 4; ++s) xs.push_back(pyr.resized[static_cast<size_t>(s)]);
            for (int s = 0; s < 4; ++s) xs.push_back(out.vms[static_cast<size_t>(s)]);
            Var<T> fused = nn::smooth_silu(
                nn::conv2d(nn::concat_ch<T>(xs),
                           Var<T>::leaf(store_.get("concat_fusion.fuse.weight")),
                           Var<T>::leaf(store_.get("concat_fusion.fuse.bias"))));
            out.feature = fused;
            Var<T> logits =
                nn::conv2d(fused, Var<T>::leaf(store_.get("concat_fusion.mask_head.weight")),
                           Var<T>::leaf(store_.get("concat_fusion.mask_head.bias")), 1, 1);
            out.stage_logits = {logits};
            out.stage_probs = {nn::sigmoid(logits)};
            out.seg_r = out.stage_probs[0];
            out.seg_full =
                nn::sigmoid(nn::bilinear(logits, cfg_.image_size, cfg_.image_size));
        }

        if (classifier_) {
            out.cla_logits = classifier_->classify(out.feature);
            out.cla_probs = predict_probability(out.cla_logits);
        }
        if (mode_uses_mta(cfg_.mode)) {
            out.p_dist = mtff_ ? mtff_->project_to_distribution(out.feature)
                               : project_concat(out.feature);
        }
        return out;
    }

    const ModelConfig& config() const { return cfg_; }
    int64_t r() const { return r_; }
    ParamStore<T>& store() { return store_; }
    const ParamStore<T>& store() const { return store_; }
    SamClipModule<T>& sam_clip() { return *sam_clip_; }
    const TextEncoder<T>* text_encoder() const { return text_.get(); }

private:
    Var<T> project_concat(const Var<T>& feature) {
        Var<T> logits = nn::conv2d(feature, Var<T>::leaf(store_.get("p_projection.weight")),
                                   Var<T>::leaf(store_.get("p_projection.bias")));
        const int64_t r = logits.value().dim(1);
        Var<T> rows = nn::transpose2d(nn::reshape(logits, {2, r * r}));
        return nn::softmax_rows(rows);
    }

    ModelConfig cfg_;
    int64_t r_;
    ParamStore<T> store_;
    std::unique_ptr<PyramidEncoder<T>> pyramid_;
    std::unique_ptr<TextEncoder<T>> text_;
    std::unique_ptr<ClipImageEncoder<T>> clip_img_;
    std::unique_ptr<PromptEncoder<T>> prompt_;
    std::unique_ptr<MaskDecoder<T>> decoder_;
    std::unique_ptr<SamClipModule<T>> sam_clip_;
    std::unique_ptr<MtffModule<T>> mtff_;
    std::unique_ptr<Classifier<T>> classifier_;
};

}  // namespace ichscnet
