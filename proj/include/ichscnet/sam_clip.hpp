#pragma once

#include <string>
#include <vector>

#include "ichscnet/encoders.hpp"
#include "ichscnet/image.hpp"
#include "ichscnet/nn.hpp"
#include "ichscnet/rng.hpp"

namespace ichscnet {

// Box plus seeded points drawn from the rough mask (foreground) and from
// inside the box but off the mask (background).
inline PromptSet synthesize_prompts(const BBox& bbox, const Mask& rough, uint64_t seed,
                                    int64_t k_fg = 3, int64_t k_bg = 1) {
    if (rough.empty_mask()) throw DataError("synthesize_prompts: empty rough mask");
    if (!bbox.valid()) throw DataError("synthesize_prompts: degenerate bbox");
    const double w = static_cast<double>(rough.width), h = static_cast<double>(rough.height);
    PromptSet ps;
    ps.x_min = static_cast<double>(bbox.x_min) / w;
    ps.y_min = static_cast<double>(bbox.y_min) / h;
    ps.x_max = static_cast<double>(bbox.x_max) / w;
    ps.y_max = static_cast<double>(bbox.y_max) / h;

    std::vector<int64_t> fg, bg;
    for (int64_t y = 0; y < rough.height; ++y)
        for (int64_t x = 0; x < rough.width; ++x) {
            if (rough.at(y, x)) fg.push_back(y * rough.width + x);
            else if (bbox.contains(x, y)) bg.push_back(y * rough.width + x);
        }

    Rng rng(seed, "prompts");
    auto push = [&](int64_t flat, bool is_fg) {
        PromptPoint pt;
        pt.x = (static_cast<double>(flat % rough.width) + 0.5) / w;
        pt.y = (static_cast<double>(flat / rough.width) + 0.5) / h;
        pt.is_foreground = is_fg;
        ps.points.push_back(pt);
    };
    for (int64_t i = 0; i < k_fg; ++i)
        push(fg[rng.below(static_cast<uint64_t>(fg.size()))], true);
    if (!bg.empty())
        for (int64_t i = 0; i < k_bg; ++i)
            push(bg[rng.below(static_cast<uint64_t>(bg.size()))], false);
    ps.validate();
    return ps;
}

// One cross-modal interaction module per pyramid scale: image-query /
// text-key-value attention forms the rough mask, then the shared decoder
// refines it under prompt guidance.
template <typename T>
class SamClipModule {
public:
    // The two halves register independently so ablations can drop either
    // path: with_attention covers the text-conditioned rough-mask branch,
    // with_decoder the prompt-guided refinement branch.
    SamClipModule(ParamStore<T>& ps, const PyramidEncoder<T>& pyr,
                  const ClipImageEncoder<T>* clip_img, const PromptEncoder<T>* prompt_enc,
                  const MaskDecoder<T>* decoder, int64_t r, int64_t d_a = 64, int64_t d_t = 64,
                  int64_t c_m = 32, bool with_attention = true, bool with_decoder = true)
        : r_(r), d_a_(d_a), c_m_(c_m), clip_img_(clip_img), prompt_enc_(prompt_enc),
          decoder_(decoder), ps_(&ps), with_attention_(with_attention),
          with_decoder_(with_decoder) {
        if (with_attention) {
            if (!clip_img) throw ConfigError("attention path needs the image embedder");
            for (int s = 0; s < 4; ++s) {
                const std::string base = "attention.scale" + std::to_string(s);
                const std::string g = base;
                ps.fanin_normal(base + ".q_proj.weight", g, Trainability::train,
                                {d_a, pyr.channels(s), 1, 1});
                ps.zeros(base + ".q_proj.bias", g, Trainability::train, {d_a});
                ps.fanin_normal(base + ".k_proj.weight", g, Trainability::train, {d_a, d_t});
                ps.zeros(base + ".k_proj.bias", g, Trainability::train, {d_a});
                ps.fanin_normal(base + ".v_proj.weight", g, Trainability::train, {d_a, d_t});
                ps.zeros(base + ".v_proj.bias", g, Trainability::train, {d_a});
                ps.fanin_normal(base + ".out.weight", g, Trainability::train,
                                {c_m, d_a, 1, 1});
                ps.zeros(base + ".out.bias", g, Trainability::train, {c_m});
                ps.ones(base + ".norm.gain", g, Trainability::train, {c_m});
                ps.zeros(base + ".norm.bias", g, Trainability::train, {c_m});
            }
        }
        if (with_decoder) {
            if (!prompt_enc || !decoder)
                throw ConfigError("decoder path needs prompt encoder and mask decoder");
            for (int s = 0; s < 4; ++s) {
                const std::string name = "mask_decoder.mclip_proj.scale" + std::to_string(s);
                ps.fanin_normal(name + ".weight", "mask_decoder", Trainability::fine_tune,
                                {pyr.channels(s), c_m, 1, 1});
                ps.zeros(name + ".bias", "mask_decoder", Trainability::fine_tune,
                         {pyr.channels(s)});
            }
        }
    }

    // test hook: suppress the attention branch so M_clip equals the frozen
    // image embedding exactly
    void set_zero_attention(bool v) { zero_attention_ = v; }

    // image_feat: resized pyramid level (C_s, R, R); text_emb: (L, d_t)
    Var<T> rough_mask(int scale, const Var<T>& image_feat, const Var<T>& text_emb) const {
        if (!with_attention_) throw ConfigError("attention path not built in this mode");
        if (text_emb.value().dim(0) < 1) throw ShapeError("rough_mask: empty text embedding");
        Var<T> residual = clip_img_->forward(scale, image_feat);
        if (zero_attention_) return residual;
        const std::string base = "attention.scale" + std::to_string(scale);
        auto p = [&](const std::string& n) { return Var<T>::leaf(ps_->get(base + n)); };

        Var<T> pooled = nn::maxpool2(image_feat);  // (C_s, R/2, R/2)
        Var<T> q_grid = nn::conv2d(pooled, p(".q_proj.weight"), p(".q_proj.bias"));
        const int64_t rh = r_ / 2;
        Var<T> q = nn::transpose2d(nn::reshape(q_grid, {d_a_, rh * rh}));  // (tokens, d_a)
        Var<T> k = nn::linear(text_emb, p(".k_proj.weight"), p(".k_proj.bias"));
        Var<T> v = nn::linear(text_emb, p(".v_proj.weight"), p(".v_proj.bias"));
        const T scale_qk = T(1) / static_cast<T>(std::sqrt(static_cast<double>(d_a_)));
        Var<T> att = nn::softmax_rows(
            nn::mul_const(nn::matmul(q, nn::transpose2d(k)), scale_qk));
        Var<T> mixed = nn::matmul(att, v);                                  // (tokens, d_a)
        Var<T> grid = nn::reshape(nn::transpose2d(mixed), {d_a_, rh, rh});
        Var<T> projected = nn::conv2d(grid, p(".out.weight"), p(".out.bias"));
        Var<T> up = nn::bilinear(projected, r_, r_);
        Var<T> normed = nn::channel_norm(up, p(".norm.gain"), p(".norm.bias"));
        return nn::add(normed, residual);
    }

    // rough feature grid -> single-channel probabilities under prompt guidance
    Var<T> valid_mask(int scale, const Var<T>& m_clip, const Var<T>& image_feat,
                      const PromptSet& prompts) const {
        if (!with_decoder_) throw ConfigError("decoder path not built in this mode");
        const std::string name = "mask_decoder.mclip_proj.scale" + std::to_string(scale);
        Var<T> proj = nn::conv2d(m_clip, Var<T>::leaf(ps_->get(name + ".weight")),
                                 Var<T>::leaf(ps_->get(name + ".bias")));
        Var<T> fused = nn::add(proj, image_feat);
        Var<T> prompt_emb = prompt_enc_->encode(prompts);
        Var<T> logits = decoder_->decode(scale, fused, prompt_emb);
        return nn::sigmoid(logits);
    }

    Var<T> run_scale(int scale, const FeaturePyramid<T>& pyr, const Var<T>& text_emb,
                     const BBox& bbox, const Mask& rough_raster, uint64_t prompt_seed,
                     int64_t k_fg = 3, int64_t k_bg = 1) const {
        const Var<T>& feat = pyr.resized[static_cast<size_t>(scale)];
        Var<T> m_clip = rough_mask(scale, feat, text_emb);
        PromptSet prompts = synthesize_prompts(bbox, rough_raster, prompt_seed, k_fg, k_bg);
        return valid_mask(scale, m_clip, feat, prompts);
    }

    int64_t c_m() const { return c_m_; }

private:
    int64_t r_, d_a_, c_m_;
    const ClipImageEncoder<T>* clip_img_;
    const PromptEncoder<T>* prompt_enc_;
    const MaskDecoder<T>* decoder_;
    ParamStore<T>* ps_ = nullptr;
    bool with_attention_ = true, with_decoder_ = true;
    bool zero_attention_ = false;
};

}  // namespace ichscnet
