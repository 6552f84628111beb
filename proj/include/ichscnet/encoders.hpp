#pragma once

#include <string>
#include <vector>

#include "ichscnet/image.hpp"
#include "ichscnet/nn.hpp"
#include "ichscnet/params.hpp"
#include "ichscnet/text.hpp"

namespace ichscnet {

template <typename T>
struct FeaturePyramid {
    std::vector<Var<T>> levels;   // I^0..I^3, halving spatial, doubling channels
    std::vector<Var<T>> resized;  // each level at R x R
};

struct PromptPoint {
    double x = 0, y = 0;  // normalized [0,1]
    bool is_foreground = true;
};

struct PromptSet {
    double x_min = 0, y_min = 0, x_max = 0, y_max = 0;  // normalized
    std::vector<PromptPoint> points;

    void validate() const {
        if (!(x_min < x_max) || !(y_min < y_max))
            throw DataError("PromptSet: degenerate box");
        auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
        if (!in01(x_min) || !in01(x_max) || !in01(y_min) || !in01(y_max))
            throw DataError("PromptSet: box outside [0,1]");
        if (points.empty()) throw DataError("PromptSet: needs at least one point");
        for (const auto& p : points)
            if (!in01(p.x) || !in01(p.y)) throw DataError("PromptSet: point outside [0,1]");
    }
};

// ---------------------------------------------------------------------------
// four-scale convolutional stem
// ---------------------------------------------------------------------------

template <typename T>
class PyramidEncoder {
public:
    PyramidEncoder(ParamStore<T>& ps, int64_t c0 = 16) : c0_(c0) {
        auto reg = [&](const std::string& name, std::vector<int64_t> shape) {
            if (shape.size() == 4) ps.fanin_normal(name, "pyramid", Trainability::train, shape);
            else ps.zeros(name, "pyramid", Trainability::train, shape);
        };
        reg("pyramid.stem.weight", {c0, 1, 3, 3});
        reg("pyramid.stem.bias", {c0});
        int64_t c = c0;
        for (int s = 1; s <= 3; ++s) {
            reg("pyramid.down" + std::to_string(s) + ".weight", {2 * c, c, 3, 3});
            reg("pyramid.down" + std::to_string(s) + ".bias", {2 * c});
            c *= 2;
        }
        ps_ = &ps;
    }

    int64_t channels(int scale) const { return c0_ << scale; }

    FeaturePyramid<T> forward(const Var<T>& image, int64_t r) const {
        const int64_t h = image.value().dim(1), w = image.value().dim(2);
        if (h % 8 || w % 8) throw ShapeError("build_pyramid: dimensions must divide by 8");
        FeaturePyramid<T> pyr;
        auto p = [&](const std::string& n) { return Var<T>::leaf(ps_->get(n)); };
        Var<T> x = nn::smooth_silu(
            nn::conv2d(image, p("pyramid.stem.weight"), p("pyramid.stem.bias"), 1, 1));
        pyr.levels.push_back(x);
        for (int s = 1; s <= 3; ++s) {
            x = nn::smooth_silu(nn::conv2d(x, p("pyramid.down" + std::to_string(s) + ".weight"),
                                           p("pyramid.down" + std::to_string(s) + ".bias"), 2,
                                           1));
            pyr.levels.push_back(x);
        }
        for (const auto& lvl : pyr.levels) pyr.resized.push_back(nn::bilinear(lvl, r, r));
        return pyr;
    }

private:
    int64_t c0_;
    ParamStore<T>* ps_ = nullptr;
};

// ---------------------------------------------------------------------------
// frozen CLIP image stand-in: per-scale two-layer 1x1 projection to C_m
// ---------------------------------------------------------------------------

template <typename T>
class ClipImageEncoder {
public:
    ClipImageEncoder(ParamStore<T>& ps, const PyramidEncoder<T>& pyr, int64_t c_m = 32,
                     int64_t hidden = 32)
        : c_m_(c_m) {
        for (int s = 0; s < 4; ++s) {
            const std::string base = "clip_image.scale" + std::to_string(s);
            ps.fanin_normal(base + ".proj1.weight", "clip_image", Trainability::frozen,
                            {hidden, pyr.channels(s), 1, 1});
            ps.zeros(base + ".proj1.bias", "clip_image", Trainability::frozen, {hidden});
            ps.fanin_normal(base + ".proj2.weight", "clip_image", Trainability::frozen,
                            {c_m, hidden, 1, 1});
            ps.zeros(base + ".proj2.bias", "clip_image", Trainability::frozen, {c_m});
        }
        ps_ = &ps;
    }

    Var<T> forward(int scale, const Var<T>& resized_feat) const {
        const std::string base = "clip_image.scale" + std::to_string(scale);
        auto p = [&](const std::string& n) { return Var<T>::leaf(ps_->get(base + n)); };
        Var<T> h = nn::smooth_silu(
            nn::conv2d(resized_feat, p(".proj1.weight"), p(".proj1.bias")));
        return nn::conv2d(h, p(".proj2.weight"), p(".proj2.bias"));
    }

    int64_t c_m() const { return c_m_; }

private:
    int64_t c_m_;
    ParamStore<T>* ps_ = nullptr;
};

// ---------------------------------------------------------------------------
// frozen prompt encoder: random-Fourier positional code + type embeddings
// type rows: 0 = box corner min, 1 = box corner max, 2 = fg point, 3 = bg point
// ---------------------------------------------------------------------------

template <typename T>
class PromptEncoder {
public:
    PromptEncoder(ParamStore<T>& ps, int64_t d_p = 64) : d_p_(d_p) {
        if (d_p % 2) throw ConfigError("prompt dimension must be even");
        fourier_ = &ps.normal("prompt_encoder.fourier", "prompt_encoder", Trainability::frozen,
                              {2, d_p / 2}, 1.0);
        types_ = &ps.normal("prompt_encoder.types", "prompt_encoder", Trainability::frozen,
                            {4, d_p}, 1.0);
        ps_ = &ps;
    }

    // one (1, d_p) positional row for a normalized coordinate
    Var<T> positional(double x, double y) const {
        Tensor<T> coord({1, 2});
        coord[0] = static_cast<T>(2.0 * 3.14159265358979323846 * x);
        coord[1] = static_cast<T>(2.0 * 3.14159265358979323846 * y);
        auto base = nn::matmul(Var<T>::constant(coord), Var<T>::leaf(*fourier_));
        return nn::concat_cols<T>({nn::sin_op(base), nn::cos_op(base)});
    }

    // (2 + k, d_p) embeddings: two box corners then the points
    Var<T> encode(const PromptSet& prompts) const {
        prompts.validate();
        std::vector<Var<T>> rows;
        rows.push_back(nn::add(positional(prompts.x_min, prompts.y_min),
                               embed_tokens<T>({0}, *types_)));
        rows.push_back(nn::add(positional(prompts.x_max, prompts.y_max),
                               embed_tokens<T>({1}, *types_)));
        for (const auto& pt : prompts.points)
            rows.push_back(nn::add(positional(pt.x, pt.y),
                                   embed_tokens<T>({pt.is_foreground ? 2 : 3}, *types_)));
        return nn::concat_rows(rows);
    }

    // fixed positional grid over R x R pixel centers as a plain tensor
    Tensor<T> positional_grid(int64_t r) const {
        Tensor<T> grid({d_p_, r, r});
        const int64_t half = d_p_ / 2;
        for (int64_t y = 0; y < r; ++y)
            for (int64_t x = 0; x < r; ++x) {
                const double nx = (static_cast<double>(x) + 0.5) / static_cast<double>(r);
                const double ny = (static_cast<double>(y) + 0.5) / static_cast<double>(r);
                for (int64_t j = 0; j < half; ++j) {
                    const double v = 2.0 * 3.14159265358979323846 *
                                     (nx * static_cast<double>(fourier_->value.at2(0, j)) +
                                      ny * static_cast<double>(fourier_->value.at2(1, j)));
                    grid.at3(j, y, x) = static_cast<T>(std::sin(v));
                    grid.at3(half + j, y, x) = static_cast<T>(std::cos(v));
                }
            }
        return grid;
    }

    int64_t d_p() const { return d_p_; }

private:
    int64_t d_p_;
    Param<T>* fourier_ = nullptr;
    Param<T>* types_ = nullptr;
    ParamStore<T>* ps_ = nullptr;
};

// ---------------------------------------------------------------------------
// fine-tuned mask decoder, shared across scales.  Two two-way attention
// rounds between prompt tokens and the flattened image grid, then a small
// per-pixel head back to single-channel logits.
// ---------------------------------------------------------------------------

template <typename T>
class MaskDecoder {
public:
    MaskDecoder(ParamStore<T>& ps, const PyramidEncoder<T>& pyr, const PromptEncoder<T>& pe,
                int64_t r, int64_t d = 64)
        : d_(d), r_(r) {
        if (d != pe.d_p())
            throw ConfigError("mask decoder width must match the prompt embedding width");
        const char* g = "mask_decoder";
        for (int s = 0; s < 4; ++s) {
            const std::string base = "mask_decoder.in_proj.scale" + std::to_string(s);
            ps.fanin_normal(base + ".weight", g, Trainability::fine_tune,
                            {d, pyr.channels(s), 1, 1});
            ps.zeros(base + ".bias", g, Trainability::fine_tune, {d});
        }
        for (int rd = 0; rd < 2; ++rd) {
            const std::string base = "mask_decoder.round" + std::to_string(rd);
            auto lin = [&](const std::string& n, int64_t dout, int64_t din) {
                ps.fanin_normal(base + n + ".weight", g, Trainability::fine_tune, {dout, din});
                ps.zeros(base + n + ".bias", g, Trainability::fine_tune, {dout});
            };
            lin(".t2i.q", d, d);
            lin(".t2i.k", d, d);
            lin(".mlp.fc1", d, d);
            lin(".mlp.fc2", d, d);
            lin(".i2t.q", d, d);
            lin(".i2t.k", d, d);
        }
        ps.fanin_normal("mask_decoder.head.conv1.weight", g, Trainability::fine_tune,
                        {8, d, 3, 3});
        ps.zeros("mask_decoder.head.conv1.bias", g, Trainability::fine_tune, {8});
        ps.fanin_normal("mask_decoder.head.conv2.weight", g, Trainability::fine_tune,
                        {1, 8, 1, 1});
        ps.zeros("mask_decoder.head.conv2.bias", g, Trainability::fine_tune, {1});
        pe_grid_ = pe.positional_grid(r);
        ps_ = &ps;
    }

    // image_feat: (C_s, R, R); prompt_emb: (n_p, d).  Returns (1, R, R) logits.
    Var<T> decode(int scale, const Var<T>& image_feat, const Var<T>& prompt_emb) const {
        if (image_feat.value().dim(1) != r_ || image_feat.value().dim(2) != r_)
            throw ShapeError("decode_mask: expected spatial size " + std::to_string(r_));
        auto p = [&](const std::string& n) { return Var<T>::leaf(ps_->get(n)); };
        const std::string in_base = "mask_decoder.in_proj.scale" + std::to_string(scale);
        Var<T> img = nn::conv2d(image_feat, p(in_base + ".weight"), p(in_base + ".bias"));
        auto pe = Var<T>::constant(pe_grid_);

        const T scale_qk = T(1) / static_cast<T>(std::sqrt(static_cast<double>(d_)));
        Var<T> tok = prompt_emb;
        for (int rd = 0; rd < 2; ++rd) {
            const std::string base = "mask_decoder.round" + std::to_string(rd);
            auto lin = [&](const std::string& n, const Var<T>& x) {
                return nn::linear(x, p(base + n + ".weight"), p(base + n + ".bias"));
            };
            Var<T> img_pe_flat = nn::transpose2d(
                nn::reshape(nn::add(img, pe), {d_, r_ * r_}));          // (R^2, d)
            Var<T> img_flat = nn::transpose2d(nn::reshape(img, {d_, r_ * r_}));

            // tokens attend to the image
            Var<T> q = lin(".t2i.q", tok);
            Var<T> k = lin(".t2i.k", img_pe_flat);
            Var<T> att = nn::softmax_rows(
                nn::mul_const(nn::matmul(q, nn::transpose2d(k)), scale_qk));
            tok = nn::add(tok, nn::matmul(att, img_flat));
            Var<T> hidden = nn::smooth_silu(lin(".mlp.fc1", tok));
            tok = nn::add(tok, lin(".mlp.fc2", hidden));

            // image attends to the tokens
            Var<T> q2 = lin(".i2t.q", img_pe_flat);
            Var<T> k2 = lin(".i2t.k", tok);
            Var<T> att2 = nn::softmax_rows(
                nn::mul_const(nn::matmul(q2, nn::transpose2d(k2)), scale_qk));
            Var<T> upd = nn::reshape(nn::transpose2d(nn::matmul(att2, tok)), {d_, r_, r_});
            img = nn::add(img, upd);
        }

        Var<T> h = nn::smooth_silu(nn::conv2d(img, p("mask_decoder.head.conv1.weight"),
                                              p("mask_decoder.head.conv1.bias"), 1, 1));
        return nn::conv2d(h, p("mask_decoder.head.conv2.weight"),
                          p("mask_decoder.head.conv2.bias"));
    }

private:
    int64_t d_, r_;
    Tensor<T> pe_grid_;
    ParamStore<T>* ps_ = nullptr;
};

}  // namespace ichscnet
