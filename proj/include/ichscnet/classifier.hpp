#pragma once

#include <string>
#include <vector>

#include "ichscnet/nn.hpp"
#include "ichscnet/params.hpp"

namespace ichscnet {

// Densely connected convolutional head: each layer contributes growth_rate
// new channels, transitions halve channels and spatial size, global average
// pooling feeds a 2-logit linear map.
struct ClassifierConfig {
    std::vector<int> layers_per_block = {3, 3};
    int64_t growth_rate = 8;

    static ClassifierConfig desk() { return {}; }

    // DenseNet-121 block structure behind the same contract
    static ClassifierConfig paper121() {
        ClassifierConfig c;
        c.layers_per_block = {6, 12, 24, 16};
        c.growth_rate = 32;
        return c;
    }

    void validate() const {
        if (layers_per_block.empty() || growth_rate < 1)
            throw ConfigError("classifier config: positive sizes required");
        for (int l : layers_per_block)
            if (l < 1) throw ConfigError("classifier config: positive sizes required");
    }
};

template <typename T>
class Classifier {
public:
    Classifier(ParamStore<T>& ps, int64_t in_channels, ClassifierConfig cfg = {})
        : cfg_(std::move(cfg)), ps_(&ps) {
        cfg_.validate();
        const char* g = "classifier";
        int64_t c = in_channels;
        for (size_t b = 0; b < cfg_.layers_per_block.size(); ++b) {
            for (int l = 0; l < cfg_.layers_per_block[b]; ++l) {
                const std::string base =
                    "classifier.block" + std::to_string(b) + ".layer" + std::to_string(l);
                ps.fanin_normal(base + ".weight", g, Trainability::train,
                                {cfg_.growth_rate, c, 3, 3});
                ps.zeros(base + ".bias", g, Trainability::train, {cfg_.growth_rate});
                c += cfg_.growth_rate;
            }
            if (b + 1 < cfg_.layers_per_block.size()) {
                const std::string base = "classifier.transition" + std::to_string(b);
                ps.fanin_normal(base + ".weight", g, Trainability::train, {c / 2, c, 1, 1});
                ps.zeros(base + ".bias", g, Trainability::train, {c / 2});
                c /= 2;
            }
        }
        ps.fanin_normal("classifier.head.weight", g, Trainability::train, {2, c});
        ps.zeros("classifier.head.bias", g, Trainability::train, {2});
        final_channels_ = c;
    }

    // F -> (2) logits: (logit_good, logit_poor)
    Var<T> classify(const Var<T>& feature) const {
        auto p = [&](const std::string& n) { return Var<T>::leaf(ps_->get(n)); };
        Var<T> x = feature;
        for (size_t b = 0; b < cfg_.layers_per_block.size(); ++b) {
            for (int l = 0; l < cfg_.layers_per_block[b]; ++l) {
                const std::string base =
                    "classifier.block" + std::to_string(b) + ".layer" + std::to_string(l);
                Var<T> fresh = nn::smooth_silu(
                    nn::conv2d(x, p(base + ".weight"), p(base + ".bias"), 1, 1));
                x = nn::concat_ch<T>({x, fresh});
            }
            if (b + 1 < cfg_.layers_per_block.size()) {
                const std::string base = "classifier.transition" + std::to_string(b);
                x = nn::avgpool2(
                    nn::smooth_silu(nn::conv2d(x, p(base + ".weight"), p(base + ".bias"))));
            }
        }
        Var<T> pooled = nn::reshape(nn::global_avg_pool(x), {1, final_channels_});
        Var<T> logits = nn::linear(pooled, p("classifier.head.weight"),
                                   p("classifier.head.bias"));
        return nn::reshape(logits, {2});
    }

    int64_t final_channels() const { return final_channels_; }

private:
    ClassifierConfig cfg_;
    ParamStore<T>* ps_ = nullptr;
    int64_t final_channels_ = 0;
};

// softmax over the 2 logits: returns (p_good, p_poor)
template <typename T>
Var<T> predict_probability(const Var<T>& logits) {
    if (logits.value().numel() != 2) throw ShapeError("predict_probability: need 2 logits");
    return nn::reshape(nn::softmax_rows(nn::reshape(logits, {1, 2})), {2});
}

}  // namespace ichscnet
