#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "ichscnet/classifier.hpp"
#include "ichscnet/losses.hpp"
#include "ichscnet/network.hpp"

namespace ichscnet {

enum class Precision { single, dbl };

inline Precision parse_precision(const std::string& s) {
    if (s == "single") return Precision::single;
    if (s == "double") return Precision::dbl;
    throw ConfigError("unknown precision: " + s);
}

inline const char* to_string(Precision p) {
    return p == Precision::single ? "single" : "double";
}

// Flat run configuration; the JSON document uses exactly these field names.
struct RunConfig {
    std::string mode = "full";
    std::string dataset_dir;
    std::string out_dir = "run";
    double lr = 1e-4;
    double weight_decay = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    int64_t batch_size = 8;  // paper setting is 32; desk default keeps smoke sets viable
    int64_t epochs = 25;
    int64_t folds = 5;
    uint64_t seed = 0;
    std::array<double, 4> gamma = {1.0, 0.75, 0.5, 0.25};
    double alpha = 0.2;
    double beta = 0.8;
    double epsilon_smooth = 1e-6;
    double epsilon_prob = 1e-6;
    std::string mta_variant = "paper";
    std::string precision = "single";
    std::string classifier_preset = "desk";
    double grad_clip = 5.0;       // 0 disables clipping
    int64_t max_steps = 0;        // 0 = run all epochs; otherwise stop each fold early
    bool train_eq_val = false;    // overfit harness: one split with val == train

    void validate() const {
        parse_mode(mode);
        parse_precision(precision);
        parse_mta_variant(mta_variant);
        if (classifier_preset != "desk" && classifier_preset != "paper121")
            throw ConfigError("classifier_preset must be desk or paper121");
        if (dataset_dir.empty()) throw ConfigError("dataset_dir is required");
        if (lr <= 0) throw ConfigError("lr must be positive");
        if (weight_decay < 0) throw ConfigError("weight_decay must be nonnegative");
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
            throw ConfigError("betas must lie in [0, 1)");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (train_eq_val) {
            if (folds != 1) throw ConfigError("train_eq_val runs use folds = 1");
        } else if (folds < 2) {
            throw ConfigError("folds must be >= 2");
        }
        for (double g : gamma)
            if (g < 0) throw ConfigError("gamma entries must be nonnegative");
        if (alpha < 0 || beta < 0) throw ConfigError("alpha and beta must be nonnegative");
        if (epsilon_smooth <= 0 || epsilon_prob <= 0)
            throw ConfigError("epsilons must be positive");
        if (grad_clip < 0) throw ConfigError("grad_clip must be nonnegative");
        if (max_steps < 0) throw ConfigError("max_steps must be nonnegative");
    }

    ClassifierConfig classifier_config() const {
        return classifier_preset == "paper121" ? ClassifierConfig::paper121()
                                               : ClassifierConfig::desk();
    }

    template <typename T>
    LossWeights<T> loss_weights() const {
        LossWeights<T> w;
        for (size_t i = 0; i < 4; ++i) w.gamma[i] = static_cast<T>(gamma[i]);
        w.alpha = static_cast<T>(alpha);
        w.beta = static_cast<T>(beta);
        w.epsilon_smooth = static_cast<T>(epsilon_smooth);
        w.epsilon_prob = static_cast<T>(epsilon_prob);
        w.mta_variant = parse_mta_variant(mta_variant);
        const Mode m = parse_mode(mode);
        if (m == Mode::cla_only) w.alpha = T(0);
        if (m == Mode::seg_only) w.beta = T(0);
        return w;
    }

    nlohmann::json to_json() const {
        return nlohmann::json{{"mode", mode},
                              {"dataset_dir", dataset_dir},
                              {"out_dir", out_dir},
                              {"lr", lr},
                              {"weight_decay", weight_decay},
                              {"beta1", beta1},
                              {"beta2", beta2},
                              {"batch_size", batch_size},
                              {"epochs", epochs},
                              {"folds", folds},
                              {"seed", seed},
                              {"gamma", gamma},
                              {"alpha", alpha},
                              {"beta", beta},
                              {"epsilon_smooth", epsilon_smooth},
                              {"epsilon_prob", epsilon_prob},
                              {"mta_variant", mta_variant},
                              {"precision", precision},
                              {"classifier_preset", classifier_preset},
                              {"grad_clip", grad_clip},
                              {"max_steps", max_steps},
                              {"train_eq_val", train_eq_val}};
    }

    static RunConfig from_json(const nlohmann::json& j) {
        if (!j.is_object()) throw ConfigError("config must be a JSON object");
        RunConfig c;
        const nlohmann::json known = c.to_json();
        for (const auto& [key, value] : j.items()) {
            if (!known.contains(key)) throw ConfigError("unknown config key: " + key);
            (void)value;
        }
        try {
            if (j.contains("mode")) j.at("mode").get_to(c.mode);
            if (j.contains("dataset_dir")) j.at("dataset_dir").get_to(c.dataset_dir);
            if (j.contains("out_dir")) j.at("out_dir").get_to(c.out_dir);
            if (j.contains("lr")) j.at("lr").get_to(c.lr);
            if (j.contains("weight_decay")) j.at("weight_decay").get_to(c.weight_decay);
            if (j.contains("beta1")) j.at("beta1").get_to(c.beta1);
            if (j.contains("beta2")) j.at("beta2").get_to(c.beta2);
            if (j.contains("batch_size")) j.at("batch_size").get_to(c.batch_size);
            if (j.contains("epochs")) j.at("epochs").get_to(c.epochs);
            if (j.contains("folds")) j.at("folds").get_to(c.folds);
            if (j.contains("seed")) j.at("seed").get_to(c.seed);
            if (j.contains("gamma")) {
                const auto& g = j.at("gamma");
                if (!g.is_array() || g.size() != 4)
                    throw ConfigError("gamma must be an array of 4 numbers");
                for (size_t i = 0; i < 4; ++i) c.gamma[i] = g[i].get<double>();
            }
            if (j.contains("alpha")) j.at("alpha").get_to(c.alpha);
            if (j.contains("beta")) j.at("beta").get_to(c.beta);
            if (j.contains("epsilon_smooth"))
                j.at("epsilon_smooth").get_to(c.epsilon_smooth);
            if (j.contains("epsilon_prob")) j.at("epsilon_prob").get_to(c.epsilon_prob);
            if (j.contains("mta_variant")) j.at("mta_variant").get_to(c.mta_variant);
            if (j.contains("precision")) j.at("precision").get_to(c.precision);
            if (j.contains("classifier_preset"))
                j.at("classifier_preset").get_to(c.classifier_preset);
            if (j.contains("grad_clip")) j.at("grad_clip").get_to(c.grad_clip);
            if (j.contains("max_steps")) j.at("max_steps").get_to(c.max_steps);
            if (j.contains("train_eq_val")) j.at("train_eq_val").get_to(c.train_eq_val);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("config field type error: ") + e.what());
        }
        return c;
    }

    static RunConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file: " + path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config parse error in " + path + ": " + e.what());
        }
        return from_json(j);
    }

    // "key=value" with the value parsed as JSON; bare words fall back to strings
    void apply_override(const std::string& kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("override must look like key=value: " + kv);
        const std::string key = kv.substr(0, eq);
        const std::string raw = kv.substr(eq + 1);
        nlohmann::json j = to_json();
        if (!j.contains(key)) throw ConfigError("unknown config key: " + key);
        nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
        if (value.is_discarded() || (j.at(key).is_string() && !value.is_string()))
            value = raw;
        j[key] = value;
        *this = from_json(j);
    }
};

}  // namespace ichscnet
