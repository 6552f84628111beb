#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ichscnet/autodiff.hpp"
#include "ichscnet/rng.hpp"

namespace ichscnet {

// Registry of named parameters.  Each tensor is initialized from an RNG
// stream derived from (master seed, parameter name), so values do not
// depend on registration order.  Iteration is name-sorted, which keeps the
// optimizer and checkpoints deterministic.
template <typename T>
class ParamStore {
public:
    explicit ParamStore(uint64_t seed,
                        std::map<std::string, Trainability> group_overrides = {})
        : seed_(seed), overrides_(std::move(group_overrides)) {}

    Param<T>& normal(const std::string& name, const std::string& group, Trainability tr,
                     std::vector<int64_t> shape, double stddev) {
        Param<T>& p = emplace(name, group, tr, std::move(shape));
        Rng rng(seed_, name);
        for (int64_t i = 0; i < p.value.numel(); ++i)
            p.value[i] = static_cast<T>(rng.normal(0.0, stddev));
        return p;
    }

    // He-style scale from fan-in: product of all dims past the first for
    // conv/linear weights, the sole dim for vectors.
    Param<T>& fanin_normal(const std::string& name, const std::string& group,
                           Trainability tr, std::vector<int64_t> shape) {
        int64_t fan = 1;
        if (shape.size() >= 2)
            for (size_t i = 1; i < shape.size(); ++i) fan *= shape[i];
        else if (!shape.empty())
            fan = shape[0];
        return normal(name, group, tr, std::move(shape),
                      std::sqrt(2.0 / static_cast<double>(fan)));
    }

    Param<T>& constant(const std::string& name, const std::string& group, Trainability tr,
                       std::vector<int64_t> shape, T value) {
        Param<T>& p = emplace(name, group, tr, std::move(shape));
        p.value.fill(value);
        return p;
    }

    Param<T>& zeros(const std::string& name, const std::string& group, Trainability tr,
                    std::vector<int64_t> shape) {
        return constant(name, group, tr, std::move(shape), T(0));
    }

    Param<T>& ones(const std::string& name, const std::string& group, Trainability tr,
                   std::vector<int64_t> shape) {
        return constant(name, group, tr, std::move(shape), T(1));
    }

    bool has(const std::string& name) const { return params_.count(name) != 0; }

    Param<T>& get(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
        return *it->second;
    }

    const Param<T>& get(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
        return *it->second;
    }

    // name-sorted
    std::vector<Param<T>*> all() {
        std::vector<Param<T>*> out;
        out.reserve(params_.size());
        for (auto& kv : params_) out.push_back(kv.second.get());
        return out;
    }

    std::vector<const Param<T>*> all() const {
        std::vector<const Param<T>*> out;
        out.reserve(params_.size());
        for (auto& kv : params_) out.push_back(kv.second.get());
        return out;
    }

    void zero_grads() {
        for (auto& kv : params_) kv.second->zero_grad();
    }

    int64_t count_scalars(bool trainable_only = false) const {
        int64_t n = 0;
        for (const auto& kv : params_)
            if (!trainable_only || kv.second->trainable()) n += kv.second->value.numel();
        return n;
    }

    uint64_t seed() const { return seed_; }

private:
    Param<T>& emplace(const std::string& name, const std::string& group, Trainability tr,
                      std::vector<int64_t> shape) {
        if (params_.count(name)) throw ConfigError("duplicate parameter: " + name);
        auto ov = overrides_.find(group);
        if (ov != overrides_.end()) tr = ov->second;
        auto p = std::make_unique<Param<T>>();
        p->name = name;
        p->group = group;
        p->trainability = tr;
        p->value = Tensor<T>(shape);
        p->grad = Tensor<T>(std::move(shape));
        Param<T>& ref = *p;
        params_.emplace(name, std::move(p));
        return ref;
    }

    uint64_t seed_;
    std::map<std::string, Trainability> overrides_;
    std::map<std::string, std::unique_ptr<Param<T>>> params_;
};

}  // namespace ichscnet
