#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ichscnet/rng.hpp"
#include "ichscnet/synth.hpp"

namespace ichscnet {

struct FoldSplit {
    int64_t fold_index = 0;
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
};

// Stratified assignment: per class, a seeded shuffle followed by round-robin
// placement, so every val fold's class counts sit within 1 of proportional.
inline std::vector<FoldSplit> make_folds(const Dataset& ds, int64_t folds, uint64_t seed) {
    if (folds < 2) throw ConfigError("make_folds: folds must be >= 2");
    std::vector<std::vector<std::string>> by_class(2);
    for (const auto& c : ds.cases)
        by_class[static_cast<size_t>(c.label)].push_back(c.case_id);
    for (int cls = 0; cls < 2; ++cls)
        if (static_cast<int64_t>(by_class[static_cast<size_t>(cls)].size()) < folds)
            throw DataError("make_folds: class " + std::to_string(cls) + " has " +
                            std::to_string(by_class[static_cast<size_t>(cls)].size()) +
                            " cases, need at least one per fold");

    std::vector<std::vector<std::string>> val(static_cast<size_t>(folds));
    for (int cls = 0; cls < 2; ++cls) {
        auto& ids = by_class[static_cast<size_t>(cls)];
        Rng rng(seed, "folds.class" + std::to_string(cls));
        for (size_t i = ids.size(); i > 1; --i)
            std::swap(ids[i - 1], ids[rng.below(i)]);
        for (size_t i = 0; i < ids.size(); ++i)
            val[i % static_cast<size_t>(folds)].push_back(ids[i]);
    }

    std::vector<FoldSplit> out;
    for (int64_t k = 0; k < folds; ++k) {
        FoldSplit fs;
        fs.fold_index = k;
        fs.val_ids = val[static_cast<size_t>(k)];
        for (int64_t j = 0; j < folds; ++j)
            if (j != k)
                fs.train_ids.insert(fs.train_ids.end(), val[static_cast<size_t>(j)].begin(),
                                    val[static_cast<size_t>(j)].end());
        out.push_back(std::move(fs));
    }
    return out;
}

// single split with val == train, used by the overfit harness
inline std::vector<FoldSplit> make_identity_split(const Dataset& ds) {
    FoldSplit fs;
    fs.fold_index = 0;
    for (const auto& c : ds.cases) fs.train_ids.push_back(c.case_id);
    fs.val_ids = fs.train_ids;
    return {fs};
}

inline nlohmann::json folds_to_json(const std::vector<FoldSplit>& folds, uint64_t seed) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& f : folds)
        arr.push_back({{"fold_index", f.fold_index},
                       {"train_ids", f.train_ids},
                       {"val_ids", f.val_ids}});
    return {{"seed", seed}, {"folds", arr}};
}

inline std::vector<FoldSplit> folds_from_json(const nlohmann::json& j) {
    std::vector<FoldSplit> out;
    try {
        for (const auto& f : j.at("folds")) {
            FoldSplit fs;
            f.at("fold_index").get_to(fs.fold_index);
            f.at("train_ids").get_to(fs.train_ids);
            f.at("val_ids").get_to(fs.val_ids);
            out.push_back(std::move(fs));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("folds document malformed: ") + e.what());
    }
    return out;
}

}  // namespace ichscnet
