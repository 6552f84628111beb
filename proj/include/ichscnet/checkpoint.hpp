#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ichscnet/params.hpp"

namespace ichscnet {

inline Trainability parse_trainability(const std::string& s) {
    if (s == "frozen") return Trainability::frozen;
    if (s == "fine_tune") return Trainability::fine_tune;
    if (s == "train") return Trainability::train;
    throw ConfigError("unknown trainability: " + s);
}

// Archive layout: 8-byte magic, u32 format version, u64 JSON header length,
// the header, then raw little-endian tensor payloads in header order.
inline constexpr char kCheckpointMagic[8] = {'I', 'C', 'H', 'S', 'C', 'K', 'P', 'T'};
inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
    nlohmann::json config;
    int64_t fold_index = 0;
    std::string rng_state;
    std::string dtype;  // f32 | f64
    nlohmann::json params;
};

template <typename T>
inline const char* dtype_name() {
    return sizeof(T) == 4 ? "f32" : "f64";
}

template <typename T>
inline void save_checkpoint(const std::string& path, const ParamStore<T>& store,
                            const nlohmann::json& config, int64_t fold_index,
                            const std::string& rng_state) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto* p : store.all())
        entries.push_back({{"name", p->name},
                           {"group", p->group},
                           {"trainability", to_string(p->trainability)},
                           {"shape", p->value.shape()}});
    const nlohmann::json header = {{"config", config},
                                   {"fold_index", fold_index},
                                   {"rng_state", rng_state},
                                   {"dtype", dtype_name<T>()},
                                   {"params", entries}};
    const std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write(kCheckpointMagic, 8);
    const uint32_t ver = kCheckpointVersion;
    out.write(reinterpret_cast<const char*>(&ver), 4);
    const uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto* p : store.all())
        out.write(reinterpret_cast<const char*>(p->value.data()),
                  static_cast<std::streamsize>(p->value.numel() * sizeof(T)));
    if (!out) throw DataError("short write on checkpoint: " + path);
}

inline CheckpointHeader read_checkpoint_header(const std::string& path,
                                               std::ifstream* keep_open = nullptr) {
    std::ifstream own;
    std::ifstream& in = keep_open ? *keep_open : own;
    in.open(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    char magic[8];
    uint32_t ver = 0;
    uint64_t hlen = 0;
    in.read(magic, 8);
    in.read(reinterpret_cast<char*>(&ver), 4);
    in.read(reinterpret_cast<char*>(&hlen), 8);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw DataError("not a checkpoint archive: " + path);
    if (ver != kCheckpointVersion)
        throw DataError("unsupported checkpoint version in " + path);
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw DataError("truncated checkpoint header: " + path);

    nlohmann::json j = nlohmann::json::parse(hs, nullptr, false);
    if (j.is_discarded()) throw DataError("corrupt checkpoint header: " + path);
    CheckpointHeader h;
    try {
        h.config = j.at("config");
        j.at("fold_index").get_to(h.fold_index);
        j.at("rng_state").get_to(h.rng_state);
        j.at("dtype").get_to(h.dtype);
        h.params = j.at("params");
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint header missing fields in " + path + ": " + e.what());
    }
    return h;
}

// Loads parameter values into an already-built store, first proving the
// archive and the model agree parameter-for-parameter.  Group-level
// differences are named explicitly.
template <typename T>
inline CheckpointHeader load_checkpoint(const std::string& path, ParamStore<T>& store) {
    std::ifstream in;
    CheckpointHeader h = read_checkpoint_header(path, &in);
    if (h.dtype != dtype_name<T>())
        throw DataError("checkpoint " + path + " holds " + h.dtype +
                        " tensors, run precision expects " + dtype_name<T>());

    std::set<std::string> archive_groups, model_groups;
    std::map<std::string, nlohmann::json> by_name;
    for (const auto& e : h.params) {
        by_name[e.at("name").get<std::string>()] = e;
        archive_groups.insert(e.at("group").get<std::string>());
    }
    for (const auto* p : store.all()) model_groups.insert(p->group);
    for (const auto& g : archive_groups)
        if (!model_groups.count(g))
            throw DataError("checkpoint group \"" + g + "\" has no home in this model");
    for (const auto& g : model_groups)
        if (!archive_groups.count(g))
            throw DataError("model group \"" + g + "\" missing from checkpoint");

    auto params = store.all();
    if (params.size() != by_name.size())
        throw DataError("checkpoint parameter count differs from model");
    for (auto* p : params) {
        auto it = by_name.find(p->name);
        if (it == by_name.end())
            throw DataError("model parameter \"" + p->name + "\" missing from checkpoint");
        const auto& e = it->second;
        if (e.at("shape").template get<std::vector<int64_t>>() != p->value.shape())
            throw DataError("shape mismatch for parameter \"" + p->name + "\"");
        if (parse_trainability(e.at("trainability").template get<std::string>()) !=
            p->trainability)
            throw DataError("trainability mismatch for parameter \"" + p->name + "\"");
    }
    // payload order is the header's entry order (name-sorted at save time)
    for (const auto& e : h.params) {
        Param<T>& p = store.get(e.at("name").get<std::string>());
        in.read(reinterpret_cast<char*>(p.value.data()),
                static_cast<std::streamsize>(p.value.numel() * sizeof(T)));
        if (!in) throw DataError("truncated checkpoint payload: " + path);
    }
    return h;
}

}  // namespace ichscnet
