#pragma once

#include <cctype>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ichscnet/autodiff.hpp"
#include "ichscnet/params.hpp"

namespace ichscnet {

// Fixed finite vocabulary: the template's word tokens plus binned numeric
// tokens.  Numbers are binned by their preceding word, so "7" after "gcs"
// and "7" after "stay" land on different tokens.  Index 0 is UNK.
class Vocabulary {
public:
    Vocabulary() {
        add("<unk>");
        for (const char* w :
             {"age", "m", "f", "hospital", "stay", "d", "onset-to-ct", "h", "gcs",
              "treatment", "conservative", "surgical", "hemorrhage", "at", "left-anterior",
              "right-anterior", "left-posterior", "right-posterior", "central", "volume",
              "ml"})
            add(w);
        for (int b = 3; b <= 19; ++b) add("age#" + std::to_string(b));
        for (int b = 0; b <= 12; ++b) add("stay#" + std::to_string(b));
        for (int b = 0; b <= 14; ++b) add("ons#" + std::to_string(b));
        for (int g = 3; g <= 15; ++g) add("gcs#" + std::to_string(g));
        for (int b = 0; b <= 30; ++b) add("vol#" + std::to_string(b));
    }

    int64_t size() const { return static_cast<int64_t>(index_.size()); }

    int64_t lookup(const std::string& tok) const {
        auto it = index_.find(tok);
        return it == index_.end() ? 0 : it->second;
    }

    const std::vector<std::string>& tokens() const { return tokens_; }

    std::map<std::string, int64_t> as_map() const {
        std::map<std::string, int64_t> m;
        for (size_t i = 0; i < tokens_.size(); ++i) m[tokens_[i]] = static_cast<int64_t>(i);
        return m;
    }

private:
    void add(const std::string& tok) {
        index_[tok] = static_cast<int64_t>(tokens_.size());
        tokens_.push_back(tok);
    }

    std::vector<std::string> tokens_;
    std::map<std::string, int64_t> index_;
};

namespace detail_text {

inline bool is_number(const std::string& s) {
    bool digit = false, dot = false;
    for (char c : s) {
        if (c >= '0' && c <= '9') digit = true;
        else if (c == '.' && !dot) dot = true;
        else return false;
    }
    return digit;
}

inline std::string strip_edges(std::string s) {
    const std::string punct = ".,:;()";
    size_t b = 0, e = s.size();
    while (b < e && punct.find(s[b]) != std::string::npos) ++b;
    while (e > b && punct.find(s[e - 1]) != std::string::npos) --e;
    return s.substr(b, e - b);
}

}  // namespace detail_text

// lowercase, whitespace split, strip edge punctuation (hyphens inside words
// survive), then contextual numeric binning
inline std::vector<std::string> tokenize(const std::string& text) {
    if (text.empty()) throw DataError("tokenize: empty string");
    std::vector<std::string> raw;
    std::string cur;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) raw.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    if (!cur.empty()) raw.push_back(cur);

    std::vector<std::string> out;
    std::string prev;
    for (auto& t : raw) {
        std::string tok = detail_text::strip_edges(t);
        if (tok.empty()) continue;
        if (detail_text::is_number(tok)) {
            const double v = std::stod(tok);
            const int bin = static_cast<int>(v / 5.0);
            if (prev == "age") tok = "age#" + std::to_string(bin);
            else if (prev == "stay") tok = "stay#" + std::to_string(bin);
            else if (prev == "onset-to-ct") tok = "ons#" + std::to_string(bin);
            else if (prev == "gcs") tok = "gcs#" + std::to_string(static_cast<int>(v));
            else if (prev == "volume") tok = "vol#" + std::to_string(bin);
            // numbers in other contexts stay as-is and fall to UNK
        }
        prev = tok.rfind("age#", 0) == 0 || tok.rfind("stay#", 0) == 0 ||
                       tok.rfind("ons#", 0) == 0 || tok.rfind("gcs#", 0) == 0 ||
                       tok.rfind("vol#", 0) == 0
                   ? prev
                   : tok;
        out.push_back(tok);
    }
    if (out.empty()) throw DataError("tokenize: no tokens");
    return out;
}

// Frozen embedding table lookup; gradients scatter back only if the table
// is made trainable by an override.
template <typename T>
Var<T> embed_tokens(const std::vector<int64_t>& ids, Param<T>& table) {
    const int64_t vocab = table.value.dim(0), d = table.value.dim(1);
    const int64_t n = static_cast<int64_t>(ids.size());
    Tensor<T> out({n, d});
    for (int64_t i = 0; i < n; ++i) {
        const int64_t id = ids[i];
        if (id < 0 || id >= vocab) throw DataError("token id out of range");
        std::copy(table.value.data() + id * d, table.value.data() + (id + 1) * d,
                  out.data() + i * d);
    }
    auto leaf = Var<T>::leaf(table);
    auto ids_copy = std::make_shared<std::vector<int64_t>>(ids);
    return Var<T>(detail::make_node<T>(std::move(out), {leaf.node()}, [ids_copy, d](Node<T>& n2) {
        Node<T>& tn = *n2.parents[0];
        if (!tn.requires_grad) return;
        tn.ensure_grad();
        for (size_t i = 0; i < ids_copy->size(); ++i) {
            const int64_t id = (*ids_copy)[i];
            for (int64_t j = 0; j < d; ++j)
                tn.grad[id * d + j] += n2.grad[static_cast<int64_t>(i) * d + j];
        }
    }));
}

// registers the frozen embedding table under the clip_text group
template <typename T>
class TextEncoder {
public:
    TextEncoder(ParamStore<T>& store, int64_t d_t = 64) : d_t_(d_t) {
        table_ = &store.normal("clip_text.embed", "clip_text", Trainability::frozen,
                               {vocab_.size(), d_t}, 1.0);
    }

    Var<T> encode(const std::string& rendered) const {
        const auto toks = tokenize(rendered);
        std::vector<int64_t> ids;
        ids.reserve(toks.size());
        for (const auto& t : toks) ids.push_back(vocab_.lookup(t));
        return embed_tokens(ids, *table_);
    }

    std::vector<int64_t> token_ids(const std::string& rendered) const {
        const auto toks = tokenize(rendered);
        std::vector<int64_t> ids;
        for (const auto& t : toks) ids.push_back(vocab_.lookup(t));
        return ids;
    }

    const Vocabulary& vocab() const { return vocab_; }
    int64_t dim() const { return d_t_; }

private:
    Vocabulary vocab_;
    int64_t d_t_;
    Param<T>* table_ = nullptr;
};

}  // namespace ichscnet
