#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "ichscnet/errors.hpp"
#include "ichscnet/image.hpp"

namespace ichscnet {
namespace metrics {

// percent-scale throughout; auc is the rank statistic times 100
struct SegScores {
    double dsc = 0, jaccard = 0, hd95 = 0, pro = 0;
    bool hd95_flagged = false;  // a mask was empty; hd95 holds the sentinel
    bool pro_flagged = false;   // gt empty; pro undefined
};

struct ClaScores {
    double acc = 0, rec = 0, pre = 0, auc = 0;
    bool rec_flagged = false, pre_flagged = false, auc_flagged = false;
};

inline void check_shapes(const Mask& a, const Mask& b, const char* what) {
    if (a.width != b.width || a.height != b.height)
        throw ShapeError(std::string(what) + ": mask shapes differ");
}

inline double dsc(const Mask& pred, const Mask& gt) {
    check_shapes(pred, gt, "dsc");
    int64_t inter = 0, na = 0, nb = 0;
    for (size_t i = 0; i < pred.on.size(); ++i) {
        na += pred.on[i];
        nb += gt.on[i];
        inter += pred.on[i] & gt.on[i];
    }
    if (na + nb == 0) return 100.0;
    return 100.0 * 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

inline double jaccard(const Mask& pred, const Mask& gt) {
    check_shapes(pred, gt, "jaccard");
    int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < pred.on.size(); ++i) {
        inter += pred.on[i] & gt.on[i];
        uni += pred.on[i] | gt.on[i];
    }
    if (uni == 0) return 100.0;
    return 100.0 * static_cast<double>(inter) / static_cast<double>(uni);
}

// Foreground pixels with at least one 8-neighbor off the mask; out-of-bounds
// counts as background, so pixels touching the image edge are boundary.
inline std::vector<std::pair<int64_t, int64_t>> boundary_pixels(const Mask& m) {
    std::vector<std::pair<int64_t, int64_t>> out;
    for (int64_t y = 0; y < m.height; ++y)
        for (int64_t x = 0; x < m.width; ++x) {
            if (!m.at(y, x)) continue;
            bool edge = false;
            for (int64_t dy = -1; dy <= 1 && !edge; ++dy)
                for (int64_t dx = -1; dx <= 1 && !edge; ++dx) {
                    if (!dy && !dx) continue;
                    const int64_t ny = y + dy, nx = x + dx;
                    if (ny < 0 || ny >= m.height || nx < 0 || nx >= m.width || !m.at(ny, nx))
                        edge = true;
                }
            if (edge) out.emplace_back(y, x);
        }
    return out;
}

namespace detail_dt {

// Felzenszwalb-Huttenlocher 1D squared distance transform.  Infinite entries
// (no seed anywhere in the scan line) never enter the lower envelope.
inline void dt1d(const double* f, int64_t n, double* d, int64_t* v, double* z) {
    const double inf = std::numeric_limits<double>::infinity();
    int64_t q0 = 0;
    while (q0 < n && f[q0] == inf) ++q0;
    if (q0 == n) {
        for (int64_t q = 0; q < n; ++q) d[q] = inf;
        return;
    }
    int64_t k = 0;
    v[0] = q0;
    z[0] = -inf;
    z[1] = inf;
    for (int64_t q = q0 + 1; q < n; ++q) {
        if (f[q] == inf) continue;
        double s;
        while (true) {
            const int64_t p = v[k];
            s = ((f[q] + static_cast<double>(q * q)) - (f[p] + static_cast<double>(p * p))) /
                (2.0 * static_cast<double>(q - p));
            if (s > z[k]) break;
            --k;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = inf;
    }
    k = 0;
    for (int64_t q = 0; q < n; ++q) {
        while (z[k + 1] < static_cast<double>(q)) ++k;
        const double dq = static_cast<double>(q - v[k]);
        d[q] = dq * dq + f[v[k]];
    }
}

}  // namespace detail_dt

// Squared Euclidean distance from every pixel to the nearest seed pixel.
inline std::vector<double> squared_edt(const std::vector<std::pair<int64_t, int64_t>>& seeds,
                                       int64_t width, int64_t height) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> grid(static_cast<size_t>(width * height), inf);
    for (const auto& [y, x] : seeds) grid[static_cast<size_t>(y * width + x)] = 0.0;
    const int64_t n = std::max(width, height);
    std::vector<double> f(static_cast<size_t>(n)), d(static_cast<size_t>(n));
    std::vector<int64_t> v(static_cast<size_t>(n));
    std::vector<double> z(static_cast<size_t>(n + 1));
    for (int64_t x = 0; x < width; ++x) {
        for (int64_t y = 0; y < height; ++y) f[static_cast<size_t>(y)] = grid[static_cast<size_t>(y * width + x)];
        detail_dt::dt1d(f.data(), height, d.data(), v.data(), z.data());
        for (int64_t y = 0; y < height; ++y) grid[static_cast<size_t>(y * width + x)] = d[static_cast<size_t>(y)];
    }
    for (int64_t y = 0; y < height; ++y) {
        for (int64_t x = 0; x < width; ++x) f[static_cast<size_t>(x)] = grid[static_cast<size_t>(y * width + x)];
        detail_dt::dt1d(f.data(), width, d.data(), v.data(), z.data());
        for (int64_t x = 0; x < width; ++x) grid[static_cast<size_t>(y * width + x)] = d[static_cast<size_t>(x)];
    }
    return grid;
}

// rank = q*(n-1), value interpolated linearly between order statistics
inline double percentile_linear(std::vector<double> vals, double q) {
    if (vals.empty()) throw ShapeError("percentile of empty set");
    std::sort(vals.begin(), vals.end());
    const double rank = q * static_cast<double>(vals.size() - 1);
    const auto lo = static_cast<size_t>(std::floor(rank));
    if (lo + 1 >= vals.size()) return vals.back();
    const double frac = rank - static_cast<double>(lo);
    return vals[lo] + frac * (vals[lo + 1] - vals[lo]);
}

inline double hd95_sentinel(int64_t width, int64_t height) {
    return std::sqrt(static_cast<double>(width * width + height * height));
}

// Distances between boundary sets, both directions combined, as one multiset.
inline std::vector<double> symmetric_boundary_distances(const Mask& pred, const Mask& gt) {
    const auto bp = boundary_pixels(pred);
    const auto bg = boundary_pixels(gt);
    const auto edt_g = squared_edt(bg, pred.width, pred.height);
    const auto edt_p = squared_edt(bp, pred.width, pred.height);
    std::vector<double> dists;
    dists.reserve(bp.size() + bg.size());
    for (const auto& [y, x] : bp) dists.push_back(std::sqrt(edt_g[static_cast<size_t>(y * pred.width + x)]));
    for (const auto& [y, x] : bg) dists.push_back(std::sqrt(edt_p[static_cast<size_t>(y * pred.width + x)]));
    return dists;
}

inline double hd95(const Mask& pred, const Mask& gt, bool* flagged = nullptr) {
    check_shapes(pred, gt, "hd95");
    if (pred.empty_mask() || gt.empty_mask()) {
        if (flagged) *flagged = true;
        return hd95_sentinel(pred.width, pred.height);
    }
    if (flagged) *flagged = false;
    return percentile_linear(symmetric_boundary_distances(pred, gt), 0.95);
}

// Connected components of the mask under 8-connectivity; returns a label
// grid (-1 background) and the component count.
inline int64_t label_components(const Mask& m, std::vector<int64_t>& labels) {
    labels.assign(m.on.size(), -1);
    int64_t next = 0;
    std::vector<int64_t> stack;
    for (int64_t start = 0; start < static_cast<int64_t>(m.on.size()); ++start) {
        if (!m.on[static_cast<size_t>(start)] || labels[static_cast<size_t>(start)] >= 0) continue;
        stack.push_back(start);
        labels[static_cast<size_t>(start)] = next;
        while (!stack.empty()) {
            const int64_t cur = stack.back();
            stack.pop_back();
            const int64_t y = cur / m.width, x = cur % m.width;
            for (int64_t dy = -1; dy <= 1; ++dy)
                for (int64_t dx = -1; dx <= 1; ++dx) {
                    if (!dy && !dx) continue;
                    const int64_t ny = y + dy, nx = x + dx;
                    if (ny < 0 || ny >= m.height || nx < 0 || nx >= m.width) continue;
                    const int64_t ni = ny * m.width + nx;
                    if (m.on[static_cast<size_t>(ni)] && labels[static_cast<size_t>(ni)] < 0) {
                        labels[static_cast<size_t>(ni)] = next;
                        stack.push_back(ni);
                    }
                }
        }
        ++next;
    }
    return next;
}

inline double pro(const Mask& pred, const Mask& gt, bool* flagged = nullptr) {
    check_shapes(pred, gt, "pro");
    if (gt.empty_mask()) {
        if (flagged) *flagged = true;
        return 0.0;
    }
    if (flagged) *flagged = false;
    std::vector<int64_t> labels;
    const int64_t ncomp = label_components(gt, labels);
    std::vector<int64_t> size(static_cast<size_t>(ncomp), 0), hit(static_cast<size_t>(ncomp), 0);
    for (size_t i = 0; i < gt.on.size(); ++i) {
        if (labels[i] < 0) continue;
        ++size[static_cast<size_t>(labels[i])];
        if (pred.on[i]) ++hit[static_cast<size_t>(labels[i])];
    }
    double sum = 0.0;
    for (int64_t c = 0; c < ncomp; ++c)
        sum += static_cast<double>(hit[static_cast<size_t>(c)]) /
               static_cast<double>(size[static_cast<size_t>(c)]);
    return 100.0 * sum / static_cast<double>(ncomp);
}

inline SegScores seg_scores(const Mask& pred, const Mask& gt) {
    SegScores s;
    s.dsc = dsc(pred, gt);
    s.jaccard = jaccard(pred, gt);
    s.hd95 = hd95(pred, gt, &s.hd95_flagged);
    s.pro = pro(pred, gt, &s.pro_flagged);
    return s;
}

// probs = p(poor); positive class is label 1; threshold p >= 0.5
inline ClaScores classification_scores(const std::vector<double>& probs,
                                       const std::vector<int>& labels) {
    if (probs.empty() || probs.size() != labels.size())
        throw ShapeError("classification_scores: empty or mismatched inputs");
    const size_t n = probs.size();
    int64_t tp = 0, tn = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < n; ++i) {
        if (labels[i] != 0 && labels[i] != 1)
            throw DataError("classification_scores: label outside {0,1}");
        const bool ppos = probs[i] >= 0.5;
        if (ppos && labels[i] == 1) ++tp;
        else if (ppos && labels[i] == 0) ++fp;
        else if (!ppos && labels[i] == 1) ++fn;
        else ++tn;
    }
    ClaScores c;
    c.acc = 100.0 * static_cast<double>(tp + tn) / static_cast<double>(n);
    if (tp + fn > 0) c.rec = 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fn);
    else c.rec_flagged = true;
    if (tp + fp > 0) c.pre = 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fp);
    else c.pre_flagged = true;

    const int64_t npos = tp + fn, nneg = fp + tn;
    if (npos == 0 || nneg == 0) {
        c.auc_flagged = true;
        return c;
    }
    // Mann-Whitney with midranks
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return probs[a] < probs[b]; });
    std::vector<double> rank(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && probs[order[j + 1]] == probs[order[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }
    double rpos = 0.0;
    for (size_t k = 0; k < n; ++k)
        if (labels[k] == 1) rpos += rank[k];
    const double u = rpos - static_cast<double>(npos) * (static_cast<double>(npos) + 1.0) / 2.0;
    c.auc = 100.0 * u / (static_cast<double>(npos) * static_cast<double>(nneg));
    return c;
}

// Macro mean over cases with per-metric exclusion of flagged entries, plus
// pooled-count variants of the overlap metrics and a pooled distance
// percentile for hd95.
struct SegAggregate {
    double dsc = 0, jaccard = 0, hd95 = 0, pro = 0;
    int64_t cases = 0;
    int64_t hd95_excluded = 0, pro_excluded = 0;
    double pooled_dsc = 100.0, pooled_jaccard = 100.0, pooled_pro = 0.0, pooled_hd95 = 0.0;
    bool pooled_pro_defined = false, pooled_hd95_defined = false;
};

class SegAccumulator {
public:
    void add(const Mask& pred, const Mask& gt) {
        const SegScores s = seg_scores(pred, gt);
        per_case_.push_back(s);
        for (size_t i = 0; i < pred.on.size(); ++i) {
            inter_ += pred.on[i] & gt.on[i];
            na_ += pred.on[i];
            nb_ += gt.on[i];
        }
        if (!gt.empty_mask()) {
            std::vector<int64_t> labels;
            const int64_t ncomp = label_components(gt, labels);
            std::vector<int64_t> size(static_cast<size_t>(ncomp), 0),
                hit(static_cast<size_t>(ncomp), 0);
            for (size_t i = 0; i < gt.on.size(); ++i) {
                if (labels[i] < 0) continue;
                ++size[static_cast<size_t>(labels[i])];
                if (pred.on[i]) ++hit[static_cast<size_t>(labels[i])];
            }
            for (int64_t cidx = 0; cidx < ncomp; ++cidx) {
                comp_frac_sum_ += static_cast<double>(hit[static_cast<size_t>(cidx)]) /
                                  static_cast<double>(size[static_cast<size_t>(cidx)]);
                ++comp_count_;
            }
        }
        if (!pred.empty_mask() && !gt.empty_mask()) {
            auto d = symmetric_boundary_distances(pred, gt);
            all_dists_.insert(all_dists_.end(), d.begin(), d.end());
        }
    }

    const std::vector<SegScores>& per_case() const { return per_case_; }

    SegAggregate aggregate() const {
        if (per_case_.empty()) throw DataError("aggregate over zero cases");
        SegAggregate a;
        a.cases = static_cast<int64_t>(per_case_.size());
        double hd_sum = 0, pro_sum = 0;
        int64_t hd_n = 0, pro_n = 0;
        for (const auto& s : per_case_) {
            a.dsc += s.dsc;
            a.jaccard += s.jaccard;
            if (s.hd95_flagged) ++a.hd95_excluded;
            else {
                hd_sum += s.hd95;
                ++hd_n;
            }
            if (s.pro_flagged) ++a.pro_excluded;
            else {
                pro_sum += s.pro;
                ++pro_n;
            }
        }
        a.dsc /= static_cast<double>(a.cases);
        a.jaccard /= static_cast<double>(a.cases);
        a.hd95 = hd_n ? hd_sum / static_cast<double>(hd_n) : 0.0;
        a.pro = pro_n ? pro_sum / static_cast<double>(pro_n) : 0.0;
        if (na_ + nb_ > 0) {
            a.pooled_dsc = 100.0 * 2.0 * static_cast<double>(inter_) /
                           static_cast<double>(na_ + nb_);
            a.pooled_jaccard = 100.0 * static_cast<double>(inter_) /
                               static_cast<double>(na_ + nb_ - inter_);
        }
        if (comp_count_ > 0) {
            a.pooled_pro = 100.0 * comp_frac_sum_ / static_cast<double>(comp_count_);
            a.pooled_pro_defined = true;
        }
        if (!all_dists_.empty()) {
            a.pooled_hd95 = percentile_linear(all_dists_, 0.95);
            a.pooled_hd95_defined = true;
        }
        return a;
    }

private:
    std::vector<SegScores> per_case_;
    int64_t inter_ = 0, na_ = 0, nb_ = 0;
    double comp_frac_sum_ = 0;
    int64_t comp_count_ = 0;
    std::vector<double> all_dists_;
};

}  // namespace metrics

using metrics::ClaScores;
using metrics::classification_scores;
using metrics::seg_scores;
using metrics::SegAccumulator;
using metrics::SegAggregate;
using metrics::SegScores;

}  // namespace ichscnet
