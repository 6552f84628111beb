#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <vector>

#include "ichscnet/metrics.hpp"
#include "ichscnet/rng.hpp"

using namespace ichscnet;
namespace im = ichscnet::metrics;

namespace {

Mask make_mask(int64_t w, int64_t h, std::initializer_list<std::pair<int64_t, int64_t>> px) {
    Mask m(w, h);
    for (auto [y, x] : px) m.at(y, x) = 1;
    return m;
}

Mask random_mask(int64_t w, int64_t h, Rng& rng, double density) {
    Mask m(w, h);
    for (auto& v : m.on) v = rng.uniform() < density ? 1 : 0;
    return m;
}

// Oracle versions below recompute everything from first principles with data
// structures unrelated to the library's implementations.

double oracle_dsc(const Mask& a, const Mask& b) {
    int64_t inter = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.on.size(); ++i) {
        inter += (a.on[i] && b.on[i]) ? 1 : 0;
        na += a.on[i] ? 1 : 0;
        nb += b.on[i] ? 1 : 0;
    }
    return na + nb == 0 ? 100.0 : 200.0 * double(inter) / double(na + nb);
}

double oracle_jaccard(const Mask& a, const Mask& b) {
    int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.on.size(); ++i) {
        inter += (a.on[i] && b.on[i]) ? 1 : 0;
        uni += (a.on[i] || b.on[i]) ? 1 : 0;
    }
    return uni == 0 ? 100.0 : 100.0 * double(inter) / double(uni);
}

std::vector<std::pair<int64_t, int64_t>> oracle_boundary(const Mask& m) {
    std::vector<std::pair<int64_t, int64_t>> out;
    for (int64_t y = 0; y < m.height; ++y)
        for (int64_t x = 0; x < m.width; ++x) {
            if (!m.at(y, x)) continue;
            bool border = false;
            for (int64_t dy = -1; dy <= 1; ++dy)
                for (int64_t dx = -1; dx <= 1; ++dx) {
                    if (!dy && !dx) continue;
                    const int64_t ny = y + dy, nx = x + dx;
                    if (ny < 0 || ny >= m.height || nx < 0 || nx >= m.width) border = true;
                    else if (!m.at(ny, nx)) border = true;
                }
            if (border) out.emplace_back(y, x);
        }
    return out;
}

double oracle_percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double rank = q * double(v.size() - 1);
    const size_t lo = size_t(std::floor(rank));
    if (lo + 1 >= v.size()) return v.back();
    return v[lo] + (rank - double(lo)) * (v[lo + 1] - v[lo]);
}

// All-pairs nearest-boundary distances, both directions pooled.
double oracle_hd95(const Mask& pred, const Mask& gt) {
    const auto bp = oracle_boundary(pred), bg = oracle_boundary(gt);
    std::vector<double> dists;
    auto nearest = [](const std::pair<int64_t, int64_t>& p,
                      const std::vector<std::pair<int64_t, int64_t>>& set) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : set) {
            const double dy = double(p.first - q.first), dx = double(p.second - q.second);
            best = std::min(best, std::sqrt(dy * dy + dx * dx));
        }
        return best;
    };
    for (const auto& p : bp) dists.push_back(nearest(p, bg));
    for (const auto& g : bg) dists.push_back(nearest(g, bp));
    return oracle_percentile(dists, 0.95);
}

// Breadth-first flood fill over 8-connected GT components.
double oracle_pro(const Mask& pred, const Mask& gt) {
    std::vector<int> seen(gt.on.size(), 0);
    double frac_sum = 0;
    int64_t comps = 0;
    for (int64_t start = 0; start < int64_t(gt.on.size()); ++start) {
        if (!gt.on[size_t(start)] || seen[size_t(start)]) continue;
        std::deque<int64_t> queue{start};
        seen[size_t(start)] = 1;
        int64_t size = 0, covered = 0;
        while (!queue.empty()) {
            const int64_t cur = queue.front();
            queue.pop_front();
            ++size;
            if (pred.on[size_t(cur)]) ++covered;
            const int64_t y = cur / gt.width, x = cur % gt.width;
            for (int64_t dy = -1; dy <= 1; ++dy)
                for (int64_t dx = -1; dx <= 1; ++dx) {
                    const int64_t ny = y + dy, nx = x + dx;
                    if (ny < 0 || ny >= gt.height || nx < 0 || nx >= gt.width) continue;
                    const int64_t ni = ny * gt.width + nx;
                    if (gt.on[size_t(ni)] && !seen[size_t(ni)]) {
                        seen[size_t(ni)] = 1;
                        queue.push_back(ni);
                    }
                }
        }
        frac_sum += double(covered) / double(size);
        ++comps;
    }
    return 100.0 * frac_sum / double(comps);
}

double oracle_auc(const std::vector<double>& probs, const std::vector<int>& labels) {
    double wins = 0;
    int64_t pairs = 0;
    for (size_t i = 0; i < probs.size(); ++i)
        for (size_t j = 0; j < probs.size(); ++j) {
            if (labels[i] != 1 || labels[j] != 0) continue;
            ++pairs;
            if (probs[i] > probs[j]) wins += 1.0;
            else if (probs[i] == probs[j]) wins += 0.5;
        }
    return 100.0 * wins / double(pairs);
}

Mask shift_mask(const Mask& m, int64_t dy, int64_t dx) {
    Mask out(m.width, m.height);
    for (int64_t y = 0; y < m.height; ++y)
        for (int64_t x = 0; x < m.width; ++x)
            if (m.at(y, x)) out.at(y + dy, x + dx) = 1;
    return out;
}

}  // namespace

TEST_CASE("dsc on hand-built masks") {
    Mask a = make_mask(8, 8, {{0, 0}, {0, 1}, {1, 0}, {1, 1}});
    CHECK(im::dsc(a, a) == 100.0);
    Mask d = make_mask(8, 8, {{5, 5}, {5, 6}});
    CHECK(im::dsc(a, d) == 0.0);
    // |A|=4, |B|=8, |A∩B|=4
    Mask b = make_mask(8, 8, {{0, 0}, {0, 1}, {0, 2}, {0, 3}, {1, 0}, {1, 1}, {1, 2}, {1, 3}});
    Mask a2 = make_mask(8, 8, {{0, 0}, {0, 1}, {1, 0}, {1, 1}});
    CHECK(im::dsc(a2, b) == Catch::Approx(200.0 / 3.0).epsilon(1e-9));
    Mask e1(8, 8), e2(8, 8);
    CHECK(im::dsc(e1, e2) == 100.0);
}

TEST_CASE("jaccard on hand-built masks") {
    Mask a = make_mask(8, 8, {{0, 0}, {0, 1}, {1, 0}, {1, 1}});
    CHECK(im::jaccard(a, a) == 100.0);
    Mask d = make_mask(8, 8, {{6, 6}});
    CHECK(im::jaccard(a, d) == 0.0);
    Mask b = make_mask(8, 8, {{0, 0}, {0, 1}, {0, 2}, {0, 3}, {1, 0}, {1, 1}, {1, 2}, {1, 3}});
    CHECK(im::jaccard(a, b) == 50.0);
}

TEST_CASE("overlap metrics match counting oracles on random pairs") {
    Rng rng(101, "overlap");
    for (int t = 0; t < 300; ++t) {
        const Mask a = random_mask(16, 16, rng, 0.1 + 0.8 * rng.uniform());
        const Mask b = random_mask(16, 16, rng, 0.1 + 0.8 * rng.uniform());
        CHECK(std::abs(im::dsc(a, b) - oracle_dsc(a, b)) < 1e-9);
        CHECK(std::abs(im::jaccard(a, b) - oracle_jaccard(a, b)) < 1e-9);
    }
}

TEST_CASE("dsc and jaccard satisfy their algebraic identity") {
    Rng rng(102, "identity");
    for (int t = 0; t < 300; ++t) {
        const Mask a = random_mask(16, 16, rng, 0.5);
        const Mask b = random_mask(16, 16, rng, 0.5);
        const double j = im::jaccard(a, b) / 100.0;
        const double d = im::dsc(a, b) / 100.0;
        CHECK(std::abs(d - 2.0 * j / (1.0 + j)) < 1e-9);
    }
}

TEST_CASE("percentile uses linear interpolation between order statistics") {
    CHECK(im::percentile_linear({5.0}, 0.95) == 5.0);
    CHECK(im::percentile_linear({0.0, 10.0}, 0.95) == Catch::Approx(9.5));
    CHECK(im::percentile_linear({1, 2, 3, 4, 5}, 0.5) == 3.0);
    CHECK(im::percentile_linear({1, 2, 3, 4, 5}, 0.95) == Catch::Approx(4.8));
    CHECK_THROWS_AS(im::percentile_linear({}, 0.5), ShapeError);
}

TEST_CASE("hd95 frozen examples") {
    Mask a = make_mask(8, 8, {{2, 2}, {2, 3}, {3, 2}, {3, 3}});
    CHECK(im::hd95(a, a) == 0.0);
    Mask p = make_mask(8, 8, {{0, 0}});
    Mask g = make_mask(8, 8, {{3, 4}});
    CHECK(im::hd95(g, p) == Catch::Approx(5.0).epsilon(1e-12));
    bool flagged = false;
    Mask empty(8, 8);
    const double sent = im::hd95(empty, a, &flagged);
    CHECK(flagged);
    CHECK(sent == Catch::Approx(std::sqrt(128.0)));
}

TEST_CASE("hd95 matches the all-pairs oracle exactly") {
    Rng rng(103, "hd");
    int nonempty = 0;
    for (int t = 0; t < 200; ++t) {
        Mask a = random_mask(16, 16, rng, 0.05 + 0.5 * rng.uniform());
        Mask b = random_mask(16, 16, rng, 0.05 + 0.5 * rng.uniform());
        bool ea = true, eb = true;
        for (auto v : a.on) ea &= !v;
        for (auto v : b.on) eb &= !v;
        if (ea || eb) continue;
        ++nonempty;
        CHECK(im::hd95(a, b) == oracle_hd95(a, b));
    }
    CHECK(nonempty > 150);
}

TEST_CASE("metrics are translation invariant") {
    Rng rng(104, "shift");
    for (int t = 0; t < 30; ++t) {
        Mask a(24, 24), b(24, 24);
        for (int64_t y = 4; y < 12; ++y)
            for (int64_t x = 4; x < 12; ++x) {
                if (rng.uniform() < 0.5) a.at(y, x) = 1;
                if (rng.uniform() < 0.5) b.at(y, x) = 1;
            }
        a.at(5, 5) = 1;
        b.at(6, 6) = 1;
        const Mask a2 = shift_mask(a, 7, 9), b2 = shift_mask(b, 7, 9);
        CHECK(im::dsc(a, b) == im::dsc(a2, b2));
        CHECK(im::jaccard(a, b) == im::jaccard(a2, b2));
        CHECK(im::hd95(a, b) == im::hd95(a2, b2));
        CHECK(im::pro(a, b) == im::pro(a2, b2));
    }
}

TEST_CASE("pro frozen examples") {
    Mask gt = make_mask(10, 10, {{1, 1}, {1, 2}, {5, 5}, {5, 6}});
    Mask covers_all = make_mask(10, 10, {{1, 1}, {1, 2}, {5, 5}, {5, 6}, {9, 9}});
    CHECK(im::pro(covers_all, gt) == 100.0);
    Mask covers_one = make_mask(10, 10, {{1, 1}, {1, 2}});
    CHECK(im::pro(covers_one, gt) == 50.0);
    bool flagged = false;
    Mask empty(10, 10);
    im::pro(covers_all, empty, &flagged);
    CHECK(flagged);
}

TEST_CASE("pro matches the flood-fill oracle exactly") {
    Rng rng(105, "pro");
    for (int t = 0; t < 200; ++t) {
        Mask pred = random_mask(16, 16, rng, 0.3 + 0.4 * rng.uniform());
        Mask gt = random_mask(16, 16, rng, 0.2 + 0.3 * rng.uniform());
        bool eg = true;
        for (auto v : gt.on) eg &= !v;
        if (eg) continue;
        CHECK(im::pro(pred, gt) == oracle_pro(pred, gt));
    }
}

TEST_CASE("classification frozen examples") {
    const ClaScores sep = classification_scores({0.9, 0.95, 0.1, 0.2}, {1, 1, 0, 0});
    CHECK(sep.acc == 100.0);
    CHECK(sep.auc == 100.0);
    CHECK(sep.rec == 100.0);
    CHECK(sep.pre == 100.0);

    const ClaScores tie = classification_scores({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0});
    CHECK(tie.auc == 50.0);

    const ClaScores mixed = classification_scores({0.9, 0.8, 0.3}, {1, 0, 0});
    CHECK(mixed.auc == 100.0);
    CHECK(mixed.acc == Catch::Approx(200.0 / 3.0).epsilon(1e-9));
}

TEST_CASE("classification threshold counts the positive class at 0.5") {
    const ClaScores s = classification_scores({0.5, 0.49}, {1, 0});
    CHECK(s.acc == 100.0);
    CHECK(s.rec == 100.0);
}

TEST_CASE("classification flags degenerate slices") {
    const ClaScores no_pos = classification_scores({0.1, 0.2}, {0, 0});
    CHECK(no_pos.rec_flagged);
    CHECK(no_pos.auc_flagged);
    const ClaScores no_pred = classification_scores({0.1, 0.2}, {1, 0});
    CHECK(no_pred.pre_flagged);
}

TEST_CASE("auc matches the pair-counting oracle with midrank ties") {
    Rng rng(106, "auc");
    for (int t = 0; t < 100; ++t) {
        const int n = 3 + int(rng.below(20));
        std::vector<double> probs;
        std::vector<int> labels;
        int npos = 0;
        for (int i = 0; i < n; ++i) {
            probs.push_back(std::round(rng.uniform() * 10.0) / 10.0);
            labels.push_back(int(rng.below(2)));
            npos += labels.back();
        }
        if (npos == 0 || npos == n) continue;
        const ClaScores s = classification_scores(probs, labels);
        CHECK(s.auc == Catch::Approx(oracle_auc(probs, labels)).epsilon(1e-12));
    }
}

TEST_CASE("aggregate of one case equals that case") {
    Mask a = make_mask(8, 8, {{1, 1}, {1, 2}});
    Mask b = make_mask(8, 8, {{1, 1}, {2, 2}});
    SegAccumulator acc;
    acc.add(a, b);
    const SegAggregate agg = acc.aggregate();
    const SegScores one = seg_scores(a, b);
    CHECK(agg.dsc == one.dsc);
    CHECK(agg.jaccard == one.jaccard);
    CHECK(agg.hd95 == one.hd95);
    CHECK(agg.pro == one.pro);
    CHECK(agg.cases == 1);
}

TEST_CASE("macro mean averages per-case scores") {
    // case 1: DSC 40; case 2: DSC 60
    Mask p1 = make_mask(8, 8, {{0, 0}});
    Mask g1 = make_mask(8, 8, {{0, 0}, {0, 1}, {0, 2}, {0, 3}});  // 2*1/(1+4)=40
    Mask p2 = make_mask(8, 8, {{4, 4}, {4, 5}, {4, 6}});
    Mask g2 = make_mask(8, 8, {{4, 4}, {4, 5}});  // 2*2/(3+2)=80
    REQUIRE(im::dsc(p1, g1) == 40.0);
    REQUIRE(im::dsc(p2, g2) == 80.0);
    SegAccumulator acc;
    acc.add(p1, g1);
    acc.add(p2, g2);
    CHECK(acc.aggregate().dsc == 60.0);
}

TEST_CASE("macro and pooled aggregates diverge on unequal case sizes") {
    Mask p1 = make_mask(8, 8, {{0, 0}});
    Mask g1 = make_mask(8, 8, {{0, 0}});  // per-case DSC 100, contributes 1/1 pixels
    Mask p2(8, 8), g2(8, 8);
    for (int64_t y = 0; y < 8; ++y)
        for (int64_t x = 0; x < 4; ++x) g2.at(y, x) = 1;  // 32 px, none predicted
    p2.at(7, 7) = 1;
    SegAccumulator acc;
    acc.add(p1, g1);
    acc.add(p2, g2);
    const SegAggregate agg = acc.aggregate();
    const double macro = agg.dsc;
    const double pooled = agg.pooled_dsc;  // 2*1/(2+33)
    CHECK(macro == 50.0);
    CHECK(pooled == Catch::Approx(200.0 / 35.0));
    CHECK(std::abs(macro - pooled) > 1.0);
}

TEST_CASE("aggregate over zero cases is an error") {
    SegAccumulator acc;
    CHECK_THROWS_AS(acc.aggregate(), DataError);
}

TEST_CASE("flagged cases are excluded from macro means but counted") {
    Mask a = make_mask(8, 8, {{1, 1}});
    Mask empty(8, 8);
    SegAccumulator acc;
    acc.add(a, a);
    acc.add(empty, a);  // hd95 flagged (empty pred)
    acc.add(a, empty);  // pro flagged (empty gt)
    const SegAggregate agg = acc.aggregate();
    CHECK(agg.cases == 3);
    CHECK(agg.hd95_excluded == 2);
    CHECK(agg.pro_excluded == 1);
    CHECK(agg.hd95 == 0.0);  // only the identical pair survives
}

TEST_CASE("mask shape mismatch raises shape errors") {
    Mask a(8, 8), b(4, 4);
    CHECK_THROWS_AS(im::dsc(a, b), ShapeError);
    CHECK_THROWS_AS(im::hd95(a, b), ShapeError);
    CHECK_THROWS_AS(classification_scores({0.5}, {1, 0}), ShapeError);
}
