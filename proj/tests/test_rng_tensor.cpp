#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "ichscnet/rng.hpp"
#include "ichscnet/tensor.hpp"

using namespace ichscnet;

TEST_CASE("mix64 separates nearby seeds") {
    std::set<uint64_t> seen;
    for (uint64_t s = 0; s < 1000; ++s) seen.insert(mix64(s));
    CHECK(seen.size() == 1000);
    CHECK(mix64(3, 4) != mix64(4, 3));
}

TEST_CASE("hash_tag is stable and tag-sensitive") {
    CHECK(hash_tag("alpha") == hash_tag("alpha"));
    CHECK(hash_tag("alpha") != hash_tag("beta"));
}

TEST_CASE("rng streams are deterministic per (seed, tag)") {
    Rng a(42, "stream"), b(42, "stream"), c(42, "other");
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 100; ++i) {
        const uint64_t x = a.below(1000), y = b.below(1000);
        all_equal &= (x == y);
        any_diff |= (x != c.below(1000));
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("below stays under its bound") {
    Rng r(7, "bound");
    for (int i = 0; i < 2000; ++i) CHECK(r.below(13) < 13);
}

TEST_CASE("range is inclusive on both ends") {
    Rng r(9, "range");
    bool lo_seen = false, hi_seen = false;
    for (int i = 0; i < 5000; ++i) {
        const int64_t v = r.range(3, 15);
        REQUIRE(v >= 3);
        REQUIRE(v <= 15);
        lo_seen |= (v == 3);
        hi_seen |= (v == 15);
    }
    CHECK(lo_seen);
    CHECK(hi_seen);
}

TEST_CASE("uniform lands in the unit interval with sensible mean") {
    Rng r(11, "uniform");
    double sum = 0;
    for (int i = 0; i < 20000; ++i) {
        const double u = r.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    CHECK(std::abs(sum / 20000 - 0.5) < 0.02);
}

TEST_CASE("normal has near-zero mean and unit variance") {
    Rng r(13, "normal");
    double sum = 0, sq = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double v = r.normal();
        sum += v;
        sq += v * v;
    }
    CHECK(std::abs(sum / n) < 0.03);
    CHECK(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("rng state round-trips through its string form") {
    Rng r(5, "state");
    for (int i = 0; i < 17; ++i) r.below(100);
    const std::string s = r.state_string();
    Rng fresh(999, "elsewhere");
    fresh.set_state_string(s);
    for (int i = 0; i < 50; ++i) CHECK(fresh.below(1 << 20) == r.below(1 << 20));
}

TEST_CASE("tensor shape accounting") {
    Tensor<double> t({2, 3, 4});
    CHECK(t.numel() == 24);
    CHECK(t.rank() == 3);
    CHECK(t.dim(1) == 3);
    for (int64_t i = 0; i < t.numel(); ++i) CHECK(t[i] == 0.0);
    t.at3(1, 2, 3) = 7.0;
    CHECK(t[23] == 7.0);
}

TEST_CASE("tensor data constructor validates length") {
    CHECK_THROWS_AS(Tensor<double>({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
    Tensor<double> ok({2, 2}, {1, 2, 3, 4});
    CHECK(ok.at2(1, 0) == 3.0);
}

TEST_CASE("scalar tensor and item") {
    Tensor<float> s = Tensor<float>::scalar(2.5f);
    CHECK(s.numel() == 1);
    CHECK(s.item() == 2.5f);
    Tensor<float> big({2});
    CHECK_THROWS_AS(big.item(), ShapeError);
}

TEST_CASE("add_ requires matching shapes") {
    Tensor<double> a({2, 2}, {1, 2, 3, 4}), b({2, 2}, {1, 1, 1, 1});
    a.add_(b);
    CHECK(a.at2(0, 1) == 3.0);
    Tensor<double> c({4});
    CHECK_THROWS_AS(a.add_(c), ShapeError);
}

TEST_CASE("fill overwrites every element") {
    Tensor<double> t({3, 3});
    t.fill(2.0);
    for (int64_t i = 0; i < t.numel(); ++i) CHECK(t[i] == 2.0);
}
