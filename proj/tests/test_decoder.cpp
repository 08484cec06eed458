#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mvgs/decoder/decoder.hpp"
#include "mvgs/diff/gradcheck.hpp"

using namespace mvgs;
using namespace mvgs::diff;
using namespace mvgs::decoder;

namespace {

DecoderConfig tiny_config() {
    DecoderConfig c;
    c.n_z = 8;
    c.n_w = 8;
    c.d = 8;
    c.grid_h = 2;
    c.grid_w = 3;
    c.levels = 3;
    c.upsample = 2;
    c.freq_bands = 2;
    c.map_hidden = 8;
    c.head_hidden = 8;
    return c;
}

NDArray random_z(int n, Rng& rng) {
    NDArray z(Shape{1, n});
    for (auto& v : z.data) v = rng.normal();
    return z;
}

}  // namespace

TEST_CASE("hierarchy counts") {
    DecoderConfig c;
    c.grid_h = 8;
    c.grid_w = 8;
    c.upsample = 4;
    c.levels = 3;
    CHECK(c.level_count(0) == 64);
    CHECK(c.level_count(1) == 256);
    CHECK(c.level_count(2) == 1024);
    CHECK(c.total_count() == 1344);

    // the production-scale budget is hit exactly by 48000 x (1 + 4)
    DecoderConfig big;
    big.grid_h = 200;
    big.grid_w = 240;
    big.upsample = 4;
    big.levels = 2;
    CHECK(big.total_count() == 240000);

    // 512 scaffold tokens factor as a 16x32 grid
    DecoderConfig paper;
    paper.grid_h = 16;
    paper.grid_w = 32;
    CHECK(paper.n0() == 512);
}

TEST_CASE("map_latent determinism and shape") {
    DecoderConfig c = tiny_config();
    Decoder dec(c);
    ParamStore store;
    Rng rng(1);
    dec.init_params(store, rng);

    Rng zr(2);
    NDArray z = random_z(c.n_z, zr);
    Tape t1;
    Binder b1(t1, store);
    Value w1 = dec.map_latent(b1, t1.constant(z));
    Tape t2;
    Binder b2(t2, store);
    Value w2 = dec.map_latent(b2, t2.constant(z));
    CHECK(w1.shape() == Shape{1, c.n_w});
    CHECK(w1.val().data == w2.val().data);

    const double err = check_gradient(
        [&](Tape& t, const Value& zv) {
            Binder b(t, store, false);
            return sum_all(square(dec.map_latent(b, zv)));
        },
        z, 1e-6);
    CHECK(err < 1e-5);
}

TEST_CASE("lift_scaffold") {
    DecoderConfig c = tiny_config();
    Decoder dec(c);
    ParamStore store;
    Rng rng(3);
    dec.init_params(store, rng);

    SUBCASE("band zero is sin/cos of the raw position, recoverable through a selector lift") {
        // with w_pe selecting encoding column j the token channel reads it back exactly
        ParamStore sel;
        Rng rs(40);
        dec.init_params(sel, rs);
        NDArray& wpe = sel.get("dec.lift.w_pe");
        wpe = NDArray(Shape{6 * c.freq_bands, c.d});
        wpe.at2(0, 0) = 1.0;  // channel 0 <- sin(p.x) at frequency 2^0
        wpe.at2(3, 1) = 1.0;  // channel 1 <- cos(p.x)
        sel.get("dec.lift.w_lin") = NDArray(Shape{3, c.d});
        sel.get("dec.lift.b") = NDArray(Shape{c.d});

        Tape t;
        Binder b(t, sel);
        Value grid = dec.lift_scaffold(b);
        CHECK(grid.shape() == Shape{c.grid_h, c.grid_w, c.d});
        const NDArray& pos = sel.get("dec.scaffold");
        for (int tok = 0; tok < c.n0(); ++tok) {
            CHECK(grid.val()[static_cast<int64_t>(tok) * c.d + 0] ==
                  doctest::Approx(std::sin(pos.at2(tok, 0))).epsilon(1e-12));
            CHECK(grid.val()[static_cast<int64_t>(tok) * c.d + 1] ==
                  doctest::Approx(std::cos(pos.at2(tok, 0))).epsilon(1e-12));
        }
    }

    SUBCASE("identical scaffold points lift to identical tokens") {
        ParamStore s2;
        Rng r2(4);
        dec.init_params(s2, r2);
        NDArray& pos = s2.get("dec.scaffold");
        for (int c3 = 0; c3 < 3; ++c3) pos.at2(1, c3) = pos.at2(0, c3);
        Tape t;
        Binder b(t, s2);
        Value grid = dec.lift_scaffold(b);
        for (int ch = 0; ch < 8; ++ch) CHECK(grid.val()[ch] == grid.val()[8 + ch]);
    }

    SUBCASE("scaffold size must match the grid") {
        DecoderConfig bad = tiny_config();
        Decoder dec_bad(bad);
        ParamStore s3;
        Rng r3(5);
        dec_bad.init_params(s3, r3);
        NDArray& pos = s3.get("dec.scaffold");
        pos = NDArray(Shape{bad.n0() + 1, 3});
        Tape t;
        Binder b(t, s3);
        CHECK_THROWS_AS(dec_bad.lift_scaffold(b), std::invalid_argument);
    }
}

TEST_CASE("adain statistics") {
    DecoderConfig c = tiny_config();
    Decoder dec(c);
    ParamStore store;
    Rng rng(6);
    dec.init_params(store, rng);

    // force gamma = 1, beta = 0 exactly
    store.get("dec.lvl0.adain1.gamma_w") = NDArray(Shape{c.n_w, c.d});
    store.get("dec.lvl0.adain1.gamma_b") = NDArray(Shape{c.d}, 1.0);
    store.get("dec.lvl0.adain1.beta_w") = NDArray(Shape{c.n_w, c.d});
    store.get("dec.lvl0.adain1.beta_b") = NDArray(Shape{c.d}, 0.0);

    Tape t;
    Binder b(t, store);
    Rng gr(7);
    NDArray g(Shape{c.grid_h, c.grid_w, c.d});
    for (auto& v : g.data) v = gr.normal() * 2 + 0.5;
    Value w = t.constant(NDArray(Shape{1, c.n_w}, 0.25));
    Value out = dec.adain(b, "dec.lvl0.adain1", t.constant(g), w);

    const int hw = c.grid_h * c.grid_w;
    for (int ch = 0; ch < c.d; ++ch) {
        double mean = 0, var = 0;
        for (int i = 0; i < hw; ++i) mean += out.val()[static_cast<int64_t>(i) * c.d + ch];
        mean /= hw;
        for (int i = 0; i < hw; ++i) var += std::pow(out.val()[static_cast<int64_t>(i) * c.d + ch] - mean, 2);
        var /= hw;
        CHECK(std::abs(mean) < 1e-12);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // eps in the denominator
    }

    SUBCASE("constant channel maps to beta") {
        NDArray flat(Shape{c.grid_h, c.grid_w, c.d}, 3.25);
        Value out2 = dec.adain(b, "dec.lvl0.adain1", t.constant(flat), w);
        for (int64_t i = 0; i < out2.val().size(); ++i) CHECK(std::abs(out2.val()[i]) < 1e-9);
    }

    SUBCASE("invariant to per-channel constant shifts") {
        NDArray shifted = g;
        for (int i = 0; i < hw; ++i)
            for (int ch = 0; ch < c.d; ++ch) shifted[static_cast<int64_t>(i) * c.d + ch] += 7.5 + ch;
        Value out3 = dec.adain(b, "dec.lvl0.adain1", t.constant(shifted), w);
        for (int64_t i = 0; i < out3.val().size(); ++i)
            CHECK(out3.val()[i] == doctest::Approx(out.val()[i]).epsilon(1e-6));
    }
}

TEST_CASE("dual mixer preserves grid shape, with and without the scan branch") {
    DecoderConfig c = tiny_config();
    Decoder dec(c);
    ParamStore store;
    Rng rng(8);
    dec.init_params(store, rng);

    Tape t;
    Binder b(t, store);
    Value z = t.constant(random_z(c.n_z, rng));
    Value w = dec.map_latent(b, z);
    Value grid = dec.lift_scaffold(b);
    Value mixed = dec.dual_mixer(b, 0, grid, w);
    CHECK(mixed.shape() == grid.shape());

    DecoderConfig no_scan = c;
    no_scan.use_scan = false;
    Decoder dec2(no_scan);
    Value mixed2 = dec2.dual_mixer(b, 0, grid, w);
    CHECK(mixed2.shape() == grid.shape());
    // attention-only output differs from the dual path
    double diff = 0;
    for (int64_t i = 0; i < mixed.val().size(); ++i)
        diff = std::max(diff, std::abs(mixed.val()[i] - mixed2.val()[i]));
    CHECK(diff > 1e-9);

    SUBCASE("single-token grid stays finite") {
        DecoderConfig one = tiny_config();
        one.grid_h = 1;
        one.grid_w = 1;
        Decoder dec1(one);
        ParamStore s1;
        Rng r1(9);
        dec1.init_params(s1, r1);
        Tape t1;
        Binder b1(t1, s1);
        Value w1 = dec1.map_latent(b1, t1.constant(random_z(one.n_z, r1)));
        Value g1 = dec1.lift_scaffold(b1);
        Value m1 = dec1.dual_mixer(b1, 0, g1, w1);
        for (double v : m1.val().data) CHECK(std::isfinite(v));
    }
}

TEST_CASE("generate: counts, ranges, anchoring, determinism") {
    DecoderConfig c = tiny_config();
    Decoder dec(c);
    ParamStore store;
    Rng rng(10);
    dec.init_params(store, rng);

    Tape t;
    Binder b(t, store);
    NDArray z = random_z(c.n_z, rng);
    GaussianSetValues set = dec.generate(b, t.constant(z));

    const int n0 = c.n0();
    REQUIRE(static_cast<int>(set.levels.size()) == c.levels);
    CHECK(set.levels[0].mu.shape()[0] == n0);
    CHECK(set.levels[1].mu.shape()[0] == n0 * 2);
    CHECK(set.levels[2].mu.shape()[0] == n0 * 4);
    CHECK(set.mu.shape()[0] == static_cast<int>(c.total_count()));

    SUBCASE("attribute ranges hold") {
        for (const auto& l : set.levels) {
            for (double v : l.scale.val().data) {
                CHECK(v >= 1e-4);
                CHECK(v <= 1.0);
            }
            for (double v : l.opacity.val().data) {
                CHECK(v > 0.0);
                CHECK(v < 1.0);
            }
            for (double v : l.color.val().data) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
            const NDArray& q = l.rot.val();
            for (int i = 0; i < q.rows(); ++i) {
                const double n = std::sqrt(q.at2(i, 0) * q.at2(i, 0) + q.at2(i, 1) * q.at2(i, 1) +
                                           q.at2(i, 2) * q.at2(i, 2) + q.at2(i, 3) * q.at2(i, 3));
                CHECK(n == doctest::Approx(1.0).epsilon(1e-9));
            }
        }
    }

    SUBCASE("children stay within rho of their anchors") {
        for (int l = 1; l < c.levels; ++l) {
            const NDArray& child = set.levels[static_cast<size_t>(l)].mu.val();
            const NDArray& parent = set.levels[static_cast<size_t>(l - 1)].mu.val();
            const auto& pidx = set.levels[static_cast<size_t>(l)].parent;
            for (int i = 0; i < child.rows(); ++i) {
                double d2 = 0;
                for (int cc = 0; cc < 3; ++cc)
                    d2 += std::pow(child.at2(i, cc) - parent.at2(pidx[static_cast<size_t>(i)], cc), 2);
                CHECK(std::sqrt(d2) <= c.rho(l) * std::sqrt(3.0) + 1e-12);
            }
        }
    }

    SUBCASE("same z twice is identical") {
        Tape t2;
        Binder b2(t2, store);
        GaussianSetValues set2 = dec.generate(b2, t2.constant(z));
        CHECK(set.mu.val().data == set2.mu.val().data);
        CHECK(set.color.val().data == set2.color.val().data);
    }

    SUBCASE("zeroed offset head leaves children at their anchors") {
        ParamStore s2;
        Rng r2(11);
        dec.init_params(s2, r2);
        s2.get("dec.lvl1.head_mu.w2") = NDArray(Shape{c.head_hidden, 3});
        s2.get("dec.lvl1.head_mu.b2") = NDArray(Shape{3});
        Tape t2;
        Binder b2(t2, s2);
        GaussianSetValues set2 = dec.generate(b2, t2.constant(z));
        const NDArray& child = set2.levels[1].mu.val();
        const NDArray& parent = set2.levels[0].mu.val();
        for (int i = 0; i < child.rows(); ++i)
            for (int cc = 0; cc < 3; ++cc)
                CHECK(child.at2(i, cc) ==
                      doctest::Approx(parent.at2(set2.levels[1].parent[static_cast<size_t>(i)], cc))
                          .epsilon(1e-12));
    }
}

TEST_CASE("attribute ranges over many random parameterizations") {
    DecoderConfig c = tiny_config();
    c.levels = 2;
    Decoder dec(c);
    for (int trial = 0; trial < 30; ++trial) {
        ParamStore store;
        Rng rng(100 + static_cast<uint64_t>(trial));
        dec.init_params(store, rng);
        // exaggerate weights to push activations toward their bounds
        for (const auto& name : store.names())
            if (name.find("head_") != std::string::npos)
                for (auto& v : store.get(name).data) v *= 50.0;
        Tape t;
        Binder b(t, store);
        GaussianSetValues set = dec.generate(b, t.constant(random_z(c.n_z, rng)));
        for (double v : set.scale.val().data) {
            CHECK(v >= 1e-4);
            CHECK(v <= 1.0);
        }
        for (double v : set.opacity.val().data) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
        for (double v : set.color.val().data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        for (int l = 1; l < c.levels; ++l) {
            const NDArray& child = set.levels[static_cast<size_t>(l)].mu.val();
            const NDArray& parent = set.levels[static_cast<size_t>(l - 1)].mu.val();
            const auto& pidx = set.levels[static_cast<size_t>(l)].parent;
            for (int i = 0; i < child.rows(); ++i)
                for (int cc = 0; cc < 3; ++cc)
                    CHECK(std::abs(child.at2(i, cc) - parent.at2(pidx[static_cast<size_t>(i)], cc)) <=
                          c.rho(l) + 1e-12);
        }
    }
}

TEST_CASE("gradient flows from the centers back to z") {
    DecoderConfig c = tiny_config();
    c.levels = 2;
    Decoder dec(c);
    ParamStore store;
    Rng rng(12);
    dec.init_params(store, rng);
    Rng zr(13);
    NDArray z = random_z(c.n_z, zr);

    const double err = check_gradient(
        [&](Tape& t, const Value& zv) {
            Binder b(t, store, false);
            GaussianSetValues set = dec.generate(b, zv);
            return sum_all(set.mu);
        },
        z, 1e-6);
    CHECK(err < 1e-4);

    // and the gradient is not identically zero
    Tape t;
    Binder b(t, store, false);
    Value zv = t.leaf(z, true);
    GaussianSetValues set = dec.generate(b, zv);
    t.backward(sum_all(set.mu));
    double norm = 0;
    for (double v : zv.grad().data) norm += v * v;
    CHECK(norm > 1e-12);
}
