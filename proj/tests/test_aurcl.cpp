#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pseudoseg/aurcl.hpp"
#include "pseudoseg/rng.hpp"

using namespace pseudoseg;

namespace {

ProbMap random_pm(int h, int w, Rng& rng) {
    ProbMap p = make_probmap(h, w);
    for (double& v : p.values) v = rng.uniform(0.01, 0.99);
    return p;
}

Tensor random_grid(int d, int h, int w, Rng& rng) {
    Tensor t({static_cast<size_t>(d), static_cast<size_t>(h), static_cast<size_t>(w)});
    for (double& v : t.data) v = rng.normal();
    return t;
}

// double-loop cosine InfoNCE reference, no shared code with the library
double infonce_reference(const Tensor& f, const Tensor& g, double temp) {
    const size_t n = f.shape[0], d = f.shape[1];
    auto cos = [&](const Tensor& a, size_t i, const Tensor& b, size_t j) {
        double dot = 0, na = 0, nb = 0;
        for (size_t k = 0; k < d; ++k) {
            dot += a.data[i * d + k] * b.data[j * d + k];
            na += a.data[i * d + k] * a.data[i * d + k];
            nb += b.data[j * d + k] * b.data[j * d + k];
        }
        if (na <= 0.0 || nb <= 0.0) return 0.0;
        return dot / (std::sqrt(na) * std::sqrt(nb));
    };
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double num = std::exp(cos(f, i, g, i) / temp);
        double denom = 0.0;
        for (size_t j = 0; j < n; ++j) denom += std::exp(cos(f, i, g, j) / temp);
        total += -std::log(num / denom);
    }
    return total / static_cast<double>(n);
}

}  // namespace

TEST_CASE("confidence map is 1-p and reversal is an involution") {
    Rng rng(1);
    auto p = random_pm(8, 8, rng);
    auto c = confidence_map(p);
    for (size_t i = 0; i < p.values.size(); ++i)
        CHECK(c.values[i] == 1.0 - p.values[i]);

    // bit-exact double reversal needs 1-p representable; raw uniform() draws
    // sit on the 2^-53 grid where the complement is exact
    for (double& v : p.values) v = rng.uniform();
    BinaryMask m = make_mask(8, 8);
    for (size_t i = 0; i < m.pixels.size(); ++i) m.pixels[i] = (i % 3 == 0) ? 1 : 0;
    auto r1 = reverse_probs(p, m);
    auto r2 = reverse_probs(r1, m);
    CHECK(r2.values == p.values);  // bit-exact double reversal
    for (size_t i = 0; i < p.values.size(); ++i) {
        if (m.pixels[i]) CHECK(r1.values[i] == 1.0 - p.values[i]);
        else CHECK(r1.values[i] == p.values[i]);
    }
}

TEST_CASE("adaptive threshold selects round(r*HW) pixels on distinct values") {
    // 4x4 grid of 16 distinct confidences 0.05..0.80
    ProbMap c = make_probmap(4, 4);
    for (int i = 0; i < 16; ++i) c.values[i] = 0.05 * (i + 1);
    // r=0.25 -> K=4 -> tau = 4th largest = 0.65
    double tau = adaptive_threshold(c, 0.25, 0.0);
    CHECK(tau == doctest::Approx(0.65).epsilon(1e-12));
    BinaryMask m = low_conf_mask(c, tau);
    CHECK(m.area() == 4);

    // r tiny -> K clamps to 1 -> tau = max value
    CHECK(adaptive_threshold(c, 1e-9, 0.0) == doctest::Approx(0.80).epsilon(1e-12));
    // r near 1 -> K=HW -> tau = min value, unless floored by tau_fix
    CHECK(adaptive_threshold(c, 0.99, 0.0) == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(adaptive_threshold(c, 0.99, 0.2) == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("tau_fix floor caps the selected area") {
    ProbMap c = make_probmap(10, 10, 0.1);  // all confidences below the floor
    double tau = adaptive_threshold(c, 0.5, 0.2);
    CHECK(tau == 0.2);
    CHECK(low_conf_mask(c, tau).area() == 0);
}

TEST_CASE("low_conf_mask uses >= at the threshold") {
    ProbMap c = make_probmap(1, 3);
    c.values = {0.1, 0.2, 0.3};
    auto m = low_conf_mask(c, 0.2);
    CHECK(m.pixels[0] == 0);
    CHECK(m.pixels[1] == 1);
    CHECK(m.pixels[2] == 1);
}

TEST_CASE("hand-worked 2x2 patch pooling gives 2.5") {
    // single-channel 2x2 grid [[1,2],[3,4]], weights [[1,0],[0,1]]:
    // (1*1 + 1*4) / (2 + eps) ~= 2.5
    Tensor f({1, 2, 2});
    f.data = {1.0, 2.0, 3.0, 4.0};
    ProbMap w = make_probmap(2, 2, 0.0);
    w.values = {1.0, 0.0, 0.0, 1.0};
    auto ps = patch_features(f, w, 2, 1e-8, FeatureView::original);
    REQUIRE(ps.features.shape[0] == 1);
    REQUIRE(ps.features.shape[1] == 1);
    CHECK(ps.features.data[0] == doctest::Approx(5.0 / (2.0 + 1e-8)).epsilon(1e-9));
    CHECK(ps.features.data[0] == doctest::Approx(2.5).epsilon(1e-7));

    ProbMap w2 = make_probmap(2, 2);
    w2.values = {0.1, 0.2, 0.3, 0.4};
    auto ps2 = patch_features(f, w2, 2, 1e-8, FeatureView::original);
    CHECK(ps2.features.data[0] == doctest::Approx(3.0).epsilon(1e-7));
}

TEST_CASE("patch pooling is invariant to weight scaling") {
    Rng rng(7);
    auto f = random_grid(6, 28, 28, rng);
    auto w = random_pm(28, 28, rng);
    ProbMap w10 = w;
    for (double& v : w10.values) v *= 10.0;
    auto a = patch_features(f, w, 14, 1e-8, FeatureView::original);
    auto b = patch_features(f, w10, 14, 1e-8, FeatureView::original);
    for (size_t i = 0; i < a.features.data.size(); ++i)
        CHECK(a.features.data[i] == doctest::Approx(b.features.data[i]).epsilon(1e-6));
}

TEST_CASE("zero-weight patch yields a zero feature, not NaN") {
    Tensor f({2, 2, 2});
    for (double& v : f.data) v = 1.0;
    ProbMap w = make_probmap(2, 2, 0.0);
    auto ps = patch_features(f, w, 2, 1e-8, FeatureView::original);
    for (double v : ps.features.data) {
        CHECK(std::isfinite(v));
        CHECK(std::abs(v) < 1e-3);
    }
}

TEST_CASE("patch grid covers non-divisible dims") {
    Rng rng(15);
    auto f = random_grid(3, 30, 30, rng);
    auto w = random_pm(30, 30, rng);
    auto ps = patch_features(f, w, 14, 1e-8, FeatureView::original);
    CHECK(ps.features.shape[0] == 9);  // ceil(30/14)^2 = 3^2
    CHECK(ps.features.shape[1] == 3);
    for (double v : ps.features.data) CHECK(std::isfinite(v));
}

TEST_CASE("infonce closed form for N=4 orthogonal matches at t=0.1") {
    // f_i = g_i = e_i in R^4: positives cos=1, negatives cos=0.
    // loss = -ln(e^{10} / (e^{10} + 3)) = ln(1 + 3 e^{-10}) = 1.3619e-4
    Tensor f({4, 4});
    f.data.assign(16, 0.0);
    for (int i = 0; i < 4; ++i) f.data[i * 4 + i] = 1.0;
    PatchFeatureSet a{f, FeatureView::original}, b{f, FeatureView::reversed};
    double l = aurcl_loss(a, b, 0.1);
    CHECK(l == doctest::Approx(std::log(1.0 + 3.0 * std::exp(-10.0))).epsilon(1e-9));
    CHECK(l == doctest::Approx(1.3619e-4).epsilon(1e-3));
}

TEST_CASE("infonce is invariant to per-vector scaling") {
    Rng rng(33);
    Tensor f({5, 8}), g({5, 8});
    for (double& v : f.data) v = rng.normal();
    for (double& v : g.data) v = rng.normal();
    Tensor f2 = f, g2 = g;
    for (size_t i = 0; i < 5; ++i) {
        double sf = 0.5 + static_cast<double>(i);
        for (size_t k = 0; k < 8; ++k) {
            f2.data[i * 8 + k] *= sf;
            g2.data[i * 8 + k] *= 2.0 * sf;
        }
    }
    double l1 = aurcl_loss({f, FeatureView::original}, {g, FeatureView::reversed}, 0.1);
    double l2 = aurcl_loss({f2, FeatureView::original}, {g2, FeatureView::reversed}, 0.1);
    CHECK(l1 == doctest::Approx(l2).epsilon(1e-9));
}

TEST_CASE("infonce agrees with the double-loop reference") {
    Rng rng(44);
    for (int trial = 0; trial < 10; ++trial) {
        size_t n = 2 + trial % 5, d = 3 + trial % 4;
        Tensor f({n, d}), g({n, d});
        for (double& v : f.data) v = rng.normal();
        for (double& v : g.data) v = rng.normal();
        double lib = aurcl_loss({f, FeatureView::original}, {g, FeatureView::reversed}, 0.1);
        CHECK(lib == doctest::Approx(infonce_reference(f, g, 0.1)).epsilon(1e-6));
    }
}

TEST_CASE("infonce is non-negative and zero-norm features do not blow up") {
    Tensor f({3, 4}), g({3, 4});
    f.data.assign(12, 0.0);
    g.data.assign(12, 0.0);
    f.data[0] = 1.0;
    g.data[0] = 1.0;  // row 0 aligned; rows 1,2 all-zero
    double l = aurcl_loss({f, FeatureView::original}, {g, FeatureView::reversed}, 0.1);
    CHECK(std::isfinite(l));
    CHECK(l >= 0.0);
}

TEST_CASE("node forwards agree with the plain ops") {
    Rng rng(55);
    auto p = random_pm(28, 28, rng);
    auto c = confidence_map(p);
    double tau = adaptive_threshold(c, 0.2, 0.2);
    auto m = low_conf_mask(c, tau);
    auto grid = random_grid(4, 28, 28, rng);

    ad::Tape tape;
    Tensor pt({28ul * 28ul});
    pt.data = p.values;
    auto pn = tape.leaf(pt);
    auto rn = reverse_node(tape, pn, m);
    auto plain_rev = reverse_probs(p, m);
    for (size_t i = 0; i < plain_rev.values.size(); ++i)
        CHECK(rn->value.data[i] == plain_rev.values[i]);

    auto gn = tape.leaf(grid);
    auto fo = patch_features_node(tape, gn, pn, 14, 1e-8);
    auto plain = patch_features(grid, p, 14, 1e-8, FeatureView::original);
    for (size_t i = 0; i < plain.features.data.size(); ++i)
        CHECK(fo->value.data[i] == doctest::Approx(plain.features.data[i]).epsilon(1e-12));

    auto fr = patch_features_node(tape, gn, rn, 14, 1e-8);
    auto nce = infonce_node(tape, fo, fr, 0.1);
    PatchFeatureSet po{plain.features, FeatureView::original};
    Tensor revf = fr->value;
    PatchFeatureSet pr{revf, FeatureView::reversed};
    CHECK(nce->value.data[0] == doctest::Approx(aurcl_loss(po, pr, 0.1)).epsilon(1e-9));
}

TEST_CASE("aurcl node gradients match finite differences") {
    Rng rng(66);
    const int H = 8, W = 8, D = 3, P = 4;
    auto p = random_pm(H, W, rng);
    auto grid = random_grid(D, H, W, rng);
    auto c = confidence_map(p);
    double tau = adaptive_threshold(c, 0.3, 0.2);
    auto m = low_conf_mask(c, tau);

    auto loss_of = [&](const std::vector<double>& pv, const std::vector<double>& gv) {
        ProbMap pp = p;
        pp.values = pv;
        Tensor gg = grid;
        gg.data = gv;
        auto rev = reverse_probs(pp, m);
        auto fo = patch_features(gg, pp, P, 1e-8, FeatureView::original);
        auto fr = patch_features(gg, rev, P, 1e-8, FeatureView::reversed);
        return aurcl_loss(fo, fr, 0.1);
    };

    ad::Tape tape;
    Tensor pt({static_cast<size_t>(H * W)});
    pt.data = p.values;
    auto pn = tape.leaf(pt);
    auto gn = tape.leaf(grid);
    auto rn = reverse_node(tape, pn, m);
    auto fo = patch_features_node(tape, gn, pn, P, 1e-8);
    auto fr = patch_features_node(tape, gn, rn, P, 1e-8);
    auto loss = infonce_node(tape, fo, fr, 0.1);
    tape.backward(loss);

    const double step = 1e-5;
    for (size_t i = 0; i < pt.data.size(); i += 11) {
        auto hi = p.values, lo = p.values;
        hi[i] += step;
        lo[i] -= step;
        double fd = (loss_of(hi, grid.data) - loss_of(lo, grid.data)) / (2.0 * step);
        CHECK(std::abs(pn->grad.data[i] - fd) <= 2e-3 * std::max(1.0, std::abs(fd)));
    }
    for (size_t i = 0; i < grid.data.size(); i += 29) {
        auto hi = grid.data, lo = grid.data;
        hi[i] += step;
        lo[i] -= step;
        double fd = (loss_of(p.values, hi) - loss_of(p.values, lo)) / (2.0 * step);
        CHECK(std::abs(gn->grad.data[i] - fd) <= 2e-3 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("shape and argument validation") {
    ProbMap c = make_probmap(4, 4, 0.5);
    CHECK_THROWS(adaptive_threshold(c, 0.0, 0.2));
    CHECK_THROWS(adaptive_threshold(c, 1.5, 0.2));
    Tensor f({4, 4});
    Tensor g({3, 4});
    CHECK_THROWS(aurcl_loss({f, FeatureView::original}, {g, FeatureView::reversed}, 0.1));
    CHECK_THROWS(aurcl_loss({f, FeatureView::original}, {f, FeatureView::reversed}, 0.0));
}
