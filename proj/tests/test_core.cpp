#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pseudoseg/metrics.hpp"
#include "pseudoseg/rng.hpp"
#include "pseudoseg/splits.hpp"

using namespace pseudoseg;

namespace {

BinaryMask mask_of(int h, int w, std::function<int(int, int)> f) {
    BinaryMask m = make_mask(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) m.at(r, c) = f(r, c) ? 1 : 0;
    return m;
}

BinaryMask random_mask(int h, int w, Rng& rng, double p = 0.5) {
    return mask_of(h, w, [&](int, int) { return rng.bernoulli(p) ? 1 : 0; });
}

}  // namespace

TEST_CASE("dice identity and disjoint cases") {
    auto full = mask_of(8, 8, [](int, int) { return 1; });
    CHECK(dice(full, full) == 1.0);

    auto left = mask_of(8, 8, [](int, int c) { return c < 4; });
    auto right = mask_of(8, 8, [](int, int c) { return c >= 4; });
    CHECK(dice(left, right) == 0.0);

    // gt full, pred left half: 2*(HW/2) / (HW/2 + HW) = 2/3
    CHECK(dice(left, full) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("iou cases") {
    auto full = mask_of(8, 8, [](int, int) { return 1; });
    auto left = mask_of(8, 8, [](int, int c) { return c < 4; });
    auto right = mask_of(8, 8, [](int, int c) { return c >= 4; });
    CHECK(iou(full, full) == 1.0);
    CHECK(iou(left, right) == 0.0);
    CHECK(iou(left, full) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("pixel accuracy cases") {
    auto full = mask_of(8, 8, [](int, int) { return 1; });
    auto left = mask_of(8, 8, [](int, int c) { return c < 4; });
    auto empty = make_mask(8, 8);
    CHECK(pixel_accuracy(full, full) == 1.0);
    CHECK(pixel_accuracy(full, empty) == 0.0);
    CHECK(pixel_accuracy(left, full) == 0.5);
}

TEST_CASE("empty-vs-empty convention is 1.0") {
    auto empty = make_mask(4, 4);
    CHECK(dice(empty, empty) == 1.0);
    CHECK(iou(empty, empty) == 1.0);
    // empty vs nonempty is 0
    auto one = mask_of(4, 4, [](int r, int c) { return r == 0 && c == 0; });
    CHECK(dice(empty, one) == 0.0);
    CHECK(iou(empty, one) == 0.0);
}

TEST_CASE("metric shape mismatch is a hard error") {
    CHECK_THROWS(dice(make_mask(4, 4), make_mask(4, 5)));
}

TEST_CASE("dice = 2 iou / (1 + iou) on random pairs") {
    Rng rng(99);
    for (int i = 0; i < 200; ++i) {
        auto a = random_mask(16, 16, rng, 0.3);
        auto b = random_mask(16, 16, rng, 0.6);
        double d = dice(a, b), j = iou(a, b);
        CHECK(d == doctest::Approx(2.0 * j / (1.0 + j)).epsilon(1e-12));
        // symmetry
        CHECK(d == dice(b, a));
        CHECK(j == iou(b, a));
        CHECK(pixel_accuracy(a, b) == pixel_accuracy(b, a));
    }
}

TEST_CASE("binarize threshold and tie rule") {
    ProbMap p = make_probmap(1, 2);
    p.values = {0.4, 0.6};
    auto m = binarize(p, 0.5);
    CHECK(m.pixels[0] == 0);
    CHECK(m.pixels[1] == 1);

    ProbMap ties = make_probmap(2, 2, 0.5);
    CHECK(binarize(ties, 0.5).area() == 4);  // ties map to foreground

    ProbMap hi = make_probmap(2, 2, 0.7);
    CHECK(binarize(hi, 0.5).area() == 4);
}

namespace {
std::vector<std::string> numbered_ids(int n) {
    std::vector<std::string> ids;
    for (int i = 0; i < n; ++i) ids.push_back("img" + std::to_string(1000 + i));
    return ids;
}
}  // namespace

TEST_CASE("make_splits 8:1:1 with labeled count") {
    auto m = make_splits(numbered_ids(100), 0.10, 7);
    CHECK(m.labeled_ids.size() == 8);
    CHECK(m.unlabeled_ids.size() == 72);
    CHECK(m.val_ids.size() == 10);
    CHECK(m.test_ids.size() == 10);
}

TEST_CASE("make_splits determinism and ratio 1.0") {
    auto a = make_splits(numbered_ids(50), 0.2, 3);
    auto b = make_splits(numbered_ids(50), 0.2, 3);
    CHECK(a == b);

    auto full = make_splits(numbered_ids(50), 1.0, 3);
    CHECK(full.unlabeled_ids.empty());
    CHECK(full.labeled_ids.size() == 40);
}

TEST_CASE("make_splits input order does not matter") {
    auto ids = numbered_ids(40);
    auto a = make_splits(ids, 0.1, 11);
    std::reverse(ids.begin(), ids.end());
    auto b = make_splits(ids, 0.1, 11);
    CHECK(a == b);
}

TEST_CASE("make_splits rejects tiny id sets") {
    CHECK_THROWS(make_splits(numbered_ids(4), 0.1, 0));
}

TEST_CASE("make_splits partitions are disjoint and cover all ids") {
    auto m = make_splits(numbered_ids(37), 0.25, 5);
    std::vector<std::string> all;
    for (const auto* v : {&m.labeled_ids, &m.unlabeled_ids, &m.val_ids, &m.test_ids})
        all.insert(all.end(), v->begin(), v->end());
    std::sort(all.begin(), all.end());
    CHECK(std::unique(all.begin(), all.end()) == all.end());
    CHECK(all.size() == 37);
}

TEST_CASE("manifest json round trip") {
    auto m = make_splits(numbered_ids(20), 0.5, 42);
    CHECK(manifest_from_json(to_json(m)) == m);
}

TEST_CASE("labeled ratio 2.5% on 100 ids gives 2 labeled") {
    auto m = make_splits(numbered_ids(100), 0.025, 1);
    CHECK(m.labeled_ids.size() == 2);  // round(0.025 * 80)
}
