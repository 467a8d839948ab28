#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "pseudoseg/synth.hpp"
#include "pseudoseg/trainer.hpp"

using namespace pseudoseg;
namespace fs = std::filesystem;

namespace {

Dataset tiny_dataset(int count, int size = 32, int64_t seed = 31) {
    SynthConfig cfg;
    cfg.image_size = size;
    cfg.count = count;
    cfg.seed = seed;
    Dataset data;
    for (int i = 0; i < count; ++i) {
        auto [img, mask] = generate_case(cfg, i);
        data.masks[img.id] = mask;
        data.images[img.id] = std::move(img);
    }
    return data;
}

TrainerConfig tiny_cfg() {
    TrainerConfig cfg;
    cfg.batch_size = 4;
    cfg.epochs = 2;
    cfg.warmup_epochs = 8;
    cfg.lr = 5e-3;
    cfg.backbone.c1 = 4;
    cfg.backbone.c2 = 8;
    cfg.backbone.c3 = 8;
    cfg.backbone.groups = 2;
    cfg.backbone.init_seed = 5;
    cfg.fusion.k = 4;
    cfg.aurcl.patch_size = 4;
    cfg.seed = 9;
    return cfg;
}

}  // namespace

TEST_CASE("warmup loss decreases and the teacher fits its pseudo labels") {
    auto data = tiny_dataset(8);
    auto cfg = tiny_cfg();
    cfg.warmup_epochs = 40;
    std::vector<double> losses;
    Backbone teacher = warmup_static_teacher(data, data.masks, cfg, &losses);
    REQUIRE(losses.size() == 40);
    CHECK(losses.back() < losses.front());
    CHECK(teacher.frozen());

    auto rec = evaluate(teacher, data.ids(), data);
    CHECK(rec.dice >= 0.8);
}

TEST_CASE("warmup requires a nonempty pseudo-label set") {
    auto data = tiny_dataset(4);
    CHECK_THROWS(warmup_static_teacher(data, {}, tiny_cfg()));
}

TEST_CASE("init starts student from the teacher and ema from the student") {
    auto data = tiny_dataset(6);
    auto cfg = tiny_cfg();
    cfg.warmup_epochs = 2;
    Backbone teacher = warmup_static_teacher(data, data.masks, cfg);
    auto st = TrainerState::init(teacher, cfg);
    CHECK(st.student.param_hash() == teacher.param_hash());
    CHECK(st.ema_teacher.param_hash() == st.student.param_hash());
    CHECK(st.static_teacher.frozen());
    CHECK(!st.student.frozen());

    Backbone unfrozen(cfg.backbone);
    CHECK_THROWS(TrainerState::init(unfrozen, cfg));
}

TEST_CASE("one-sample overfit drives the supervised loss near zero") {
    auto data = tiny_dataset(2);
    auto cfg = tiny_cfg();
    cfg.warmup_epochs = 2;
    cfg.lr = 1e-2;
    Backbone teacher = warmup_static_teacher(data, data.masks, cfg);
    auto st = TrainerState::init(teacher, cfg);
    std::vector<std::string> one{data.ids()[0]};
    double first = 0, last = 0;
    for (int i = 0; i < 60; ++i) {
        auto r = supervised_step(st, one, data);
        if (i == 0) first = r.losses.l_s;
        last = r.losses.l_s;
    }
    CHECK(last < first);
    CHECK(last < 0.2);
}

TEST_CASE("lambda=0 train_step is bit-identical to supervised_step") {
    auto data = tiny_dataset(8);
    auto cfg = tiny_cfg();
    cfg.warmup_epochs = 3;
    cfg.weights.lambda_u = 0.0;
    cfg.weights.lambda_c = 0.0;
    Backbone teacher = warmup_static_teacher(data, data.masks, cfg);

    auto ids = data.ids();
    std::vector<std::string> lab(ids.begin(), ids.begin() + 4);
    std::vector<std::string> unlab(ids.begin() + 4, ids.end());

    auto a = TrainerState::init(teacher, cfg);
    auto b = TrainerState::init(teacher, cfg);
    for (int i = 0; i < 3; ++i) {
        auto ra = train_step(a, lab, unlab, data);
        auto rb = supervised_step(b, lab, data);
        CHECK(ra.losses.l_s == rb.losses.l_s);
        CHECK(ra.losses.total == rb.losses.total);
    }
    CHECK(a.student.param_hash() == b.student.param_hash());
}

TEST_CASE("teachers receive no gradient from train_step") {
    auto data = tiny_dataset(8);
    auto cfg = tiny_cfg();
    cfg.warmup_epochs = 3;
    Backbone teacher = warmup_static_teacher(data, data.masks, cfg);
    auto st = TrainerState::init(teacher, cfg);
    uint64_t static_hash = st.static_teacher.param_hash();
    uint64_t student0 = st.student.param_hash();
    uint64_t ema0 = st.ema_teacher.param_hash();

    auto ids = data.ids();
    std::vector<std::string> lab(ids.begin(), ids.begin() + 4);
    std::vector<std::string> unlab(ids.begin() + 4, ids.end());
    auto r = train_step(st, lab, unlab, data);

    CHECK(st.static_teacher.param_hash() == static_hash);  // frozen forever
    CHECK(st.student.param_hash() != student0);            // student moved
    CHECK(st.ema_teacher.param_hash() != ema0);            // ema tracked it
    CHECK(r.losses.total ==
          doctest::Approx(r.losses.l_s + cfg.weights.lambda_u * r.losses.l_u +
                          cfg.weights.lambda_c * r.losses.l_c)
              .epsilon(1e-12));
    CHECK(r.tau_mean >= cfg.aurcl.tau_fix);
    CHECK(r.mask_frac >= 0.0);
    CHECK(r.mask_frac <= 1.0);
}

TEST_CASE("ema teacher moves by the contraction rule after a step") {
    auto data = tiny_dataset(8);
    auto cfg = tiny_cfg();
    cfg.warmup_epochs = 3;
    cfg.ema_momentum = 0.9;
    Backbone teacher = warmup_static_teacher(data, data.masks, cfg);
    auto st = TrainerState::init(teacher, cfg);
    auto ema_before = st.ema_teacher.snapshot();

    auto ids = data.ids();
    std::vector<std::string> lab(ids.begin(), ids.begin() + 4);
    std::vector<std::string> unlab(ids.begin() + 4, ids.end());
    train_step(st, lab, unlab, data);

    for (const auto& [name, t] : st.ema_teacher.parameters()) {
        const auto& old = ema_before.at(name);
        const auto& s = st.student.parameters().at(name);
        for (size_t i = 0; i < t.data.size(); i += std::max<size_t>(1, t.data.size() / 4))
            CHECK(t.data[i] ==
                  doctest::Approx(0.9 * old.data[i] + 0.1 * s.data[i]).epsilon(1e-9));
    }
}

TEST_CASE("full train loop runs, records history, and tracks the best epoch") {
    auto data = tiny_dataset(12);
    auto cfg = tiny_cfg();
    cfg.warmup_epochs = 5;
    cfg.epochs = 3;
    Backbone teacher = warmup_static_teacher(data, data.masks, cfg);
    auto st = TrainerState::init(teacher, cfg);

    auto manifest = make_splits(data.ids(), 0.5, 3);
    int callbacks = 0;
    auto res = train(st, manifest, data, [&](const EpochRecord& r) {
        ++callbacks;
        CHECK(r.epoch == callbacks - 1);
    });
    CHECK(res.history.size() == 3);
    CHECK(callbacks == 3);
    CHECK(res.best_epoch >= -1);
    CHECK(res.best_val_dice >= 0.0);
    CHECK(!res.best_student.empty());
    for (const auto& r : res.history) {
        CHECK(std::isfinite(r.total));
        CHECK(r.lr > 0.0);
    }
}

TEST_CASE("epochs=0 yields only the initial evaluation state") {
    auto data = tiny_dataset(12);
    auto cfg = tiny_cfg();
    cfg.warmup_epochs = 3;
    cfg.epochs = 0;
    Backbone teacher = warmup_static_teacher(data, data.masks, cfg);
    auto st = TrainerState::init(teacher, cfg);
    auto res = train(st, make_splits(data.ids(), 0.5, 3), data);
    CHECK(res.history.empty());
    CHECK(res.best_epoch == -1);
    CHECK(st.student.param_hash() == teacher.param_hash());
}

TEST_CASE("supervised_only config ignores the unlabeled pool") {
    auto data = tiny_dataset(12);
    auto cfg = tiny_cfg();
    cfg.warmup_epochs = 3;
    cfg.epochs = 2;
    cfg.supervised_only = true;
    Backbone teacher = warmup_static_teacher(data, data.masks, cfg);
    auto st = TrainerState::init(teacher, cfg);
    auto res = train(st, make_splits(data.ids(), 0.5, 3), data);
    for (const auto& r : res.history) {
        CHECK(r.l_u == 0.0);
        CHECK(r.l_c == 0.0);
    }
}

TEST_CASE("same seed reproduces the trajectory; different seed diverges") {
    auto data = tiny_dataset(10);
    auto cfg = tiny_cfg();
    cfg.warmup_epochs = 3;
    cfg.epochs = 2;
    Backbone teacher = warmup_static_teacher(data, data.masks, cfg);
    auto manifest = make_splits(data.ids(), 0.5, 3);

    auto run = [&](int64_t seed) {
        auto c = cfg;
        c.seed = seed;
        auto st = TrainerState::init(teacher, c);
        auto res = train(st, manifest, data);
        return std::make_pair(st.student.param_hash(), res.history.back().total);
    };
    auto a = run(1), b = run(1), c = run(2);
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
    CHECK(a.first != c.first);
}

TEST_CASE("checkpoint resume reproduces the uninterrupted run exactly") {
    auto data = tiny_dataset(10);
    auto cfg = tiny_cfg();
    cfg.warmup_epochs = 3;
    cfg.epochs = 4;
    Backbone teacher = warmup_static_teacher(data, data.masks, cfg);
    auto manifest = make_splits(data.ids(), 0.5, 3);

    // uninterrupted 4 epochs
    auto st_full = TrainerState::init(teacher, cfg);
    auto res_full = train(st_full, manifest, data);

    // 2 epochs, checkpoint, resume for 2 more
    auto cfg2 = cfg;
    cfg2.epochs = 2;
    auto st_a = TrainerState::init(teacher, cfg2);
    auto res_a = train(st_a, manifest, data);
    fs::path path = fs::temp_directory_path() / "pseg_trainer_test.ckpt";
    save_trainer_checkpoint(st_a, res_a, path.string());

    auto st_b = TrainerState::init(teacher, cfg);  // will be overwritten by load
    TrainResult res_b;
    load_trainer_checkpoint(st_b, res_b, path.string());
    CHECK(st_b.student.param_hash() == st_a.student.param_hash());
    CHECK(st_b.ema_teacher.param_hash() == st_a.ema_teacher.param_hash());
    CHECK(st_b.epoch == st_a.epoch);

    st_b.cfg.epochs = 4;
    auto res_resumed = train(st_b, manifest, data);
    CHECK(st_b.student.param_hash() == st_full.student.param_hash());
    REQUIRE(res_resumed.history.size() == 2);
    CHECK(res_resumed.history.back().total ==
          doctest::Approx(res_full.history.back().total).epsilon(1e-12));
    fs::remove(path);
}

TEST_CASE("evaluate averages per-image metrics at threshold 0.5") {
    auto data = tiny_dataset(6);
    Backbone m(tiny_cfg().backbone);
    auto rec = evaluate(m, data.ids(), data);
    CHECK(rec.dice >= 0.0);
    CHECK(rec.dice <= 1.0);
    CHECK(rec.n_images == 6);
    CHECK_THROWS(evaluate(m, {}, data));
}
