#include "pseudoseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pseudoseg/rng.hpp"
#include <json.hpp>

namespace pseudoseg {

const GrayscaleImage& Dataset::image(const std::string& id) const {
    auto it = images.find(id);
    if (it == images.end()) throw std::out_of_range("dataset: unknown image id " + id);
    return it->second;
}

const BinaryMask& Dataset::mask(const std::string& id) const {
    auto it = masks.find(id);
    if (it == masks.end()) throw std::out_of_range("dataset: no mask for id " + id);
    return it->second;
}

std::vector<std::string> Dataset::ids() const {
    std::vector<std::string> out;
    out.reserve(images.size());
    for (const auto& [id, img] : images) out.push_back(id);
    return out;
}

namespace {

Tensor stack_images(const std::vector<std::string>& ids, const Dataset& data) {
    const GrayscaleImage& first = data.image(ids.front());
    Tensor x({static_cast<int>(ids.size()), 1, first.height, first.width});
    const size_t hw = static_cast<size_t>(first.height) * first.width;
    for (size_t i = 0; i < ids.size(); ++i) {
        const GrayscaleImage& img = data.image(ids[i]);
        require_same_shape(img.height, img.width, first.height, first.width, "stack_images");
        std::copy(img.pixels.begin(), img.pixels.end(), x.data.begin() + i * hw);
    }
    return x;
}

Tensor stack_mask_targets(const std::vector<std::string>& ids,
                          const std::map<std::string, BinaryMask>& masks, int h, int w) {
    Tensor t({static_cast<int>(ids.size()), 1, h, w});
    const size_t hw = static_cast<size_t>(h) * w;
    for (size_t i = 0; i < ids.size(); ++i) {
        const BinaryMask& m = masks.at(ids[i]);
        require_same_shape(m.height, m.width, h, w, "targets");
        for (size_t j = 0; j < hw; ++j) t.data[i * hw + j] = m.pixels[j];
    }
    return t;
}

ProbMap slice_probs(const Tensor& batched, int b, int h, int w) {
    ProbMap p = make_probmap(h, w);
    const size_t hw = static_cast<size_t>(h) * w;
    std::copy(batched.data.begin() + b * hw, batched.data.begin() + (b + 1) * hw, p.values.begin());
    return p;
}

void shuffle_ids(std::vector<std::string>& ids, Rng& rng) {
    for (size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.uniform_int(i)]);
}

void check_finite(double v, const char* what, const std::vector<std::string>& batch_ids) {
    if (std::isfinite(v)) return;
    std::string ids;
    for (const auto& id : batch_ids) ids += id + " ";
    throw std::runtime_error(std::string("train_step: non-finite ") + what + " on batch [" + ids + "]");
}

}  // namespace

TrainerState TrainerState::init(const Backbone& warmed_teacher, const TrainerConfig& cfg) {
    if (!warmed_teacher.frozen())
        throw std::invalid_argument("TrainerState: static teacher must be frozen after warm-up");
    TrainerState s{Backbone(warmed_teacher.config()), warmed_teacher, Backbone(warmed_teacher.config()),
                   AdamOptimizer(cfg.lr), 0, cfg};
    s.student.restore(warmed_teacher.snapshot());
    s.ema_teacher.restore(s.student.snapshot());
    return s;
}

Backbone warmup_static_teacher(const Dataset& data,
                               const std::map<std::string, BinaryMask>& pseudo_masks,
                               const TrainerConfig& cfg, std::vector<double>* epoch_losses) {
    std::vector<std::string> ids;
    for (const auto& [id, m] : pseudo_masks)
        if (data.images.count(id)) ids.push_back(id);
    if (ids.empty())
        throw std::runtime_error(
            "warmup_static_teacher: no valid pseudo-labeled samples; lower the replay "
            "jitter/dropout or check the appg backends");

    Backbone model(cfg.backbone);
    AdamOptimizer opt(cfg.lr);
    const int h = data.image(ids.front()).height, w = data.image(ids.front()).width;

    for (int epoch = 0; epoch < cfg.warmup_epochs; ++epoch) {
        Rng rng(mix_seed(static_cast<uint64_t>(cfg.seed), 0x3a0aULL + static_cast<uint64_t>(epoch)));
        std::vector<std::string> order = ids;
        shuffle_ids(order, rng);
        double loss_sum = 0.0;
        int n_batches = 0;
        for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::vector<std::string> batch(order.begin() + start,
                                           order.begin() + std::min(order.size(),
                                                                    start + cfg.batch_size));
            ad::Tape tape;
            auto fwd = model.forward_train(tape, stack_images(batch, data));
            auto loss = seg_node(tape, fwd.probs, stack_mask_targets(batch, pseudo_masks, h, w));
            check_finite(loss->value.data[0], "warm-up loss", batch);
            tape.backward(loss);
            opt.step(model, fwd.params);
            loss_sum += loss->value.data[0];
            ++n_batches;
        }
        if (epoch_losses) epoch_losses->push_back(loss_sum / std::max(1, n_batches));
    }
    model.set_frozen(true);
    return model;
}

namespace {

StepResult run_step(TrainerState& state, const std::vector<std::string>& labeled_ids,
                    const std::vector<std::string>& unlabeled_ids, const Dataset& data,
                    bool include_unlabeled) {
    const TrainerConfig& cfg = state.cfg;
    if (labeled_ids.empty()) throw std::invalid_argument("train_step: empty labeled half");

    ad::Tape tape;
    ad::NodePtr total, l_s_node, l_u_node, l_c_node;
    std::map<std::string, ad::NodePtr> param_nodes;
    StepResult res;

    // (1) supervised half
    {
        auto fwd = state.student.forward_train(tape, stack_images(labeled_ids, data));
        param_nodes = fwd.params;
        const int h = fwd.probs->value.dim(2), w = fwd.probs->value.dim(3);
        l_s_node = seg_node(tape, fwd.probs, stack_mask_targets(labeled_ids, data.masks, h, w));
        total = l_s_node;
    }

    if (include_unlabeled && !unlabeled_ids.empty()) {
        Tensor xu = stack_images(unlabeled_ids, data);
        const int h = xu.dim(2), w = xu.dim(3);
        const int nu = static_cast<int>(unlabeled_ids.size());

        // (2) both teachers in eval mode, detached
        auto [logits_a, feat_a] = state.static_teacher.forward_eval(xu);
        auto [logits_b, feat_b] = state.ema_teacher.forward_eval(xu);
        Tensor pa = ad::kernels::sigmoid_fwd(logits_a);
        Tensor pb = ad::kernels::sigmoid_fwd(logits_b);

        // (3) uncertainty-weighted fusion per image
        Tensor fused({nu, 1, h, w});
        const size_t hw = static_cast<size_t>(h) * w;
        for (int i = 0; i < nu; ++i) {
            ProbMap f = fuse(slice_probs(pa, i, h, w), slice_probs(pb, i, h, w), cfg.fusion);
            std::copy(f.values.begin(), f.values.end(), fused.data.begin() + i * hw);
        }

        // (4) student on the unlabeled half, trained against the fused soft labels
        auto fwd_u = state.student.forward_with(tape, xu, param_nodes);
        l_u_node = seg_node(tape, fwd_u.probs, fused);

        // (5) AURCL over the unlabeled images
        ad::NodePtr l_c_sum;
        for (int i = 0; i < nu; ++i) {
            auto p_i = ad::select_sample(tape, fwd_u.probs, i);   // [1,H,W]
            auto f_i = ad::select_sample(tape, fwd_u.features, i);  // [D,H,W]
            ProbMap p_plain = slice_probs(fwd_u.probs->value, i, h, w);
            ProbMap c = confidence_map(p_plain);
            double tau = adaptive_threshold(c, cfg.aurcl.reverse_ratio, cfg.aurcl.tau_fix);
            BinaryMask m = low_conf_mask(c, tau);
            res.tau_mean += tau / nu;
            res.mask_frac += static_cast<double>(m.area()) / (hw * nu);

            auto p_rev = reverse_node(tape, p_i, m);
            auto f_orig = patch_features_node(tape, f_i, p_i, cfg.aurcl.patch_size, cfg.aurcl.eps);
            auto f_rev = patch_features_node(tape, f_i, p_rev, cfg.aurcl.patch_size, cfg.aurcl.eps);
            auto li = infonce_node(tape, f_orig, f_rev, cfg.aurcl.temperature, cfg.aurcl.eps);
            l_c_sum = l_c_sum ? ad::add(tape, l_c_sum, li) : li;
        }
        l_c_node = ad::scale(tape, l_c_sum, 1.0 / nu);

        // (6) Eq. 1 combination
        total = ad::add(tape, total,
                        ad::add(tape, ad::scale(tape, l_u_node, cfg.weights.lambda_u),
                                ad::scale(tape, l_c_node, cfg.weights.lambda_c)));
    }

    res.losses.l_s = l_s_node->value.data[0];
    res.losses.l_u = l_u_node ? l_u_node->value.data[0] : 0.0;
    res.losses.l_c = l_c_node ? l_c_node->value.data[0] : 0.0;
    res.losses.total = res.losses.l_s + cfg.weights.lambda_u * res.losses.l_u +
                       cfg.weights.lambda_c * res.losses.l_c;
    check_finite(res.losses.l_s, "l_s", labeled_ids);
    check_finite(res.losses.l_u, "l_u", unlabeled_ids);
    check_finite(res.losses.l_c, "l_c", unlabeled_ids);

    tape.backward(total);
    state.optimizer.step(state.student, param_nodes);

    // (7) dynamic teacher follows the student
    ema_update(state.ema_teacher, state.student, cfg.ema_momentum);
    return res;
}

}  // namespace

StepResult train_step(TrainerState& state, const std::vector<std::string>& labeled_ids,
                      const std::vector<std::string>& unlabeled_ids, const Dataset& data) {
    if (!state.static_teacher.frozen())
        throw std::logic_error("train_step: static teacher must be frozen");
    return run_step(state, labeled_ids, unlabeled_ids, data, true);
}

StepResult supervised_step(TrainerState& state, const std::vector<std::string>& labeled_ids,
                           const Dataset& data) {
    return run_step(state, labeled_ids, {}, data, false);
}

MetricsRecord evaluate(const Backbone& model, const std::vector<std::string>& ids,
                       const Dataset& data, double threshold) {
    MetricsRecord rec;
    if (ids.empty()) throw std::invalid_argument("evaluate: empty id list");
    for (const auto& id : ids) {
        ProbMap p = model.predict(data.image(id));
        BinaryMask pred = binarize(p, threshold);
        const BinaryMask& gt = data.mask(id);
        rec.dice += dice(pred, gt);
        rec.iou += iou(pred, gt);
        rec.acc += pixel_accuracy(pred, gt);
    }
    rec.n_images = static_cast<int>(ids.size());
    rec.dice /= rec.n_images;
    rec.iou /= rec.n_images;
    rec.acc /= rec.n_images;
    return rec;
}

TrainResult train(TrainerState& state, const SplitManifest& manifest, const Dataset& data,
                  const EpochCallback& on_epoch) {
    const TrainerConfig& cfg = state.cfg;
    const int half = cfg.batch_size / 2;
    if (half < 1) throw std::invalid_argument("train: batch_size must be >= 2");

    TrainResult result;
    const uint64_t static_hash = state.static_teacher.param_hash();

    // the warm-started student is a candidate checkpoint too: with very few
    // labeled images the refinement epochs can overfit, so best-by-val-Dice
    // selection starts from the initial state rather than epoch 0
    if (state.epoch == 0) {
        MetricsRecord val = evaluate(state.student, manifest.val_ids, data);
        result.best_val_dice = val.dice;
        result.best_student = state.student.snapshot();
        result.best_epoch = -1;
    }

    for (; state.epoch < cfg.epochs; ++state.epoch) {
        Rng rng(mix_seed(static_cast<uint64_t>(cfg.seed), 0x7a13ULL + static_cast<uint64_t>(state.epoch)));
        std::vector<std::string> lab = manifest.labeled_ids;
        std::vector<std::string> unlab = cfg.supervised_only ? std::vector<std::string>{}
                                                             : manifest.unlabeled_ids;
        shuffle_ids(lab, rng);
        shuffle_ids(unlab, rng);

        const size_t driver = std::max(lab.size(), unlab.size());
        const size_t steps = (driver + half - 1) / half;
        EpochRecord rec;
        rec.epoch = state.epoch;
        for (size_t s = 0; s < steps; ++s) {
            std::vector<std::string> lb(half), ub;
            for (int i = 0; i < half; ++i) lb[i] = lab[(s * half + i) % lab.size()];
            if (!unlab.empty()) {
                ub.resize(half);
                for (int i = 0; i < half; ++i) ub[i] = unlab[(s * half + i) % unlab.size()];
            }
            StepResult sr = train_step(state, lb, ub, data);
            rec.l_s += sr.losses.l_s;
            rec.l_u += sr.losses.l_u;
            rec.l_c += sr.losses.l_c;
            rec.total += sr.losses.total;
            rec.tau_mean += sr.tau_mean;
            rec.mask_frac += sr.mask_frac;
        }
        const double inv = 1.0 / static_cast<double>(steps);
        rec.l_s *= inv;
        rec.l_u *= inv;
        rec.l_c *= inv;
        rec.total *= inv;
        rec.tau_mean *= inv;
        rec.mask_frac *= inv;

        MetricsRecord val = evaluate(state.student, manifest.val_ids, data);
        rec.val_dice = val.dice;
        rec.val_iou = val.iou;
        rec.val_acc = val.acc;
        rec.lr = state.optimizer.lr();

        if (state.static_teacher.param_hash() != static_hash)
            throw std::logic_error("train: static teacher changed during step 3");

        if (val.dice > result.best_val_dice) {
            result.best_val_dice = val.dice;
            result.best_student = state.student.snapshot();
            result.best_epoch = state.epoch;
        }
        state.cfg.scheduler.step(val.dice, state.optimizer.lr());
        rec.lr = state.optimizer.lr();

        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }

    if (result.best_student.empty()) {  // resumed past cfg.epochs: report as-is
        result.best_student = state.student.snapshot();
        MetricsRecord val = evaluate(state.student, manifest.val_ids, data);
        result.best_val_dice = val.dice;
        result.best_epoch = state.epoch - 1;
    }
    return result;
}

void save_trainer_checkpoint(const TrainerState& state, const TrainResult& partial,
                             const std::string& path) {
    std::map<std::string, Tensor> arrays;
    for (const auto& [n, t] : state.student.parameters()) arrays["student/" + n] = t;
    for (const auto& [n, t] : state.ema_teacher.parameters()) arrays["ema/" + n] = t;
    auto& opt = const_cast<AdamOptimizer&>(state.optimizer);
    for (const auto& [n, t] : opt.moment1()) arrays["adam_m/" + n] = t;
    for (const auto& [n, t] : opt.moment2()) arrays["adam_v/" + n] = t;

    nlohmann::json hdr;
    hdr["kind"] = "trainer";
    hdr["version"] = 1;
    hdr["epoch"] = state.epoch;
    hdr["lr"] = state.optimizer.lr();
    hdr["adam_steps"] = state.optimizer.step_count();
    hdr["scheduler"] = {{"best", state.cfg.scheduler.best}, {"bad_epochs", state.cfg.scheduler.bad_epochs}};
    hdr["best_val_dice"] = partial.best_val_dice;
    hdr["best_epoch"] = partial.best_epoch;
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& r : partial.history)
        hist.push_back({{"epoch", r.epoch}, {"l_s", r.l_s}, {"l_u", r.l_u}, {"l_c", r.l_c},
                        {"total", r.total}, {"val_dice", r.val_dice}, {"val_iou", r.val_iou},
                        {"val_acc", r.val_acc}, {"lr", r.lr}, {"tau_mean", r.tau_mean},
                        {"mask_frac", r.mask_frac}});
    hdr["history"] = hist;
    for (const auto& [n, t] : partial.best_student) arrays["best/" + n] = t;
    save_archive(path, hdr.dump(), arrays);
}

void load_trainer_checkpoint(TrainerState& state, TrainResult& partial, const std::string& path) {
    auto [hdr_text, arrays] = load_archive(path);
    nlohmann::json hdr = nlohmann::json::parse(hdr_text);
    if (hdr.value("kind", "") != "trainer")
        throw std::runtime_error("load_trainer_checkpoint: not a trainer checkpoint: " + path);

    ParamSnapshot student, ema, best;
    for (auto& [name, t] : arrays) {
        if (name.starts_with("student/")) student[name.substr(8)] = std::move(t);
        else if (name.starts_with("ema/")) ema[name.substr(4)] = std::move(t);
        else if (name.starts_with("adam_m/")) state.optimizer.moment1()[name.substr(7)] = std::move(t);
        else if (name.starts_with("adam_v/")) state.optimizer.moment2()[name.substr(7)] = std::move(t);
        else if (name.starts_with("best/")) best[name.substr(5)] = std::move(t);
    }
    state.student.restore(student);
    state.ema_teacher.restore(ema);
    state.epoch = hdr.at("epoch").get<int>();
    state.optimizer.lr() = hdr.at("lr").get<double>();
    state.optimizer.set_step_count(hdr.at("adam_steps").get<int64_t>());
    state.cfg.scheduler.best = hdr.at("scheduler").at("best").get<double>();
    state.cfg.scheduler.bad_epochs = hdr.at("scheduler").at("bad_epochs").get<int>();

    partial.best_val_dice = hdr.at("best_val_dice").get<double>();
    partial.best_epoch = hdr.at("best_epoch").get<int>();
    partial.best_student = std::move(best);
    partial.history.clear();
    for (const auto& r : hdr.at("history")) {
        EpochRecord e;
        e.epoch = r.at("epoch").get<int>();
        e.l_s = r.at("l_s").get<double>();
        e.l_u = r.at("l_u").get<double>();
        e.l_c = r.at("l_c").get<double>();
        e.total = r.at("total").get<double>();
        e.val_dice = r.at("val_dice").get<double>();
        e.val_iou = r.at("val_iou").get<double>();
        e.val_acc = r.at("val_acc").get<double>();
        e.lr = r.at("lr").get<double>();
        e.tau_mean = r.at("tau_mean").get<double>();
        e.mask_frac = r.at("mask_frac").get<double>();
        partial.history.push_back(e);
    }
}

}  // namespace pseudoseg
