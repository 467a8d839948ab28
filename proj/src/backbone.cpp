#include "pseudoseg/backbone.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "pseudoseg/rng.hpp"
#include <json.hpp>

namespace pseudoseg {

namespace {

Tensor he_normal(Rng& rng, std::vector<int> shape, int fan_in) {
    Tensor t(std::move(shape));
    const double s = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : t.data) v = s * rng.normal();
    return t;
}

Tensor filled(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.data) x = v;
    return t;
}

}  // namespace

Backbone::Backbone(const BackboneConfig& cfg) : cfg_(cfg) {
    if (cfg.c1 % cfg.groups || cfg.c2 % cfg.groups || cfg.c3 % cfg.groups)
        throw std::invalid_argument("Backbone: groups must divide every channel width");
    Rng rng(mix_seed(static_cast<uint64_t>(cfg.init_seed), 0xbacbULL));
    auto block = [&](const std::string& name, int cin, int cout) {
        params_[name + ".w"] = he_normal(rng, {cout, cin, 3, 3}, cin * 9);
        params_[name + ".b"] = Tensor({cout});
        params_[name + ".gamma"] = filled({cout}, 1.0);
        params_[name + ".beta"] = Tensor({cout});
    };
    block("e1", cfg.in_channels, cfg.c1);
    block("e2", cfg.c1, cfg.c2);
    block("mid", cfg.c2, cfg.c3);
    block("d2", cfg.c3 + cfg.c2, cfg.c2);
    block("d1", cfg.c2 + cfg.c1, cfg.c1);
    params_["head.w"] = he_normal(rng, {1, cfg.c1, 1, 1}, cfg.c1);
    params_["head.b"] = Tensor({1});
}

ForwardNodes Backbone::forward_train(ad::Tape& t, const Tensor& batch) const {
    std::map<std::string, ad::NodePtr> pn;
    for (const auto& [name, tensor] : params_) pn[name] = t.leaf(tensor);
    return forward_with(t, batch, pn);
}

ForwardNodes Backbone::forward_with(ad::Tape& t, const Tensor& batch,
                                    const std::map<std::string, ad::NodePtr>& param_nodes) const {
    if (batch.shape.size() != 4 || batch.dim(1) != cfg_.in_channels)
        throw std::invalid_argument("forward: expected [B," + std::to_string(cfg_.in_channels) +
                                    ",H,W], got " + batch.shape_str());
    if (batch.dim(2) % 4 || batch.dim(3) % 4)
        throw std::invalid_argument("forward: H and W must be divisible by 4");

    ForwardNodes out;
    out.params = param_nodes;
    std::map<std::string, ad::NodePtr>& pn = out.params;

    auto conv_block = [&](const std::string& name, const ad::NodePtr& x) {
        auto c = ad::conv2d(t, x, pn[name + ".w"], pn[name + ".b"]);
        auto g = ad::group_norm(t, c, pn[name + ".gamma"], pn[name + ".beta"], cfg_.groups);
        return ad::relu(t, g);
    };

    auto x = t.constant(batch);
    auto e1 = conv_block("e1", x);
    auto e2 = conv_block("e2", ad::avg_pool2(t, e1));
    auto mid = conv_block("mid", ad::avg_pool2(t, e2));
    auto d2 = conv_block("d2", ad::concat_channels(t, ad::upsample2(t, mid), e2));
    auto d1 = conv_block("d1", ad::concat_channels(t, ad::upsample2(t, d2), e1));
    out.features = d1;
    out.logits = ad::conv2d(t, d1, pn["head.w"], pn["head.b"]);
    out.probs = ad::sigmoid(t, out.logits);
    return out;
}

std::pair<Tensor, Tensor> Backbone::forward_eval(const Tensor& batch) const {
    using namespace ad::kernels;
    if (batch.shape.size() != 4 || batch.dim(2) % 4 || batch.dim(3) % 4)
        throw std::invalid_argument("forward_eval: bad input shape " + batch.shape_str());
    auto p = [&](const std::string& n) -> const Tensor& { return params_.at(n); };
    auto conv_block = [&](const std::string& name, const Tensor& x) {
        return relu_fwd(group_norm_fwd(conv2d_fwd(x, p(name + ".w"), p(name + ".b")),
                                       p(name + ".gamma"), p(name + ".beta"), cfg_.groups, 1e-5));
    };
    Tensor e1 = conv_block("e1", batch);
    Tensor e2 = conv_block("e2", avg_pool2_fwd(e1));
    Tensor mid = conv_block("mid", avg_pool2_fwd(e2));
    Tensor d2 = conv_block("d2", concat_channels_fwd(upsample2_fwd(mid), e2));
    Tensor d1 = conv_block("d1", concat_channels_fwd(upsample2_fwd(d2), e1));
    Tensor logits = conv2d_fwd(d1, p("head.w"), p("head.b"));
    return {std::move(logits), std::move(d1)};
}

ProbMap Backbone::predict(const GrayscaleImage& image) const {
    Tensor x({1, 1, image.height, image.width});
    x.data = image.pixels;
    auto [logits, features] = forward_eval(x);
    ProbMap p = make_probmap(image.height, image.width);
    for (size_t i = 0; i < p.values.size(); ++i) p.values[i] = 1.0 / (1.0 + std::exp(-logits.data[i]));
    return p;
}

void Backbone::restore(const ParamSnapshot& snap) {
    for (auto& [name, tensor] : params_) {
        auto it = snap.find(name);
        if (it == snap.end() || it->second.shape != tensor.shape)
            throw std::invalid_argument("restore: incompatible snapshot at '" + name + "'");
        tensor.data = it->second.data;
    }
}

uint64_t Backbone::param_hash() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, tensor] : params_) {
        for (char c : name) {
            h ^= static_cast<uint8_t>(c);
            h *= 0x100000001b3ULL;
        }
        for (double v : tensor.data) {
            uint64_t bits;
            std::memcpy(&bits, &v, sizeof(bits));
            for (int i = 0; i < 8; ++i) {
                h ^= (bits >> (8 * i)) & 0xff;
                h *= 0x100000001b3ULL;
            }
        }
    }
    return h;
}

void ema_update(Backbone& teacher, const Backbone& student, double momentum) {
    if (momentum < 0.0 || momentum > 1.0)
        throw std::invalid_argument("ema_update: momentum must be in [0,1]");
    auto& tp = teacher.parameters();
    const auto& sp = student.parameters();
    for (auto& [name, tensor] : tp) {
        const Tensor& s = sp.at(name);
        if (s.shape != tensor.shape) throw std::invalid_argument("ema_update: shape mismatch at " + name);
        for (size_t i = 0; i < tensor.data.size(); ++i)
            tensor.data[i] = momentum * tensor.data[i] + (1.0 - momentum) * s.data[i];
    }
}

bool PlateauScheduler::step(double metric, double& lr) {
    if (metric > best) {
        best = metric;
        bad_epochs = 0;
        return false;
    }
    if (++bad_epochs > patience) {
        bad_epochs = 0;
        double next = std::max(lr * factor, min_lr);
        if (next < lr) {
            lr = next;
            return true;
        }
    }
    return false;
}

void AdamOptimizer::step(Backbone& model, const std::map<std::string, ad::NodePtr>& param_nodes) {
    if (model.frozen()) throw std::logic_error("AdamOptimizer: refusing to update a frozen model");
    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
    for (auto& [name, tensor] : model.parameters()) {
        const auto it = param_nodes.find(name);
        if (it == param_nodes.end()) throw std::logic_error("AdamOptimizer: missing grad for " + name);
        const Tensor& g = it->second->grad;
        Tensor& m = m_.try_emplace(name, Tensor(tensor.shape)).first->second;
        Tensor& v = v_.try_emplace(name, Tensor(tensor.shape)).first->second;
        for (size_t i = 0; i < tensor.data.size(); ++i) {
            m.data[i] = beta1_ * m.data[i] + (1.0 - beta1_) * g.data[i];
            v.data[i] = beta2_ * v.data[i] + (1.0 - beta2_) * g.data[i] * g.data[i];
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            tensor.data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void save_archive(const std::string& path, const std::string& header_json,
                  const std::map<std::string, Tensor>& arrays) {
    nlohmann::json j = nlohmann::json::parse(header_json);
    nlohmann::json names = nlohmann::json::array();
    for (const auto& [name, tensor] : arrays)  // map order: sorted, stable
        names.push_back({{"name", name}, {"shape", tensor.shape}});
    j["arrays"] = names;
    std::string hdr = j.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("save_archive: cannot open " + path);
    f.write("PSEGAR01", 8);
    uint64_t len = hdr.size();
    f.write(reinterpret_cast<const char*>(&len), 8);
    f.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
    for (const auto& [name, tensor] : arrays)
        f.write(reinterpret_cast<const char*>(tensor.data.data()),
                static_cast<std::streamsize>(tensor.data.size() * sizeof(double)));
    if (!f) throw std::runtime_error("save_archive: write failed: " + path);
}

std::pair<std::string, std::map<std::string, Tensor>> load_archive(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_archive: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, "PSEGAR01", 8) != 0)
        throw std::runtime_error("load_archive: bad magic in " + path);
    uint64_t len = 0;
    f.read(reinterpret_cast<char*>(&len), 8);
    std::string hdr(len, '\0');
    f.read(hdr.data(), static_cast<std::streamsize>(len));
    nlohmann::json j = nlohmann::json::parse(hdr);

    std::map<std::string, Tensor> arrays;
    for (const auto& a : j.at("arrays")) {
        Tensor t(a.at("shape").get<std::vector<int>>());
        f.read(reinterpret_cast<char*>(t.data.data()),
               static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        arrays[a.at("name").get<std::string>()] = std::move(t);
    }
    if (!f) throw std::runtime_error("load_archive: truncated archive " + path);
    return {hdr, std::move(arrays)};
}

void save_backbone(const Backbone& model, const std::string& path, int epoch,
                   const std::vector<double>& metric_history) {
    nlohmann::json hdr;
    hdr["kind"] = "backbone";
    hdr["version"] = 1;
    hdr["epoch"] = epoch;
    hdr["metric_history"] = metric_history;
    hdr["frozen"] = model.frozen();
    const auto& c = model.config();
    hdr["config"] = {{"in_channels", c.in_channels}, {"c1", c.c1},         {"c2", c.c2},
                     {"c3", c.c3},                   {"groups", c.groups}, {"init_seed", c.init_seed}};
    save_archive(path, hdr.dump(), model.parameters());
}

Backbone load_backbone(const std::string& path, int* epoch, std::vector<double>* metric_history) {
    auto [hdr_text, arrays] = load_archive(path);
    nlohmann::json hdr = nlohmann::json::parse(hdr_text);
    if (hdr.value("kind", "") != "backbone")
        throw std::runtime_error("load_backbone: not a backbone checkpoint: " + path);
    BackboneConfig cfg;
    const auto& c = hdr.at("config");
    cfg.in_channels = c.at("in_channels").get<int>();
    cfg.c1 = c.at("c1").get<int>();
    cfg.c2 = c.at("c2").get<int>();
    cfg.c3 = c.at("c3").get<int>();
    cfg.groups = c.at("groups").get<int>();
    cfg.init_seed = c.at("init_seed").get<int64_t>();
    Backbone model(cfg);
    model.restore(arrays);
    model.set_frozen(hdr.value("frozen", false));
    if (epoch) *epoch = hdr.value("epoch", 0);
    if (metric_history) *metric_history = hdr.value("metric_history", std::vector<double>{});
    return model;
}

}  // namespace pseudoseg
