#include "pseudoseg/appg.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "pseudoseg/pngio.hpp"
#include "pseudoseg/rng.hpp"
#include <json.hpp>

namespace fs = std::filesystem;

namespace pseudoseg {

TraitRegistry TraitRegistry::builtin() {
    TraitRegistry r;
    r.med_common_traits = {"high density", "tumor", "heterogeneous hypoechoic texture",
                           "spiculated margins", "posterior acoustic shadowing"};
    r.appearance_phrases["breast_ultrasound"] = {"dark oval", "dark round", "dark lobulated"};
    return r;
}

AppearancePrompt compose_prompt(const TraitRegistry& registry, const std::string& key) {
    auto it = registry.appearance_phrases.find(key);
    if (it == registry.appearance_phrases.end() || it->second.empty()) {
        std::string known;
        for (const auto& [k, v] : registry.appearance_phrases) {
            if (!known.empty()) known += ", ";
            known += k;
        }
        throw std::invalid_argument("compose_prompt: unknown or empty key '" + key +
                                    "' (available: " + known + ")");
    }
    AppearancePrompt p;
    p.phrases = it->second;
    for (size_t i = 0; i < p.phrases.size(); ++i) {
        if (i) p.rendered += ".";
        p.rendered += p.phrases[i];
    }
    return p;
}

std::optional<Box> select_box(const std::vector<ScoredBox>& candidates, BoxPolicy policy) {
    if (candidates.empty()) return std::nullopt;
    if (policy == BoxPolicy::union_all) {
        Box u = candidates.front().box;
        for (const auto& sb : candidates) {
            u.x0 = std::min(u.x0, sb.box.x0);
            u.y0 = std::min(u.y0, sb.box.y0);
            u.x1 = std::max(u.x1, sb.box.x1);
            u.y1 = std::max(u.y1, sb.box.y1);
        }
        return u;
    }
    auto better = [](const ScoredBox& a, const ScoredBox& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.box.area() != b.box.area()) return a.box.area() < b.box.area();
        return std::tie(a.box.x0, a.box.y0, a.box.x1, a.box.y1) <
               std::tie(b.box.x0, b.box.y0, b.box.x1, b.box.y1);
    };
    return std::min_element(candidates.begin(), candidates.end(),
                            [&](const auto& a, const auto& b) { return better(a, b); })
        ->box;
}

std::vector<ScoredBox> ReplayBoxProposer::propose(const GrayscaleImage& image,
                                                  const AppearancePrompt&) {
    auto it = gt_.find(image.id);
    if (it == gt_.end()) return {};
    return replay_propose_boxes(it->second, jitter_, mix_seed(seed_, hash_string(image.id.c_str())));
}

BinaryMask ReplayMaskGenerator::segment(const GrayscaleImage& image, const Box& box) {
    auto it = gt_.find(image.id);
    if (it == gt_.end())
        throw std::runtime_error("replay-sam: no ground truth for id " + image.id);
    return replay_box_to_mask(image, box, it->second, jitter_,
                              mix_seed(seed_ ^ 0xb0d7ULL, hash_string(image.id.c_str())));
}

PseudoLabelRecord generate_pseudo_label(const GrayscaleImage& image, const AppearancePrompt& prompt,
                                        BoxProposerBackend& proposer, MaskGeneratorBackend& masker,
                                        BoxPolicy policy, double tau) {
    PseudoLabelRecord rec;
    rec.image_id = image.id;
    rec.backend_name = proposer.name() + "+" + masker.name();
    rec.prompt_rendered = prompt.rendered;
    try {
        rec.boxes = proposer.propose(image, prompt);
        auto chosen = select_box(rec.boxes, policy);
        if (chosen) {
            BinaryMask m = masker.segment(image, *chosen);
            require_same_shape(m.height, m.width, image.height, image.width, "generate_pseudo_label");
            rec.area_fraction =
                static_cast<double>(m.area()) / (static_cast<double>(m.height) * m.width);
            rec.mask = std::move(m);
        }
    } catch (const std::exception&) {
        // a backend failure is data, not a batch abort: leave the mask absent
        rec.boxes.clear();
        rec.mask.reset();
        rec.area_fraction = 0.0;
    }
    rec.valid = rec.mask.has_value() && rec.area_fraction > tau;
    return rec;
}

std::vector<PseudoLabelRecord> filter_valid(const std::vector<PseudoLabelRecord>& records,
                                            double tau) {
    std::vector<PseudoLabelRecord> out;
    for (const auto& r : records)
        if (r.mask.has_value() && r.area_fraction > tau) out.push_back(r);
    return out;
}

namespace {

nlohmann::json record_to_json(const PseudoLabelRecord& r) {
    nlohmann::json boxes = nlohmann::json::array();
    for (const auto& sb : r.boxes)
        boxes.push_back({{"x0", sb.box.x0},
                         {"y0", sb.box.y0},
                         {"x1", sb.box.x1},
                         {"y1", sb.box.y1},
                         {"score", sb.score}});
    return {{"image_id", r.image_id},
            {"boxes", boxes},
            {"has_mask", r.mask.has_value()},
            {"area_fraction", r.area_fraction},
            {"valid", r.valid},
            {"backend_name", r.backend_name},
            {"prompt_rendered", r.prompt_rendered}};
}

PseudoLabelRecord record_from_json(const nlohmann::json& j) {
    PseudoLabelRecord r;
    r.image_id = j.at("image_id").get<std::string>();
    for (const auto& b : j.at("boxes"))
        r.boxes.push_back({Box{b.at("x0").get<int>(), b.at("y0").get<int>(), b.at("x1").get<int>(),
                               b.at("y1").get<int>()},
                           b.at("score").get<double>()});
    r.area_fraction = j.at("area_fraction").get<double>();
    r.valid = j.at("valid").get<bool>();
    r.backend_name = j.at("backend_name").get<std::string>();
    r.prompt_rendered = j.at("prompt_rendered").get<std::string>();
    return r;
}

}  // namespace

CacheManifest build_cache(const std::vector<GrayscaleImage>& images, const AppearancePrompt& prompt,
                          BoxProposerBackend& proposer, MaskGeneratorBackend& masker,
                          BoxPolicy policy, const std::string& cache_dir, double tau) {
    fs::create_directories(fs::path(cache_dir) / "masks");
    CacheManifest mf;
    mf.prompt_rendered = prompt.rendered;

    nlohmann::json jrecords = nlohmann::json::array();
    for (const auto& img : images) {
        PseudoLabelRecord rec = generate_pseudo_label(img, prompt, proposer, masker, policy, tau);
        if (rec.mask) {
            std::vector<uint8_t> raw(rec.mask->pixels.size());
            for (size_t i = 0; i < raw.size(); ++i) raw[i] = rec.mask->pixels[i] ? 255 : 0;
            png::write_gray((fs::path(cache_dir) / "masks" / (img.id + ".png")).string(),
                            rec.mask->height, rec.mask->width, raw);
        }
        mf.backend_name = rec.backend_name;
        (rec.valid ? mf.n_valid : mf.n_invalid)++;
        jrecords.push_back(record_to_json(rec));
        mf.records.push_back(std::move(rec));
    }

    nlohmann::json j;
    j["records"] = jrecords;
    j["n_valid"] = mf.n_valid;
    j["n_invalid"] = mf.n_invalid;
    j["backend_name"] = mf.backend_name;
    j["prompt_rendered"] = mf.prompt_rendered;
    j["tau"] = tau;
    std::ofstream f(fs::path(cache_dir) / "manifest.json", std::ios::trunc);
    if (!f) throw std::runtime_error("build_cache: cannot write manifest in " + cache_dir);
    f << j.dump(2) << "\n";
    return mf;
}

CacheManifest load_cache_manifest(const std::string& cache_dir) {
    std::ifstream f(fs::path(cache_dir) / "manifest.json");
    if (!f)
        throw std::runtime_error("missing cache manifest: " + cache_dir +
                                 "/manifest.json (run the appg subcommand first)");
    nlohmann::json j = nlohmann::json::parse(f);
    CacheManifest mf;
    mf.n_valid = j.at("n_valid").get<int>();
    mf.n_invalid = j.at("n_invalid").get<int>();
    mf.backend_name = j.at("backend_name").get<std::string>();
    mf.prompt_rendered = j.at("prompt_rendered").get<std::string>();
    for (const auto& r : j.at("records")) mf.records.push_back(record_from_json(r));
    return mf;
}

BinaryMask load_cache_mask(const std::string& cache_dir, const std::string& image_id) {
    std::string path = (fs::path(cache_dir) / "masks" / (image_id + ".png")).string();
    int h = 0, w = 0;
    std::vector<uint8_t> raw;
    png::read_gray(path, h, w, raw);
    BinaryMask m = make_mask(h, w, image_id);
    for (size_t i = 0; i < raw.size(); ++i) m.pixels[i] = raw[i] >= 128 ? 1 : 0;
    return m;
}

BoxPolicy policy_from_name(const std::string& name) {
    if (name == "highest_score") return BoxPolicy::highest_score;
    if (name == "union_all") return BoxPolicy::union_all;
    throw std::invalid_argument("unknown box policy: " + name);
}

}  // namespace pseudoseg
