#include "pseudoseg/splits.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "pseudoseg/rng.hpp"
#include <json.hpp>

namespace pseudoseg {

std::vector<std::string> SplitManifest::train_ids() const {
    std::vector<std::string> out = labeled_ids;
    out.insert(out.end(), unlabeled_ids.begin(), unlabeled_ids.end());
    return out;
}

SplitManifest make_splits(std::vector<std::string> ids, double labeled_ratio, int64_t seed) {
    if (labeled_ratio <= 0.0 || labeled_ratio > 1.0)
        throw std::invalid_argument("make_splits: labeled_ratio must be in (0,1]");
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

    size_t n = ids.size();
    size_t n_val = static_cast<size_t>(std::llround(n * 0.1));
    size_t n_test = static_cast<size_t>(std::llround(n * 0.1));
    if (n_val == 0 || n_test == 0 || n_val + n_test >= n)
        throw std::invalid_argument("make_splits: need enough ids for a nonempty 8:1:1 split (got " +
                                    std::to_string(n) + ")");
    size_t n_train = n - n_val - n_test;

    Rng rng(mix_seed(static_cast<uint64_t>(seed), 0x5917a7ULL));
    for (size_t i = n - 1; i > 0; --i)
        std::swap(ids[i], ids[rng.uniform_int(i + 1)]);

    size_t n_labeled = static_cast<size_t>(std::llround(labeled_ratio * static_cast<double>(n_train)));
    n_labeled = std::max<size_t>(1, std::min(n_labeled, n_train));

    SplitManifest m;
    m.labeled_ratio = labeled_ratio;
    m.seed = seed;
    m.labeled_ids.assign(ids.begin(), ids.begin() + n_labeled);
    m.unlabeled_ids.assign(ids.begin() + n_labeled, ids.begin() + n_train);
    m.val_ids.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
    m.test_ids.assign(ids.begin() + n_train + n_val, ids.end());
    return m;
}

std::string to_json(const SplitManifest& m) {
    nlohmann::json j;
    j["labeled_ids"] = m.labeled_ids;
    j["unlabeled_ids"] = m.unlabeled_ids;
    j["val_ids"] = m.val_ids;
    j["test_ids"] = m.test_ids;
    j["labeled_ratio"] = m.labeled_ratio;
    j["seed"] = m.seed;
    return j.dump(2);
}

SplitManifest manifest_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    SplitManifest m;
    m.labeled_ids = j.at("labeled_ids").get<std::vector<std::string>>();
    m.unlabeled_ids = j.at("unlabeled_ids").get<std::vector<std::string>>();
    m.val_ids = j.at("val_ids").get<std::vector<std::string>>();
    m.test_ids = j.at("test_ids").get<std::vector<std::string>>();
    m.labeled_ratio = j.at("labeled_ratio").get<double>();
    m.seed = j.at("seed").get<int64_t>();
    return m;
}

void save_manifest(const SplitManifest& m, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write manifest: " + path);
    f << to_json(m) << "\n";
}

SplitManifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read manifest: " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return manifest_from_json(text);
}

}  // namespace pseudoseg
