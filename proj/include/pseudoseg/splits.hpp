#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pseudoseg {

struct SplitManifest {
    std::vector<std::string> labeled_ids;
    std::vector<std::string> unlabeled_ids;
    std::vector<std::string> val_ids;
    std::vector<std::string> test_ids;
    double labeled_ratio = 0.0;
    int64_t seed = 0;

    std::vector<std::string> train_ids() const;
    bool operator==(const SplitManifest&) const = default;
};

// 8:1:1 train/val/test split, then |labeled| = round(ratio * |train|), >= 1.
// Ids are canonically sorted before the seeded shuffle, so the manifest is a
// pure function of (id set, ratio, seed).
SplitManifest make_splits(std::vector<std::string> ids, double labeled_ratio, int64_t seed);

std::string to_json(const SplitManifest& m);
SplitManifest manifest_from_json(const std::string& text);

void save_manifest(const SplitManifest& m, const std::string& path);
SplitManifest load_manifest(const std::string& path);

}  // namespace pseudoseg
