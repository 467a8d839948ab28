#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pseudoseg/image.hpp"
#include "pseudoseg/synth.hpp"

namespace pseudoseg {

struct AppearancePrompt {
    std::vector<std::string> phrases;
    std::string rendered;  // phrases joined with the backend separator "."
};

// Static lookup standing in for the one-time offline conversion of clinical
// trait vocabulary into plain appearance phrases.
struct TraitRegistry {
    std::vector<std::string> med_common_traits;
    std::map<std::string, std::vector<std::string>> appearance_phrases;

    static TraitRegistry builtin();
};

struct PseudoLabelRecord {
    std::string image_id;
    std::vector<ScoredBox> boxes;
    std::optional<BinaryMask> mask;
    double area_fraction = 0.0;
    bool valid = false;
    std::string backend_name;
    std::string prompt_rendered;
};

class BoxProposerBackend {
public:
    virtual ~BoxProposerBackend() = default;
    virtual std::string name() const = 0;
    virtual std::vector<ScoredBox> propose(const GrayscaleImage& image,
                                           const AppearancePrompt& prompt) = 0;
};

class MaskGeneratorBackend {
public:
    virtual ~MaskGeneratorBackend() = default;
    virtual std::string name() const = 0;
    virtual BinaryMask segment(const GrayscaleImage& image, const Box& box) = 0;
};

// Replay backends wrap the synth oracles: they look up the ground-truth mask
// by image id and degrade it per the configured jitter.
class ReplayBoxProposer : public BoxProposerBackend {
public:
    ReplayBoxProposer(std::map<std::string, BinaryMask> gt_by_id, ReplayJitter jitter, uint64_t seed)
        : gt_(std::move(gt_by_id)), jitter_(jitter), seed_(seed) {}
    std::string name() const override { return "replay-dino"; }
    std::vector<ScoredBox> propose(const GrayscaleImage& image, const AppearancePrompt&) override;

private:
    std::map<std::string, BinaryMask> gt_;
    ReplayJitter jitter_;
    uint64_t seed_;
};

class ReplayMaskGenerator : public MaskGeneratorBackend {
public:
    ReplayMaskGenerator(std::map<std::string, BinaryMask> gt_by_id, ReplayJitter jitter, uint64_t seed)
        : gt_(std::move(gt_by_id)), jitter_(jitter), seed_(seed) {}
    std::string name() const override { return "replay-sam"; }
    BinaryMask segment(const GrayscaleImage& image, const Box& box) override;

private:
    std::map<std::string, BinaryMask> gt_;
    ReplayJitter jitter_;
    uint64_t seed_;
};

enum class BoxPolicy { highest_score, union_all };

AppearancePrompt compose_prompt(const TraitRegistry& registry, const std::string& key);

// highest_score: argmax score, ties by smaller area then lexicographic coords.
// union_all: bounding box of the union. Empty input -> nullopt.
std::optional<Box> select_box(const std::vector<ScoredBox>& candidates, BoxPolicy policy);

constexpr double kDefaultAreaTau = 0.01;  // 1% of the image area

PseudoLabelRecord generate_pseudo_label(const GrayscaleImage& image, const AppearancePrompt& prompt,
                                        BoxProposerBackend& proposer, MaskGeneratorBackend& masker,
                                        BoxPolicy policy, double tau = kDefaultAreaTau);

// Keeps exactly the records with a mask present and area_fraction strictly
// above tau; input order preserved.
std::vector<PseudoLabelRecord> filter_valid(const std::vector<PseudoLabelRecord>& records,
                                            double tau = kDefaultAreaTau);

struct CacheManifest {
    std::vector<PseudoLabelRecord> records;  // masks not held here; see masks/ dir
    int n_valid = 0;
    int n_invalid = 0;
    std::string backend_name;
    std::string prompt_rendered;
};

// One mask file per image under <cache_dir>/masks/ plus manifest.json.
// Re-running with identical inputs rewrites identical bytes.
CacheManifest build_cache(const std::vector<GrayscaleImage>& images, const AppearancePrompt& prompt,
                          BoxProposerBackend& proposer, MaskGeneratorBackend& masker,
                          BoxPolicy policy, const std::string& cache_dir,
                          double tau = kDefaultAreaTau);

CacheManifest load_cache_manifest(const std::string& cache_dir);
BinaryMask load_cache_mask(const std::string& cache_dir, const std::string& image_id);

BoxPolicy policy_from_name(const std::string& name);

}  // namespace pseudoseg
