#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "pseudoseg/image.hpp"

namespace pseudoseg {

enum class LesionShape { oval, round, lobulated };

struct SynthConfig {
    int image_size = 64;
    LesionShape lesion_shape = LesionShape::oval;
    bool mixed_shapes = true;          // cycle through the shape family per case
    double lesion_darkness = 0.55;     // lesion-to-background intensity ratio, (0,1)
    double darkness_jitter = 0.25;     // per-case spread around lesion_darkness
    double speckle_strength = 0.5;
    int64_t seed = 0;
    int count = 1;
};

struct ReplayJitter {
    double box_center_jitter = 0.0;    // fraction of lesion extent
    double box_scale_jitter = 0.0;
    double mask_boundary_noise = 0.0;  // per-boundary-pixel flip probability
    double dropout_rate = 0.0;         // probability of emitting no box at all
};

// Deterministic synthetic BUS-like case: one dark lesion on a brighter
// speckled background, plus its noise-free support mask.
std::pair<GrayscaleImage, BinaryMask> generate_case(const SynthConfig& cfg, int index);

// Replay stand-ins for the external box-proposal and box-to-mask models.
// They consume ground truth on purpose: oracles with controllable
// degradation, so downstream stages can be tested at known corruption.
std::vector<ScoredBox> replay_propose_boxes(const BinaryMask& gt, const ReplayJitter& jitter,
                                            uint64_t seed);

BinaryMask replay_box_to_mask(const GrayscaleImage& image, const Box& box, const BinaryMask& gt,
                              const ReplayJitter& jitter, uint64_t seed);

const char* shape_name(LesionShape s);
LesionShape shape_from_name(const std::string& name);

}  // namespace pseudoseg
