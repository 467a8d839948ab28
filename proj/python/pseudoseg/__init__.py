from _pseudoseg import (
    adaptive_threshold,
    aurcl_loss,
    bce_loss,
    binarize,
    compose_prompt,
    dice,
    dice_loss,
    fuse,
    generate_case,
    iou,
    make_splits,
    pixel_accuracy,
    pixel_entropy,
    reverse_probs,
    seg_loss,
)

__all__ = [
    "adaptive_threshold",
    "aurcl_loss",
    "bce_loss",
    "binarize",
    "compose_prompt",
    "dice",
    "dice_loss",
    "fuse",
    "generate_case",
    "iou",
    "make_splits",
    "pixel_accuracy",
    "pixel_entropy",
    "reverse_probs",
    "seg_loss",
]
