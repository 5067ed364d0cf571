from .manifest import (SampleRecord, load_manifest, manifest_hash, read_oracle, write_manifest,
                       write_oracle)
from .preprocess import (AugmentParams, augment, crop_region, head_crop_standardize, resample_fps,
                         scaled_box)
from .sampler import Batch, EpochPlan, balanced_epoch_plan
from .synth import (CROSS_DOMAIN, PRESETS, DomainParams, decode_oracle, render_frame, synth_generate_2d,
                    synth_generate_3d)
from .views import CLIP_LEN, FrameStore, Item, ModalityView, expand, load_batch

__all__ = [
    "SampleRecord", "load_manifest", "manifest_hash", "read_oracle", "write_manifest", "write_oracle",
    "AugmentParams", "augment", "crop_region", "head_crop_standardize", "resample_fps", "scaled_box",
    "Batch", "EpochPlan", "balanced_epoch_plan",
    "CROSS_DOMAIN", "PRESETS", "DomainParams", "decode_oracle", "render_frame", "synth_generate_2d",
    "synth_generate_3d",
    "CLIP_LEN", "FrameStore", "Item", "ModalityView", "expand", "load_batch",
]
