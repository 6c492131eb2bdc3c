"""Synthetic mixed-degradation data: formulas, procedural maps, dataset writer."""
from .dataset import Manifest, load_pairs, synth_dataset
from .degrade import (CATEGORIES, DegradationSpec, apply_haze, apply_mixed, apply_noise,
                      apply_rain, apply_snow, depth_map, illumination_map, rain_mask, snow_mask)

__all__ = [
    "CATEGORIES", "DegradationSpec", "Manifest", "apply_haze", "apply_mixed", "apply_noise",
    "apply_rain", "apply_snow", "depth_map", "illumination_map", "load_pairs", "rain_mask",
    "snow_mask", "synth_dataset",
]
