"""Conditional feature embedding.

Classifier features are projected to a decoder stage's width with a 1x1 conv,
bilinearly resized to the stage's resolution and added to the merged
encoder/decoder features that enter that stage.
"""
from . import ops
from .nn import Conv2d, Module


class CfeStage(Module):
    def __init__(self, feat_channels, stage_channels, stage_index):
        self.stage_index = stage_index
        # bias-free: zero features must give a zero embedding. Zero init so
        # the untrained embedding does not swamp the decoder features.
        self.proj = Conv2d(feat_channels, stage_channels, 1, bias=False, zero_init=True)

    def embed(self, feat, height, width):
        return ops.bilinear_resize(self.proj(feat), height, width)

    forward = embed


class Merge(Module):
    """1x1 projection of the concatenated skip (and previous decoder) features."""

    def __init__(self, cin, cout):
        self.proj = Conv2d(cin, cout, 1)

    def forward(self, enc, prev=None):
        x = enc if prev is None else ops.concat([enc, prev], axis=1)
        return self.proj(x)


def inject(enc_feat, prev_dec, embedding, merge):
    """F' = merge(concat(enc, prev)); return F' + embedding.

    ``prev_dec`` is None at the deepest stage. ``embedding`` may be None
    (conditioning disabled), which is the same as adding zero.
    """
    if prev_dec is not None and enc_feat.shape[-2:] != prev_dec.shape[-2:]:
        raise ValueError(f"spatial mismatch: {enc_feat.shape} vs {prev_dec.shape}")
    merged = merge(enc_feat, prev_dec)
    if embedding is None:
        return merged
    if embedding.shape != merged.shape:
        raise ValueError(f"embedding shape {embedding.shape} != stage shape {merged.shape}")
    return ops.add(merged, embedding)
