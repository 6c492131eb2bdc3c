"""Multi-label degradation classifier.

A small from-scratch CNN stands in for a pretrained MobileNetV2: four conv+ReLU
stages, global pooling and a linear head with one independent logit per base
degradation. The last conv activation (stride 8 w.r.t. the input) is exposed as
the conditioning feature map.

The first stage runs at full resolution so one-pixel rain streaks and small
flakes survive; inputs are centred and scaled, convs use He-normal init.
Without either, five epochs from scratch do not separate rain and snow.
"""
from dataclasses import dataclass

import numpy as np

from . import ops
from .nn import Conv2d, Linear, Module
from .tensor import Tensor, no_grad

CLASSES = ("rain", "snow", "haze", "noise")


class LabelError(ValueError):
    pass


def encode_labels(names):
    """Multi-hot vector over ``CLASSES``; mixed types set several entries."""
    names = set(names)
    unknown = names - set(CLASSES)
    if unknown:
        raise LabelError(f"unknown degradation(s): {sorted(unknown)}")
    return np.array([1.0 if c in names else 0.0 for c in CLASSES], dtype=np.float32)


def decode_labels(vec, threshold=0.5):
    return {c for c, v in zip(CLASSES, vec) if v > threshold}


@dataclass
class ClassifierOutput:
    logits: object       # (N, 4)
    feature_map: object  # (N, C_f, H/8, W/8)


class DegradationClassifier(Module):
    widths = (16, 32, 64, 64)
    strides = (1, 2, 2, 2)
    input_mean, input_scale = 0.5, 4.0

    def __init__(self):
        chans = (3,) + self.widths
        self.convs = [Conv2d(chans[i], chans[i + 1], 3, stride=s, init="he")
                      for i, s in enumerate(self.strides)]
        self.head = Linear(self.widths[-1], len(CLASSES))

    @property
    def feature_channels(self):
        return self.widths[-1]

    def forward(self, img):
        x, unb = ops._batched(img)
        if x.shape[1] != 3:
            raise ValueError(f"classifier expects RGB input, got {x.shape[1]} channels")
        x = ops.mul(ops.add(x, -self.input_mean), self.input_scale)
        for conv in self.convs:
            x = ops.relu(conv(x))
        feat = x
        N, C = feat.shape[:2]
        logits = self.head(ops.reshape(ops.global_avg_pool(feat), (N, C)))
        if unb:
            return ClassifierOutput(ops.reshape(logits, (len(CLASSES),)), ops.reshape(feat, feat.shape[1:]))
        return ClassifierOutput(logits, feat)

    def conditioning(self, img):
        """Feature map scaled to unit RMS per image, for the decoder embedding.

        Raw ReLU features here have std ~4 with outliers ~40 (there is no
        normalisation layer); at that scale the embedding path destabilises
        restoration training. All-zero features stay exactly zero.
        """
        with no_grad():
            f = self(img).feature_map.data
        axes = tuple(range(f.ndim - 3, f.ndim))
        rms = np.sqrt(np.mean(f * f, axis=axes, keepdims=True) + 1e-12)
        return Tensor(f / rms)


def bce_multilabel(logits, target):
    """Mean binary cross-entropy over labels (and batch), stable in logit space."""
    return ops.bce_with_logits(logits, target)


def f1_per_label(pred, target):
    """Per-class F1 from binary arrays of shape (N, 4). Returns a dict."""
    pred = np.asarray(pred) > 0.5
    target = np.asarray(target) > 0.5
    out = {}
    for i, name in enumerate(CLASSES):
        tp = np.sum(pred[:, i] & target[:, i])
        fp = np.sum(pred[:, i] & ~target[:, i])
        fn = np.sum(~pred[:, i] & target[:, i])
        denom = 2 * tp + fp + fn
        out[name] = float(2 * tp / denom) if denom else 1.0
    return out
