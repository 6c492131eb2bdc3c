"""Three-scale encoder/decoder restoration network.

stem -> [encoder stage -> stride-2 conv] x3 -> decoder stages (deepest first),
each fed by a 1x1 merge of the skip features (and the upsampled previous
decoder output), plus the classifier-derived embedding when conditioning is
on. Every stage is a stack of residual blocks followed by an LDO-cored
residual unit. Each decoder stage has a 3-channel head; heads predict a
correction to the (resized) degraded input.
"""
from dataclasses import asdict, dataclass, field

from . import ops
from .cfe import CfeStage, Merge, inject
from .classifier import DegradationClassifier
from .ldo import LDO, LdoConfig
from .nn import Conv2d, ConvTranspose2x, Module

STAGES = 3


@dataclass
class NetConfig:
    base_channels: int = 16
    res_blocks: int = 3
    kernel_size: int = 3
    reduction: int = 4
    use_ldo: bool = True
    use_cfe: bool = True
    feat_channels: int = 64

    @classmethod
    def full_size(cls, **kw):
        return cls(base_channels=32, res_blocks=7, **kw)

    def to_dict(self):
        return asdict(self)

    def widths(self):
        return [self.base_channels * 2 ** i for i in range(STAGES)]


class ResidualBlock(Module):
    def __init__(self, channels):
        self.conv1 = Conv2d(channels, channels, 3)
        self.conv2 = Conv2d(channels, channels, 3)

    def forward(self, x):
        return ops.add(x, self.conv2(ops.relu(self.conv1(x))))


class LdoUnit(Module):
    """y = x + LDO(conv3x3(x)); the conv starts at zero so the unit starts as identity."""

    def __init__(self, channels, kernel_size, reduction):
        self.conv = Conv2d(channels, channels, 3, zero_init=True)
        self.ldo = LDO(LdoConfig(channels, kernel_size, reduction))

    def forward(self, x):
        return ops.add(x, self.ldo(self.conv(x)))


class Stage(Module):
    def __init__(self, channels, cfg: NetConfig):
        self.blocks = [ResidualBlock(channels) for _ in range(cfg.res_blocks)]
        self.ldo_unit = LdoUnit(channels, cfg.kernel_size, cfg.reduction) if cfg.use_ldo else None

    def forward(self, x):
        for b in self.blocks:
            x = b(x)
        if self.ldo_unit is not None:
            x = self.ldo_unit(x)
        return x


@dataclass
class SupervisedOutputs:
    predictions: list = field(default_factory=list)  # finest first: H, H/2, H/4

    @property
    def finest(self):
        return self.predictions[0]


class MDIRNet(Module):
    def __init__(self, cfg: NetConfig = None):
        self.cfg = cfg = cfg or NetConfig()
        w = cfg.widths()
        self.stem = Conv2d(3, w[0], 3)
        self.enc = [Stage(w[i], cfg) for i in range(STAGES)]
        self.down = [Conv2d(w[i], w[i + 1], 3, stride=2) for i in range(STAGES - 1)]
        # merge[i] feeds decoder stage i; the deepest has no previous decoder output
        self.merge = [Merge(2 * w[i], w[i]) for i in range(STAGES - 1)] + [Merge(w[-1], w[-1])]
        self.dec = [Stage(w[i], cfg) for i in range(STAGES)]
        self.up = [ConvTranspose2x(w[i + 1], w[i]) for i in range(STAGES - 1)]
        self.heads = [Conv2d(w[i], 3, 3, zero_init=True) for i in range(STAGES)]
        self.cfe = [CfeStage(cfg.feat_channels, w[i], i + 1) for i in range(STAGES)] if cfg.use_cfe else None

    def encode(self, stem_out):
        pyr, x = [], stem_out
        for i in range(STAGES):
            if i > 0:
                x = self.down[i - 1](x)
            x = self.enc[i](x)
            pyr.append(x)
        return pyr

    def embeddings(self, feat, pyr):
        if self.cfe is None or feat is None:
            return [None] * STAGES
        return [self.cfe[i].embed(feat, *pyr[i].shape[-2:]) for i in range(STAGES)]

    def decode(self, pyr, embeddings, img):
        preds = [None] * STAGES
        prev = None
        for i in reversed(range(STAGES)):
            up = self.up[i](prev) if prev is not None else None
            x = inject(pyr[i], up, embeddings[i], self.merge[i])
            d = self.dec[i](x)
            H, W = d.shape[-2:]
            preds[i] = ops.add(self.heads[i](d), ops.bilinear_resize(img, H, W))
            prev = d
        return SupervisedOutputs(preds)

    def forward(self, img, classifier: DegradationClassifier = None, features=None):
        """Restore a batch ``img`` (N, 3, H, W) with H, W divisible by 4.

        Conditioning features come from ``features`` if given, otherwise from
        a frozen forward pass of ``classifier`` (see ``conditioning``).
        """
        if img.ndim != 4 or img.shape[1] != 3:
            raise ValueError(f"expected (N, 3, H, W) input, got {img.shape}")
        H, W = img.shape[-2:]
        if H % 4 or W % 4:
            raise ValueError(f"spatial size {H}x{W} must be divisible by 4")
        if self.cfe is not None and features is None and classifier is not None:
            features = classifier.conditioning(img.detach())
        pyr = self.encode(self.stem(img))
        return self.decode(pyr, self.embeddings(features, pyr), img)
