"""Multiple-in-one image restoration on a small numpy autodiff engine."""
from .classifier import CLASSES, DegradationClassifier
from .kernels import BACKEND
from .ldo import LDO, LdoConfig
from .losses import LossWeights, psnr, ssim, total_loss
from .net import MDIRNet, NetConfig
from .tensor import Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CLASSES", "DegradationClassifier", "LDO", "LdoConfig", "LossWeights", "MDIRNet",
    "NetConfig", "Tensor", "no_grad", "psnr", "ssim", "total_loss",
]
