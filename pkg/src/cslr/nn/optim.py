"""Adam optimizer with global-norm gradient clipping, plus the training
hyperparameter bundle shared by both architectures."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    dropout: float = 0.1
    batch_size: int = 8
    max_epochs: int = 20
    clip_norm: float = 5.0
    seed: int = 0
    # optional stopping aids; None disables them
    max_seconds: float | None = None
    stop_dev_wer: float | None = None

    def __post_init__(self):
        for name in ("learning_rate", "beta1", "beta2", "eps", "weight_decay", "clip_norm"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


def clip_global_norm(grads, max_norm):
    """Scale the gradient set in place so its joint L2 norm is <= max_norm.

    Returns the pre-clip norm.  max_norm <= 0 disables clipping.
    """
    total = 0.0
    for g in grads:
        total += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


class Adam:
    """Adam with bias correction; one (m, v) slot pair per named tensor."""

    def __init__(self, config: TrainConfig):
        self.config = config
        self.t = 0
        self._m = {}
        self._v = {}

    def step(self, named_grads):
        """Apply one update. named_grads: iterable of (name, param, grad);
        params are updated in place."""
        cfg = self.config
        self.t += 1
        b1, b2 = cfg.beta1, cfg.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, param, grad in named_grads:
            if name not in self._m:
                self._m[name] = np.zeros_like(param)
                self._v[name] = np.zeros_like(param)
            m, v = self._m[name], self._v[name]
            m[...] = b1 * m + (1.0 - b1) * grad
            v[...] = b2 * v + (1.0 - b2) * grad * grad
            mhat = m / bc1
            vhat = v / bc2
            param -= (cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)).astype(param.dtype)
