"""Adam optimizer and deterministic parameter initialization."""

import numpy as np

from .tensor import Tensor


class Adam:
    """Standard Adam with bias correction over a name -> Tensor dict.

    Weight decay is applied as L2 regularization added to the gradient.
    """

    def __init__(self, params: dict, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in self.params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in self.params.items()}

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} != param shape {p.data.shape} for {name!r}")
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def init_params(shape, scheme: str, seed: int) -> Tensor:
    """Deterministic initializer: xavier-uniform or zeros."""
    shape = tuple(int(s) for s in shape)
    if len(shape) != 2 or any(s <= 0 for s in shape):
        raise ValueError(f"init_params requires positive 2-d shape, got {shape}")
    if scheme == "zeros":
        data = np.zeros(shape)
    elif scheme == "xavier-uniform":
        bound = np.sqrt(6.0 / (shape[0] + shape[1]))
        data = np.random.default_rng(seed).uniform(-bound, bound, size=shape)
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return Tensor(data, requires_grad=True)
