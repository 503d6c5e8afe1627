"""AdamW with decoupled weight decay, plus global-norm gradient clipping."""

import numpy as np

from .errors import ContractError


def clip_global_norm(params, max_norm=5.0):
    """Scale all gradients so their joint L2 norm is at most max_norm.

    Returns (norm_before, clipped). Parameters without gradients are
    skipped.
    """
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if norm <= max_norm or norm == 0.0:
        return norm, False
    scale = np.float32(max_norm / norm)
    for p in params:
        if p.grad is not None:
            p.grad *= scale
    return norm, True


class AdamW:
    """Decoupled-weight-decay Adam over named parameters.

    Update: theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
    with bias-corrected first and second moments.
    """

    def __init__(self, named_params, lr=5e-4, weight_decay=1e-3,
                 beta1=0.9, beta2=0.999, eps=1e-8):
        self.named_params = list(named_params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.named_params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.named_params}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name, p in self.named_params:
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ContractError(
                    f"gradient shape {g.shape} != parameter shape "
                    f"{p.data.shape} for {name}"
                )
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / bc1
            v_hat = v / bc2
            p.data -= self.lr * (
                m_hat / (np.sqrt(v_hat) + self.eps)
                + self.weight_decay * p.data
            )

    def state_arrays(self):
        """Moment tensors keyed m/<name>, v/<name>, for checkpointing."""
        out = {}
        for name in self.m:
            out[f"m/{name}"] = self.m[name]
            out[f"v/{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays):
        for name in self.m:
            self.m[name] = np.asarray(arrays[f"m/{name}"],
                                      dtype=np.float32).reshape(self.m[name].shape)
            self.v[name] = np.asarray(arrays[f"v/{name}"],
                                      dtype=np.float32).reshape(self.v[name].shape)
