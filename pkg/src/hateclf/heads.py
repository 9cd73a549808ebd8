"""Classification heads over per-layer encoder states.

Four architectures, each a pure function of ``(states, params)``:

* ``linear``  – softmax regression on the final-layer [CLS] vector
* ``mlp``     – two LeakyReLU hidden layers on the [CLS] vector
* ``bilstm``  – bidirectional LSTM over the final layer's unmasked positions
* ``cnn``     – a (window x hidden) convolution run over every layer, ReLU,
                max-pooled per layer, pooled values concatenated

``states`` has shape (B, L, S, H) or (L, S, H); params follow the row-vector
convention ``y = x @ W + b``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping, Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import InvalidConfig, ShapeMismatch

KINDS = ("linear", "mlp", "bilstm", "cnn")
PROB_FLOOR = 1e-12

Params = Mapping[str, torch.Tensor]


@dataclass(frozen=True)
class HeadConfig:
    kind: str = "linear"
    num_classes: int = 3
    hidden: int = 768
    num_layers: int = 12
    mlp_hidden: int = 768
    leaky_slope: float = 0.01
    lstm_hidden: Optional[int] = None  # per direction; defaults to hidden
    cnn_filters: int = 32
    cnn_window: int = 3
    cnn_relu: bool = True
    dropout_p: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidConfig(f"unknown head kind {self.kind!r}; choose from {KINDS}")
        if self.num_classes < 2:
            raise InvalidConfig("num_classes must be >= 2")
        if not 1 <= self.cnn_window <= 64:
            raise InvalidConfig("cnn_window must be in [1, 64]")
        sizes = (self.hidden, self.num_layers, self.mlp_hidden, self.lstm_size, self.cnn_filters)
        if min(sizes) < 1:
            raise InvalidConfig("all sizes must be positive")
        if not 0.0 <= self.dropout_p < 1.0:
            raise InvalidConfig("dropout_p must be in [0, 1)")

    @property
    def lstm_size(self) -> int:
        return self.lstm_hidden or self.hidden

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "HeadConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def param_shapes(cfg: HeadConfig) -> dict[str, tuple[int, ...]]:
    H, C = cfg.hidden, cfg.num_classes
    if cfg.kind == "linear":
        return {"W": (H, C), "b": (C,)}
    if cfg.kind == "mlp":
        M = cfg.mlp_hidden
        return {"W1": (H, M), "b1": (M,), "W2": (M, M), "b2": (M,), "W3": (M, C), "b3": (C,)}
    if cfg.kind == "bilstm":
        h = cfg.lstm_size
        shapes = {}
        for d in ("fw", "bw"):
            shapes.update({f"{d}_W_ih": (H, 4 * h), f"{d}_W_hh": (h, 4 * h), f"{d}_b": (4 * h,)})
        shapes.update({"W": (2 * h, C), "b": (C,)})
        return shapes
    F_ = cfg.cnn_filters
    return {"K": (F_, cfg.cnn_window * H), "bk": (F_,), "W": (cfg.num_layers * F_, C), "b": (C,)}


def parameter_count(cfg: HeadConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(cfg).values())


def init_params(cfg: HeadConfig, dtype: torch.dtype = torch.float64) -> dict[str, torch.Tensor]:
    """Truncated-normal(0.02) weights, zero biases, orthogonal recurrent
    matrices; all drawn from ``cfg.seed``."""
    gen = torch.Generator().manual_seed(cfg.seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        t = torch.zeros(shape, dtype=torch.float64)
        if name.endswith("_W_hh"):
            nn.init.orthogonal_(t, generator=gen)
        elif len(shape) > 1:
            nn.init.trunc_normal_(t, std=0.02, a=-0.04, b=0.04, generator=gen)
        params[name] = t.to(dtype)
    return params


def zero_params(cfg: HeadConfig, dtype: torch.dtype = torch.float64) -> dict[str, torch.Tensor]:
    return {name: torch.zeros(shape, dtype=dtype) for name, shape in param_shapes(cfg).items()}


def _batched(states: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if states.dim() == 3:
        return states.unsqueeze(0), True
    if states.dim() != 4:
        raise ShapeMismatch(f"states must be (L, S, H) or (B, L, S, H), got {tuple(states.shape)}")
    return states, False


def _check(params: Params, name: str, shape: tuple) -> torch.Tensor:
    """Fetch a parameter and verify its shape; ``None`` matches any size."""
    if name not in params:
        raise ShapeMismatch(f"missing head parameter {name}")
    t = params[name]
    if t.dim() != len(shape) or any(e is not None and e != d for e, d in zip(shape, t.shape)):
        raise ShapeMismatch(f"{name}: shape {tuple(t.shape)}, expected {tuple(shape)}")
    return t


def _cls(states: torch.Tensor) -> torch.Tensor:
    return states[:, -1, 0, :]


def leaky_relu(x: torch.Tensor, slope: float = 0.01) -> torch.Tensor:
    return torch.where(x >= 0, x, slope * x)


def logits_linear(states, params, *, training=False, dropout_p=0.1):
    s, _ = _batched(states)
    H = s.shape[-1]
    W = _check(params, "W", (H, None))
    b = _check(params, "b", (W.shape[1],))
    x = F.dropout(_cls(s), dropout_p, training)
    return x @ W + b


def logits_mlp(states, params, *, training=False, dropout_p=0.1, slope=0.01):
    s, _ = _batched(states)
    H = s.shape[-1]
    W1 = _check(params, "W1", (H, None))
    M = W1.shape[1]
    W3 = _check(params, "W3", (M, None))
    C = W3.shape[1]
    b1 = _check(params, "b1", (M,))
    W2, b2 = _check(params, "W2", (M, M)), _check(params, "b2", (M,))
    b3 = _check(params, "b3", (C,))
    x = F.dropout(_cls(s), dropout_p, training)
    h1 = F.dropout(leaky_relu(x @ W1 + b1, slope), dropout_p, training)
    h2 = F.dropout(leaky_relu(h1 @ W2 + b2, slope), dropout_p, training)
    return h2 @ W3 + b3


def _lstm_direction(x, mask, W_ih, W_hh, b, reverse):
    B, S, _ = x.shape
    h_size = W_hh.shape[0]
    h = x.new_zeros(B, h_size)
    c = x.new_zeros(B, h_size)
    steps = range(S - 1, -1, -1) if reverse else range(S)
    for t in steps:
        gates = x[:, t] @ W_ih + h @ W_hh + b
        i, f, g, o = gates.split(h_size, dim=1)
        c_new = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h_new = torch.sigmoid(o) * torch.tanh(c_new)
        # masked steps leave the state untouched
        m = mask[:, t, None]
        c = torch.where(m, c_new, c)
        h = torch.where(m, h_new, h)
    return h


def logits_bilstm(states, params, mask=None, *, training=False, dropout_p=0.1):
    s, _ = _batched(states)
    B, L, S, H = s.shape
    h = _check(params, "fw_W_hh", (None, None)).shape[0]
    weights = {}
    for d in ("fw", "bw"):
        weights[d] = (
            _check(params, f"{d}_W_ih", (H, 4 * h)),
            _check(params, f"{d}_W_hh", (h, 4 * h)),
            _check(params, f"{d}_b", (4 * h,)),
        )
    W = _check(params, "W", (2 * h, None))
    b = _check(params, "b", (W.shape[1],))
    if mask is None:
        mask = torch.ones(B, S, dtype=torch.bool)
    mask = torch.as_tensor(mask).reshape(-1, S).bool()
    if mask.shape[0] != B:
        raise ShapeMismatch(f"mask batch {mask.shape[0]} != states batch {B}")
    x = s[:, -1]
    h_fw = _lstm_direction(x, mask, *weights["fw"], reverse=False)
    h_bw = _lstm_direction(x, mask, *weights["bw"], reverse=True)
    z = F.dropout(torch.cat([h_fw, h_bw], dim=1), dropout_p, training)
    return z @ W + b


def cnn_pooled(states, params, *, relu=True):
    """Per-layer max-pooled convolution features, shape (B, L * F), layer-major."""
    s, _ = _batched(states)
    B, L, S, H = s.shape
    K = _check(params, "K", (None, None))
    F_, window = K.shape[0], K.shape[1] // H
    if K.shape[1] != window * H:
        raise ShapeMismatch(f"K width {K.shape[1]} is not a multiple of hidden size {H}")
    bk = _check(params, "bk", (F_,))
    if window < 1 or S < window:
        raise ShapeMismatch(f"sequence length {S} shorter than window {window}")
    n = S - window + 1
    windows = torch.cat([s[:, :, j:j + n, :] for j in range(window)], dim=-1)  # (B, L, n, window*H)
    conv = windows @ K.T + bk
    if relu:
        conv = torch.relu(conv)
    return conv.amax(dim=2).reshape(B, L * F_)


def logits_cnn(states, params, *, training=False, dropout_p=0.1, relu=True):
    s, _ = _batched(states)
    pooled = cnn_pooled(s, params, relu=relu)
    W = _check(params, "W", (pooled.shape[1], None))
    b = _check(params, "b", (W.shape[1],))
    return F.dropout(pooled, dropout_p, training) @ W + b


def head_logits(cfg: HeadConfig, states, params, mask=None, *, training=False):
    p = cfg.dropout_p
    if cfg.kind == "linear":
        out = logits_linear(states, params, training=training, dropout_p=p)
    elif cfg.kind == "mlp":
        out = logits_mlp(states, params, training=training, dropout_p=p, slope=cfg.leaky_slope)
    elif cfg.kind == "bilstm":
        out = logits_bilstm(states, params, mask, training=training, dropout_p=p)
    else:
        out = logits_cnn(states, params, training=training, dropout_p=p, relu=cfg.cnn_relu)
    return out[0] if states.dim() == 3 else out


def _probs(logits):
    return torch.softmax(logits, dim=-1)


def forward_linear(states, params, **kw):
    s = torch.as_tensor(states)
    out = _probs(logits_linear(s, params, **kw))
    return out[0] if s.dim() == 3 else out


def forward_mlp(states, params, **kw):
    s = torch.as_tensor(states)
    out = _probs(logits_mlp(s, params, **kw))
    return out[0] if s.dim() == 3 else out


def forward_bilstm(states, mask, params, **kw):
    s = torch.as_tensor(states)
    out = _probs(logits_bilstm(s, params, mask, **kw))
    return out[0] if s.dim() == 3 else out


def forward_cnn(states, params, **kw):
    s = torch.as_tensor(states)
    out = _probs(logits_cnn(s, params, **kw))
    return out[0] if s.dim() == 3 else out


def forward(cfg: HeadConfig, states, params, mask=None, *, training=False) -> torch.Tensor:
    """Class probabilities for any head kind."""
    return _probs(head_logits(cfg, states, params, mask, training=training))


def predict(probs) -> int | np.ndarray:
    """Argmax; ties go to the lowest class index."""
    p = np.asarray(probs.detach().cpu() if isinstance(probs, torch.Tensor) else probs)
    out = np.argmax(p, axis=-1)
    return int(out) if p.ndim == 1 else out


def cross_entropy(probs, target) -> torch.Tensor:
    """-ln p[target], with probabilities floored at 1e-12.  Batched input
    gives the mean over the batch."""
    probs = torch.as_tensor(probs)
    target = torch.as_tensor(target)
    if probs.dim() == 1:
        return -torch.log(probs[target].clamp_min(PROB_FLOOR))
    picked = probs.gather(1, target.reshape(-1, 1)).squeeze(1)
    return -torch.log(picked.clamp_min(PROB_FLOOR)).mean()


def backward(cfg: HeadConfig, states, params, target, mask=None):
    """Gradients of the (mean) cross-entropy of the forward pass with respect to
    every parameter tensor and to the input states (dropout off).

    Returns ``(param_grads, states_grad)``.
    """
    s = torch.as_tensor(states).detach().clone().requires_grad_(True)
    p = {k: v.detach().clone().requires_grad_(True) for k, v in params.items()}
    loss = cross_entropy(forward(cfg, s, p, mask), target)
    names = list(p)
    grads = torch.autograd.grad(loss, [p[n] for n in names] + [s])
    return dict(zip(names, grads[:-1])), grads[-1]


class ClassificationHead(nn.Module):
    """Trainable wrapper around the functional heads."""

    def __init__(self, cfg: HeadConfig, params: Optional[Params] = None, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.config = cfg
        init = params if params is not None else init_params(cfg, dtype)
        expected = param_shapes(cfg)
        if set(init) != set(expected):
            raise ShapeMismatch(f"head parameters {sorted(init)} do not match kind {cfg.kind}")
        self.params = nn.ParameterDict({k: nn.Parameter(init[k].clone().to(dtype)) for k in expected})

    def forward(self, states: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        return forward(self.config, states, dict(self.params), mask, training=self.training)
