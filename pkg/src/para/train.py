"""Gradient training of PaRa ``B`` matrices on a toy model.

QR is not differentiable at the zero initialization, so training goes through
the ridge-regularized projector ``P(B) = B (B^T B + eps I)^{-1} B^T``. It is
exactly zero for ``B = 0`` and tends to ``Q Q^T`` for full-column-rank ``B``.
With ``M = B^T B + eps I`` and ``S`` the symmetric part of ``dL/dP``::

    dL/dB = 2 (I - P) S B M^{-1}

``B = 0`` is a stationary point of any loss written through ``P``, so the
first update from an all-zero ``B`` is a seeded random draw (columns of norm
``init_scale``) rather than a gradient step.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction

import numpy as np

from para.adapter import ParaAdapter, derive_q
from para.bundle import AdapterBundle
from para.errors import DegenerateColumns, DivergedLoss, NonConforming
from para.linalg import as_matrix, numerical_rank, singular_values
from para.model import ToyModel

log = logging.getLogger(__name__)

DEFAULT_STEPS = 200
DEFAULT_EPS = 1e-8


@dataclass
class TrainConfig:
    rank: int = 4
    gamma: float | Fraction | str = 1.0
    steps: int = DEFAULT_STEPS
    learning_rate: float = 1e-2
    ridge_eps: float = DEFAULT_EPS
    seed: int = 0
    layer_filter: str = "*"
    init_scale: float = 1.0

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.ridge_eps <= 0:
            raise ValueError("ridge_eps must be > 0")
        if self.init_scale <= 0:
            raise ValueError("init_scale must be > 0")
        if not 0 < Fraction(self.gamma) <= 1:
            raise ValueError("gamma must lie in (0, 1]")


@dataclass
class TrainReport:
    loss_history: list[float]
    final_effective_ranks: dict[str, int]
    b_column_independence: dict[str, float]
    base_loss: float = field(default=float("nan"))

    def to_dict(self) -> dict:
        return asdict(self)


def soft_projector(b, eps: float = DEFAULT_EPS) -> np.ndarray:
    b = as_matrix(b, "b")
    if eps <= 0:
        raise ValueError("eps must be > 0")
    m = b.T @ b + eps * np.eye(b.shape[1])
    return b @ np.linalg.solve(m, b.T)


def soft_projector_vjp(b, eps: float, grad_p) -> np.ndarray:
    """Pull ``dL/dP`` back to ``dL/dB`` through :func:`soft_projector`."""
    m = b.T @ b + eps * np.eye(b.shape[1])
    k = np.linalg.solve(m, b.T).T  # B M^{-1}
    p = b @ k.T
    s = 0.5 * (grad_p + grad_p.T)
    sk = s @ k
    return 2.0 * (sk - p @ sk)


def _stack_targets(model: ToyModel, targets):
    if not targets:
        raise NonConforming("need at least one target pair")
    xs, ys = [], []
    for i, (x, y) in enumerate(targets):
        x = as_matrix(x, f"targets[{i}].x")
        y = as_matrix(y, f"targets[{i}].y")
        if x.shape[0] != model.in_dim or y.shape[0] != model.out_dim or x.shape[1] != y.shape[1]:
            raise NonConforming(
                f"targets[{i}]: x {x.shape}, y {y.shape} do not fit a {model.in_dim}->{model.out_dim} model"
            )
        xs.append(x)
        ys.append(y)
    return np.hstack(xs), np.hstack(ys)


def loss_and_grad(model: ToyModel, bs: dict, x, y, eps: float = DEFAULT_EPS):
    """Squared-error loss of the reduced model and its gradient w.r.t. each B.

    ``bs`` maps layer names to B matrices; unlisted layers stay frozen.
    """
    ps = {name: soft_projector(b, eps) for name, b in bs.items()}
    ws = []
    for layer in model.layers:
        w0 = layer.w0
        ws.append(w0 - ps[layer.name] @ w0 if layer.name in ps else w0)

    hs = [x]
    for i, w in enumerate(ws):
        z = w @ hs[-1]
        if i < len(ws) - 1 and model.activation == "tanh":
            z = np.tanh(z)
        hs.append(z)
    resid = hs[-1] - y
    loss = float(np.sum(resid * resid))

    grads = {}
    delta = 2.0 * resid
    for i in range(len(ws) - 1, -1, -1):
        layer = model.layers[i]
        if layer.name in bs:
            grad_w = delta @ hs[i].T
            grad_p = -grad_w @ layer.w0.T
            grads[layer.name] = soft_projector_vjp(bs[layer.name], eps, grad_p)
        if i > 0:
            delta = ws[i].T @ delta
            if model.activation == "tanh":
                delta = delta * (1.0 - hs[i] ** 2)
    return loss, grads


def train_para(model: ToyModel, targets, cfg: TrainConfig | None = None):
    """Full-batch gradient descent on B for every layer matching ``cfg.layer_filter``.

    Returns the trained (not yet orthonormalized) bundle and a TrainReport.
    """
    cfg = cfg or TrainConfig()
    x, y = _stack_targets(model, targets)
    names = model.select(cfg.layer_filter)
    if not names:
        raise NonConforming(f"layer filter {cfg.layer_filter!r} matches no layers")
    for name in names:
        if model.layer(name).shape[0] < cfg.rank:
            raise NonConforming(f"{name}: rank {cfg.rank} exceeds output dim {model.layer(name).shape[0]}")

    rng = np.random.default_rng(cfg.seed)
    bs = {name: np.zeros((model.layer(name).shape[0], cfg.rank)) for name in names}
    base_loss = float(np.sum((model.forward(x) - y) ** 2))
    history = []
    for step in range(cfg.steps):
        loss, grads = loss_and_grad(model, bs, x, y, cfg.ridge_eps)
        if not np.isfinite(loss):
            raise DivergedLoss(f"loss became {loss} at step {step}; lower the learning rate")
        history.append(loss)
        if cfg.learning_rate == 0:
            continue
        for name in names:
            if not bs[name].any():
                kick = rng.standard_normal(bs[name].shape)
                bs[name] = cfg.init_scale * kick / np.linalg.norm(kick, axis=0)
            else:
                bs[name] = bs[name] - cfg.learning_rate * grads[name]
        if step % 50 == 0:
            log.debug("step %d loss %.6g", step, loss)

    for name in names:
        if not np.all(np.isfinite(bs[name])):
            raise DivergedLoss(f"{name}: B became non-finite")

    adapters = []
    ranks, sigma_min = {}, {}
    for name in names:
        layer = model.layer(name)
        base_rank = numerical_rank(layer.w0)
        adapter = ParaAdapter(
            layer_name=name,
            b=bs[name],
            requested_rank=cfg.rank,
            gamma=cfg.gamma,
            conv_shape=layer.conv_shape,
            in_features=layer.shape[1],
            base_rank=base_rank,
        )
        adapters.append(adapter)
        sigma_min[name] = float(singular_values(bs[name])[-1])
        try:
            ranks[name] = derive_q(adapter).shape[1]
        except DegenerateColumns:
            ranks[name] = 0
    report = TrainReport(history, ranks, sigma_min, base_loss)
    return AdapterBundle("para", tuple(adapters)), report


def finalize_adapters(bundle: AdapterBundle) -> AdapterBundle:
    """Replace each B by the orthonormal Q of its rank-clamped truncation.

    Layers whose B is degenerate (e.g. still zero) or whose clamp leaves no
    rank are kept as-is and flagged ``identity``.
    """
    if bundle.kind != "para":
        raise ValueError("finalize_adapters expects a para bundle")
    out = []
    for a in bundle.entries:
        if a.identity:
            out.append(a)
            continue
        try:
            q = derive_q(a)
        except DegenerateColumns:
            q = None
        if q is None or q.shape[1] == 0:
            out.append(replace(a, identity=True))
        else:
            out.append(a.with_b(q))
    return AdapterBundle("para", tuple(out))

