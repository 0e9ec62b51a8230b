"""Prototype-aligned refinement network.

Two encoders split each embedding into a class-discriminative signal code and
a residual code; a signal decoder produces the refined embedding, a full
decoder reconstructs from both codes, a projection head compares the signal
against class prototypes, and a linear classifier stabilizes training. All
arithmetic is float64; gradients are exact analytic backpropagation.

Sub-networks (one hidden rectified-linear layer unless noted):
    enc_s:  d -> hidden -> d_s
    enc_r:  d -> hidden -> d_r
    dec_s:  d_s -> hidden -> d
    dec_f:  (d_s + d_r) -> hidden -> d
    proj:   d_s -> d, single linear layer, output rows L2-normalized
    cls:    d_s -> C, single linear layer
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .prototypes import PrototypeSet

_ZERO_ROW_TOL = 1e-12
_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8
_IMPROVE_TOL = 1e-6


class NonFiniteLossError(RuntimeError):
    """Training produced a non-finite activation or loss. Carries the trace
    collected so far in ``trace`` and the failing epoch/batch in the message."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class PearlConfig:
    """Widths, loss weights, and optimizer settings.

    ``d_s``, ``d_r``, and ``hidden`` may be left as None to derive them from
    the data dimensionality at fit time (ceil(d/4), ceil(d/4), d). The head
    weights ``w_align``/``w_contrast``/``w_cls`` likewise default to d/2: the
    reconstruction terms grow linearly with d on standardized data, and unit
    head weights leave them too weak to move the refined geometry.
    """

    d_s: int | None = None
    d_r: int | None = None
    hidden: int | None = None
    w_recon: float = 1.0
    w_full: float = 0.5
    w_align: float | None = None
    w_contrast: float | None = None
    w_cls: float | None = None
    w_ortho: float = 0.1
    tau: float = 0.1
    lr: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        for name in ("w_recon", "w_full", "w_align", "w_contrast", "w_cls", "w_ortho"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("d_s", "d_r", "hidden"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 0:
            raise ValueError("batch_size/max_epochs must be >= 1, patience >= 0")

    def resolved(self, d: int) -> "PearlConfig":
        """Fill in derived widths and head weights for dimensionality ``d``."""
        head = d / 2.0
        return replace(
            self,
            d_s=self.d_s if self.d_s is not None else max(1, math.ceil(d / 4)),
            d_r=self.d_r if self.d_r is not None else max(1, math.ceil(d / 4)),
            hidden=self.hidden if self.hidden is not None else d,
            w_align=self.w_align if self.w_align is not None else head,
            w_contrast=self.w_contrast if self.w_contrast is not None else head,
            w_cls=self.w_cls if self.w_cls is not None else head,
        )


#: (name, fan_in attr, fan_out attr) construction order of every layer
_LAYER_PLAN = (
    ("enc_s.W1", "d", "hidden"),
    ("enc_s.W2", "hidden", "d_s"),
    ("enc_r.W1", "d", "hidden"),
    ("enc_r.W2", "hidden", "d_r"),
    ("dec_s.W1", "d_s", "hidden"),
    ("dec_s.W2", "hidden", "d"),
    ("dec_f.W1", "d_sr", "hidden"),
    ("dec_f.W2", "hidden", "d"),
    ("proj.W", "d_s", "d"),
    ("cls.W", "d_s", "C"),
)


@dataclass
class PearlParams:
    """All weight matrices and bias vectors, keyed by layer name."""

    layers: dict[str, np.ndarray]
    d: int
    C: int
    d_s: int
    d_r: int
    hidden: int

    def copy(self) -> "PearlParams":
        return PearlParams(
            layers={k: v.copy() for k, v in self.layers.items()},
            d=self.d,
            C=self.C,
            d_s=self.d_s,
            d_r=self.d_r,
            hidden=self.hidden,
        )


def init_params(cfg: PearlConfig, d: int, C: int) -> PearlParams:
    """Uniform(+-sqrt(6/(fan_in+fan_out))) weights, zero biases."""
    cfg = cfg.resolved(d)
    dims = {"d": d, "C": C, "d_s": cfg.d_s, "d_r": cfg.d_r,
            "hidden": cfg.hidden, "d_sr": cfg.d_s + cfg.d_r}
    rng = np.random.default_rng([cfg.seed, 0])
    layers: dict[str, np.ndarray] = {}
    for name, fi, fo in _LAYER_PLAN:
        fan_in, fan_out = dims[fi], dims[fo]
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        layers[name] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        layers[name.replace(".W", ".b")] = np.zeros(fan_out)
    return PearlParams(layers=layers, d=d, C=C,
                       d_s=cfg.d_s, d_r=cfg.d_r, hidden=cfg.hidden)


def _unit_rows_exact(x: np.ndarray):
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    safe = norms >= _ZERO_ROW_TOL
    out = np.zeros_like(x)
    out[safe] = x[safe] / norms[safe, None]
    return out, norms, safe


def _rownorm_backward(d_unit, unit, norms, safe):
    grad = np.zeros_like(d_unit)
    dot = np.einsum("ij,ij->i", d_unit[safe], unit[safe])
    grad[safe] = (d_unit[safe] - dot[:, None] * unit[safe]) / norms[safe, None]
    return grad


@dataclass
class ForwardPass:
    """Outputs and the intermediates needed for backpropagation."""

    z_s: np.ndarray
    z_r: np.ndarray
    x_tilde: np.ndarray
    x_hat_full: np.ndarray
    proj_out: np.ndarray  # rows L2-normalized, zero rows stay zero
    logits: np.ndarray
    # caches
    h_s: np.ndarray = field(repr=False, default=None)
    h_r: np.ndarray = field(repr=False, default=None)
    g_s: np.ndarray = field(repr=False, default=None)
    u: np.ndarray = field(repr=False, default=None)
    g_f: np.ndarray = field(repr=False, default=None)
    proj_raw: np.ndarray = field(repr=False, default=None)
    proj_norms: np.ndarray = field(repr=False, default=None)
    proj_safe: np.ndarray = field(repr=False, default=None)


def forward(params: PearlParams, cfg: PearlConfig, batch: np.ndarray) -> ForwardPass:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.d:
        raise ValueError(f"batch width {x.shape} does not match d={params.d}")
    p = params.layers

    h_s = np.maximum(x @ p["enc_s.W1"] + p["enc_s.b1"], 0.0)
    z_s = h_s @ p["enc_s.W2"] + p["enc_s.b2"]
    h_r = np.maximum(x @ p["enc_r.W1"] + p["enc_r.b1"], 0.0)
    z_r = h_r @ p["enc_r.W2"] + p["enc_r.b2"]

    g_s = np.maximum(z_s @ p["dec_s.W1"] + p["dec_s.b1"], 0.0)
    x_tilde = g_s @ p["dec_s.W2"] + p["dec_s.b2"]

    u = np.concatenate([z_s, z_r], axis=1)
    g_f = np.maximum(u @ p["dec_f.W1"] + p["dec_f.b1"], 0.0)
    x_hat_full = g_f @ p["dec_f.W2"] + p["dec_f.b2"]

    proj_raw = z_s @ p["proj.W"] + p["proj.b"]
    proj_out, proj_norms, proj_safe = _unit_rows_exact(proj_raw)
    logits = z_s @ p["cls.W"] + p["cls.b"]

    for arr in (x_tilde, x_hat_full, proj_out, logits):
        if arr.size and not np.isfinite(arr).all():
            raise NonFiniteLossError("non-finite activation in forward pass")
    return ForwardPass(
        z_s=z_s, z_r=z_r, x_tilde=x_tilde, x_hat_full=x_hat_full,
        proj_out=proj_out, logits=logits,
        h_s=h_s, h_r=h_r, g_s=g_s, u=u, g_f=g_f,
        proj_raw=proj_raw, proj_norms=proj_norms, proj_safe=proj_safe,
    )


@dataclass(frozen=True)
class LossTerms:
    recon: float
    full: float
    align: float
    contrast: float
    cls: float
    ortho: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return {
            "recon": self.recon, "full": self.full, "align": self.align,
            "contrast": self.contrast, "cls": self.cls, "ortho": self.ortho,
            "total": self.total,
        }


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_terms(
    fwd: ForwardPass,
    batch: np.ndarray,
    labels: np.ndarray,
    protos: PrototypeSet,
    cfg: PearlConfig,
) -> LossTerms:
    """The six objective terms and their weighted total for one batch."""
    x = np.asarray(batch, dtype=np.float64)
    y = np.asarray(labels)
    B = x.shape[0]
    if B < 1:
        raise ValueError("loss requires a non-empty batch")
    if protos.C != fwd.logits.shape[1]:
        raise ValueError("prototype count does not match classifier width")
    cfg = cfg.resolved(x.shape[1])
    rows = np.arange(B)

    recon = float(np.mean(np.sum((fwd.x_tilde - x) ** 2, axis=1)))
    full = float(np.mean(np.sum((fwd.x_hat_full - x) ** 2, axis=1)))

    cos = fwd.proj_out @ protos.unit.T  # (B, C); prototype rows are unit-norm
    align = float(np.mean(1.0 - cos[rows, y]))
    logp = _log_softmax(cos / cfg.tau)
    contrast = float(np.mean(-logp[rows, y]))

    logp_cls = _log_softmax(fwd.logits)
    cls = float(np.mean(-logp_cls[rows, y]))

    zs_bar, _, _ = _unit_rows_exact(fwd.z_s)
    zr_bar, _, _ = _unit_rows_exact(fwd.z_r)
    cross = zs_bar.T @ zr_bar / B
    ortho = float(np.mean(np.abs(cross)))

    total = (
        cfg.w_recon * recon + cfg.w_full * full + cfg.w_align * align
        + cfg.w_contrast * contrast + cfg.w_cls * cls + cfg.w_ortho * ortho
    )
    return LossTerms(recon, full, align, contrast, cls, ortho, total)


def compute_gradients(
    params: PearlParams,
    cfg: PearlConfig,
    batch: np.ndarray,
    labels: np.ndarray,
    protos: PrototypeSet,
):
    """Exact gradients of the weighted total loss for one batch.

    Returns (gradients keyed like ``params.layers``, LossTerms, ForwardPass).
    """
    x = np.asarray(batch, dtype=np.float64)
    y = np.asarray(labels)
    B = x.shape[0]
    rows = np.arange(B)
    p = params.layers
    cfg = cfg.resolved(params.d)

    fwd = forward(params, cfg, x)
    terms = loss_terms(fwd, x, y, protos, cfg)

    onehot = np.zeros((B, params.C))
    onehot[rows, y] = 1.0

    # reconstruction heads
    d_xt = (2.0 / B) * (fwd.x_tilde - x) * cfg.w_recon
    d_xf = (2.0 / B) * (fwd.x_hat_full - x) * cfg.w_full

    # prototype cosine heads; cos = proj_out @ unit_protos.T
    cos = fwd.proj_out @ protos.unit.T
    d_cos = np.zeros_like(cos)
    d_cos[rows, y] -= cfg.w_align / B
    soft = np.exp(_log_softmax(cos / cfg.tau))
    d_cos += (cfg.w_contrast / (B * cfg.tau)) * (soft - onehot)
    d_proj_unit = d_cos @ protos.unit
    d_proj_raw = _rownorm_backward(
        d_proj_unit, fwd.proj_out, fwd.proj_norms, fwd.proj_safe
    )

    # classifier head
    d_logits = (cfg.w_cls / B) * (np.exp(_log_softmax(fwd.logits)) - onehot)

    # batch cross-correlation between normalized codes
    zs_bar, zs_norms, zs_safe = _unit_rows_exact(fwd.z_s)
    zr_bar, zr_norms, zr_safe = _unit_rows_exact(fwd.z_r)
    cross = zs_bar.T @ zr_bar / B
    d_cross = (cfg.w_ortho / cross.size) * np.sign(cross)
    d_zs_bar = zr_bar @ d_cross.T / B
    d_zr_bar = zs_bar @ d_cross / B

    grads = {name: np.zeros_like(arr) for name, arr in p.items()}

    # decoder over the signal code
    d_gs = d_xt @ p["dec_s.W2"].T
    grads["dec_s.W2"] = fwd.g_s.T @ d_xt
    grads["dec_s.b2"] = d_xt.sum(axis=0)
    d_gs_pre = d_gs * (fwd.g_s > 0)
    grads["dec_s.W1"] = fwd.z_s.T @ d_gs_pre
    grads["dec_s.b1"] = d_gs_pre.sum(axis=0)

    # full decoder over the concatenated codes
    d_gf = d_xf @ p["dec_f.W2"].T
    grads["dec_f.W2"] = fwd.g_f.T @ d_xf
    grads["dec_f.b2"] = d_xf.sum(axis=0)
    d_gf_pre = d_gf * (fwd.g_f > 0)
    grads["dec_f.W1"] = fwd.u.T @ d_gf_pre
    grads["dec_f.b1"] = d_gf_pre.sum(axis=0)
    d_u = d_gf_pre @ p["dec_f.W1"].T

    # projection and classifier heads
    grads["proj.W"] = fwd.z_s.T @ d_proj_raw
    grads["proj.b"] = d_proj_raw.sum(axis=0)
    grads["cls.W"] = fwd.z_s.T @ d_logits
    grads["cls.b"] = d_logits.sum(axis=0)

    # accumulate into the codes
    d_zs = d_gs_pre @ p["dec_s.W1"].T
    d_zs += d_u[:, : params.d_s]
    d_zs += d_proj_raw @ p["proj.W"].T
    d_zs += d_logits @ p["cls.W"].T
    d_zs += _rownorm_backward(d_zs_bar, zs_bar, zs_norms, zs_safe)

    d_zr = d_u[:, params.d_s :]
    d_zr += _rownorm_backward(d_zr_bar, zr_bar, zr_norms, zr_safe)

    # encoders
    grads["enc_s.W2"] = fwd.h_s.T @ d_zs
    grads["enc_s.b2"] = d_zs.sum(axis=0)
    d_hs_pre = (d_zs @ p["enc_s.W2"].T) * (fwd.h_s > 0)
    grads["enc_s.W1"] = x.T @ d_hs_pre
    grads["enc_s.b1"] = d_hs_pre.sum(axis=0)

    grads["enc_r.W2"] = fwd.h_r.T @ d_zr
    grads["enc_r.b2"] = d_zr.sum(axis=0)
    d_hr_pre = (d_zr @ p["enc_r.W2"].T) * (fwd.h_r > 0)
    grads["enc_r.W1"] = x.T @ d_hr_pre
    grads["enc_r.b1"] = d_hr_pre.sum(axis=0)

    return grads, terms, fwd


@dataclass
class TrainTrace:
    """Per-epoch loss record plus the early-stopping outcome."""

    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    stop_reason: str = ""

    def val_losses(self) -> list[float]:
        return [e["val_total"] for e in self.epochs]


def train(
    cfg: PearlConfig,
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_val: np.ndarray,
    y_val: np.ndarray,
    protos: PrototypeSet,
):
    """Mini-batch Adam with early stopping on validation loss.

    Prototypes must come from the training rows only; validation labels enter
    the run solely through the stopping criterion. Returns the parameter
    snapshot with the lowest recorded validation loss and the trace.
    """
    x_train = np.asarray(x_train, dtype=np.float64)
    x_val = np.asarray(x_val, dtype=np.float64)
    y_train = np.asarray(y_train)
    y_val = np.asarray(y_val)
    n, d = x_train.shape
    if n < 1 or x_val.shape[0] < 1:
        raise ValueError("train and validation splits must be non-empty")

    cfg = cfg.resolved(d)
    params = init_params(cfg, d, protos.C)
    m = {k: np.zeros_like(v) for k, v in params.layers.items()}
    v = {k: np.zeros_like(va) for k, va in params.layers.items()}
    step = 0

    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    trace = TrainTrace()
    best = params.copy()
    best_val = math.inf
    stall = 0

    for epoch in range(cfg.max_epochs):
        order = shuffle_rng.permutation(n)
        sums = {k: 0.0 for k in ("recon", "full", "align", "contrast", "cls", "ortho", "total")}
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            try:
                grads, terms, _ = compute_gradients(
                    params, cfg, x_train[idx], y_train[idx], protos
                )
            except NonFiniteLossError as err:
                raise NonFiniteLossError(
                    f"{err} (epoch {epoch}, batch {start // cfg.batch_size})", trace
                ) from None
            if not math.isfinite(terms.total):
                raise NonFiniteLossError(
                    f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}",
                    trace,
                )
            for k, val_ in terms.as_dict().items():
                sums[k] += val_ * idx.size
            step += 1
            bc1 = 1.0 - _ADAM_BETA1**step
            bc2 = 1.0 - _ADAM_BETA2**step
            for k, g in grads.items():
                m[k] = _ADAM_BETA1 * m[k] + (1.0 - _ADAM_BETA1) * g
                v[k] = _ADAM_BETA2 * v[k] + (1.0 - _ADAM_BETA2) * g * g
                params.layers[k] -= cfg.lr * (m[k] / bc1) / (np.sqrt(v[k] / bc2) + _ADAM_EPS)

        val_terms = loss_terms(forward(params, cfg, x_val), x_val, y_val, protos, cfg)
        if not math.isfinite(val_terms.total):
            raise NonFiniteLossError(f"non-finite validation loss at epoch {epoch}", trace)
        record = {k: s / n for k, s in sums.items()}
        record["epoch"] = epoch
        record["val_total"] = val_terms.total
        trace.epochs.append(record)

        meaningful = val_terms.total < best_val - _IMPROVE_TOL
        if val_terms.total < best_val:
            best_val = val_terms.total
            best = params.copy()
            trace.best_epoch = epoch
        stall = 0 if meaningful else stall + 1
        if stall >= cfg.patience:
            trace.stop_reason = "early_stop"
            break
    else:
        trace.stop_reason = "max_epochs"
    return best, trace


def transform(params: PearlParams, cfg: PearlConfig, x: np.ndarray) -> np.ndarray:
    """Refined embeddings: decode the signal code back to the input space.

    Output is float32 with the same (n, d) shape as the input.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.d:
        raise ValueError(f"input width {x.shape} does not match d={params.d}")
    p = params.layers
    h = np.maximum(x @ p["enc_s.W1"] + p["enc_s.b1"], 0.0)
    z = h @ p["enc_s.W2"] + p["enc_s.b2"]
    g = np.maximum(z @ p["dec_s.W1"] + p["dec_s.b1"], 0.0)
    out = g @ p["dec_s.W2"] + p["dec_s.b2"]
    return out.astype(np.float32)
