"""Permutation-invariant allocation policy.

Every entity's row goes through the same Elman RNN (tanh), the final hidden
state is concatenated with the entity's previous allocation weight and a
shared dense layer turns it into a score. A softmax across entities gives the
allocation. Because all entities share the same operations and the softmax is
symmetric, reordering the rows reorders the output identically.

Row layout of a state matrix (one row per entity)::

    [prev_weight, ch0[0..L-1], ch1[0..L-1], ..., ch{F-1}[0..L-1]]

i.e. the previous weight followed by ``F`` channel windows of length ``L``
each, oldest first.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import _kernels
from .core import check_state, renormalize
from .errors import DimensionError, DomainError, NumericError

TENSOR_NAMES = (
    "encoder_input_weights",
    "encoder_recurrent_weights",
    "encoder_bias",
    "score_weights",
    "score_bias",
)

# objective(allocations (B, m)) -> (values (B,), d values / d allocations (B, m))
Objective = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True, eq=False)
class PolicyGradient:
    encoder_input_weights: np.ndarray
    encoder_recurrent_weights: np.ndarray
    encoder_bias: np.ndarray
    score_weights: np.ndarray
    score_bias: float

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: np.asarray(getattr(self, name), dtype=np.float64) for name in TENSOR_NAMES}

    def flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors().values()])

    def norm(self) -> float:
        return float(np.linalg.norm(self.flat()))

    def scaled(self, k: float) -> "PolicyGradient":
        return PolicyGradient(**{n: k * t for n, t in self.tensors().items()})


@dataclass(frozen=True, eq=False)
class PolicyParams:
    """Shared network parameters.

    ``input_offset`` and ``input_scale`` are fixed (not trained): window
    features enter the RNN as ``(v - input_offset) * input_scale``. The
    defaults leave inputs untouched.
    """

    encoder_input_weights: np.ndarray  # (hidden, feature)
    encoder_recurrent_weights: np.ndarray  # (hidden, hidden)
    encoder_bias: np.ndarray  # (hidden,)
    score_weights: np.ndarray  # (hidden + 1,)
    score_bias: float
    input_offset: float = 0.0
    input_scale: float = 1.0

    def __post_init__(self):
        D = self.hidden_size
        if self.encoder_input_weights.ndim != 2 or self.encoder_input_weights.shape[0] != D:
            raise DimensionError(f"encoder_input_weights shape {self.encoder_input_weights.shape}")
        if self.encoder_recurrent_weights.shape != (D, D):
            raise DimensionError(
                f"encoder_recurrent_weights shape {self.encoder_recurrent_weights.shape}, expected {(D, D)}"
            )
        if self.score_weights.shape != (D + 1,):
            raise DimensionError(f"score_weights shape {self.score_weights.shape}, expected {(D + 1,)}")

    @property
    def hidden_size(self) -> int:
        return int(self.encoder_bias.shape[0])

    @property
    def feature_width(self) -> int:
        return int(self.encoder_input_weights.shape[1])

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: np.asarray(getattr(self, name), dtype=np.float64) for name in TENSOR_NAMES}

    def flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors().values()])

    def with_flat(self, theta: np.ndarray) -> "PolicyParams":
        out, pos = {}, 0
        for name, t in self.tensors().items():
            n = t.size
            chunk = theta[pos : pos + n].reshape(t.shape)
            out[name] = float(chunk) if name == "score_bias" else chunk.copy()
            pos += n
        return PolicyParams(**out, input_offset=self.input_offset, input_scale=self.input_scale)

    def step(self, grad: PolicyGradient, lr: float) -> "PolicyParams":
        """Gradient ascent: ``theta + lr * grad``."""
        with np.errstate(over="ignore", invalid="ignore"):  # reported by check_finite
            new = {n: t + lr * g for (n, t), g in zip(self.tensors().items(), grad.tensors().values())}
        new["score_bias"] = float(new["score_bias"])
        params = PolicyParams(**new, input_offset=self.input_offset, input_scale=self.input_scale)
        params.check_finite()
        return params

    def check_finite(self) -> None:
        for name, t in self.tensors().items():
            if not np.all(np.isfinite(t)):
                raise NumericError(f"non-finite values in parameter tensor {name!r}")


def init_near_zero(
    hidden_size: int,
    feature_width: int,
    scale: float,
    rng: np.random.Generator,
    input_offset: float = 0.0,
    input_scale: float = 1.0,
) -> PolicyParams:
    """All parameters i.i.d. uniform on ``[-scale, scale]``.

    Small ``scale`` makes the policy behave like the equal-weight allocation.
    """
    if scale < 0:
        raise DomainError(f"scale must be non-negative, got {scale}")
    D, F = hidden_size, feature_width

    def draw(*shape):
        return rng.uniform(-scale, scale, size=shape) if scale > 0 else np.zeros(shape)

    return PolicyParams(
        encoder_input_weights=draw(D, F),
        encoder_recurrent_weights=draw(D, D),
        encoder_bias=draw(D),
        score_weights=draw(D + 1),
        score_bias=float(draw(1)[0]),
        input_offset=input_offset,
        input_scale=input_scale,
    )


def split_rows(params: PolicyParams, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split ``(..., W)`` rows into ``(prev_weights, sequences (K, L, F))``."""
    F = params.feature_width
    W = states.shape[-1]
    if (W - 1) < F or (W - 1) % F:
        raise DimensionError(
            f"row width {W} is not 1 + L * {F} for feature width {F}"
        )
    L = (W - 1) // F
    flat = states.reshape(-1, W)
    prev = np.ascontiguousarray(flat[:, 0])
    seqs = flat[:, 1:].reshape(-1, F, L).transpose(0, 2, 1)
    if params.input_offset != 0.0 or params.input_scale != 1.0:
        seqs = (seqs - params.input_offset) * params.input_scale
    return prev, np.ascontiguousarray(seqs)


def _raw(params: PolicyParams):
    return (
        params.encoder_input_weights,
        params.encoder_recurrent_weights,
        params.encoder_bias,
        params.score_weights,
        params.score_bias,
    )


def score_entity(params: PolicyParams, window, prev_weight: float, backend: str | None = None) -> float:
    """Score of one entity from its ``(L, F)`` feature window and previous weight."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim == 1:
        window = window[:, None]
    if window.ndim != 2 or window.shape[1] != params.feature_width:
        raise DimensionError(
            f"window shape {window.shape} does not match feature width {params.feature_width}"
        )
    row = np.concatenate([[prev_weight], window.T.ravel()])
    return float(entity_scores(params, row[None, :], backend)[0])


def entity_scores(params: PolicyParams, x, backend: str | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    prev, seqs = split_rows(params, x)
    fwd, _ = _kernels.get_kernels(backend)
    scores, _ = fwd(*_raw(params), seqs, prev)
    return scores.reshape(x.shape[:-1])


def softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return renormalize(e / e.sum(axis=-1, keepdims=True))


def forward(params: PolicyParams, x, backend: str | None = None) -> np.ndarray:
    """Allocation for one state matrix ``(m, W)``."""
    x = check_state(x)
    return softmax(entity_scores(params, x, backend))


def forward_batch(params: PolicyParams, states, backend: str | None = None) -> np.ndarray:
    """Allocations for a stack of state matrices ``(B, m, W)`` -> ``(B, m)``."""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 3:
        raise DimensionError(f"expected (batch, entities, width), got shape {states.shape}")
    return softmax(entity_scores(params, states, backend))


@dataclass(frozen=True, eq=False)
class GradientResult:
    objective: float
    gradient: PolicyGradient
    allocations: np.ndarray
    sample_grad_norms: np.ndarray


def value_and_grad(
    params: PolicyParams, states, objective: Objective, backend: str | None = None
) -> GradientResult:
    """Mean per-step objective over a minibatch and its exact gradient.

    ``objective`` maps allocations ``(B, m)`` to per-step values and their
    derivatives with respect to the allocations. The gradient is accumulated
    through the softmax, scoring head and the full recurrent unroll.
    """
    states = np.asarray(states, dtype=np.float64)
    if states.ndim == 2:
        states = states[None]
    if states.ndim != 3 or states.shape[0] == 0:
        raise DimensionError(f"minibatch must be a non-empty (B, m, W) stack, got {states.shape}")
    B, m, _ = states.shape
    fwd, bwd = _kernels.get_kernels(backend)
    prev, seqs = split_rows(params, states)
    raw = _raw(params)
    scores, hs = fwd(*raw, seqs, prev)
    _check("scores", scores)
    alloc = softmax(scores.reshape(B, m))
    values, d_alloc = objective(alloc)
    values = np.asarray(values, dtype=np.float64).reshape(B)
    d_alloc = np.asarray(d_alloc, dtype=np.float64).reshape(B, m)
    _check("objective values", values)
    _check("objective gradient", d_alloc)
    # softmax Jacobian-vector product, then average over the minibatch
    d_scores = alloc * (d_alloc - (alloc * d_alloc).sum(axis=1, keepdims=True))
    d_win, d_wrec, d_bh, d_u, d_bs = bwd(*raw, seqs, prev, hs, np.ascontiguousarray(d_scores.ravel()), m)
    per_sample = np.concatenate(
        [d_win.reshape(B, -1), d_wrec.reshape(B, -1), d_bh, d_u, d_bs[:, None]], axis=1
    )
    grad = PolicyGradient(
        encoder_input_weights=d_win.sum(axis=0) / B,
        encoder_recurrent_weights=d_wrec.sum(axis=0) / B,
        encoder_bias=d_bh.sum(axis=0) / B,
        score_weights=d_u.sum(axis=0) / B,
        score_bias=float(d_bs.sum() / B),
    )
    for name, t in grad.tensors().items():
        _check(f"gradient of {name}", t)
    return GradientResult(
        objective=float(values.mean()),
        gradient=grad,
        allocations=alloc,
        sample_grad_norms=np.linalg.norm(per_sample, axis=1),
    )


def backward(params: PolicyParams, minibatch, objective: Objective, backend: str | None = None) -> PolicyGradient:
    return value_and_grad(params, minibatch, objective, backend).gradient


def _check(name: str, arr) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {name}")


# ---------------------------------------------------------------- checkpoints

CHECKPOINT_FORMAT = "pimtl-policy/1"


def params_to_dict(params: PolicyParams) -> dict:
    tensors = {}
    for name, t in params.tensors().items():
        tensors[name] = {"shape": list(t.shape), "data": [float(v) for v in t.ravel()]}
    return {
        "format": CHECKPOINT_FORMAT,
        "hidden_size": params.hidden_size,
        "feature_width": params.feature_width,
        "input_offset": params.input_offset,
        "input_scale": params.input_scale,
        "tensors": tensors,
    }


def params_from_dict(d: dict) -> PolicyParams:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise DomainError(f"unrecognised checkpoint format {d.get('format')!r}")
    kw = {}
    for name in TENSOR_NAMES:
        entry = d["tensors"][name]
        arr = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        kw[name] = float(arr) if name == "score_bias" else arr
    return PolicyParams(**kw, input_offset=float(d["input_offset"]), input_scale=float(d["input_scale"]))


def save_params(params: PolicyParams, path) -> None:
    # json writes floats with repr(), which round-trips float64 exactly
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(params_to_dict(params), indent=1))


def load_params(path) -> PolicyParams:
    return params_from_dict(json.loads(Path(path).read_text()))
