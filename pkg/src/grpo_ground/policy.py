"""The trainable stochastic policy: a tanh feed-forward trunk over task
features with four categorical coordinate heads (G bins each) and one binary
format head. Log-probabilities, sampling, and gradients are exact; the heavy
math runs on the kernels backend (compiled when available).
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .geometry import BBox
from .response import render

FORMAT_OK = "ok"
FORMAT_BROKEN = "broken"
_FORMAT_INDEX = {FORMAT_OK: 0, FORMAT_BROKEN: 1}
_FORMAT_TOKENS = (FORMAT_OK, FORMAT_BROKEN)

# Reasoning content is not modeled; every rendered response carries this text.
THINK_PLACEHOLDER = "match the instruction against each candidate box"

INIT_WEIGHT_SCALE = 0.05


@dataclass
class PolicyParams:
    """Weights of the policy network plus the (D, H, G) metadata they imply.

    Tensor shapes: w_in (D,H), b_in (H,), w_coord (4,H,G), b_coord (4,G),
    w_fmt (H,2), b_fmt (2,).
    """

    w_in: np.ndarray
    b_in: np.ndarray
    w_coord: np.ndarray
    b_coord: np.ndarray
    w_fmt: np.ndarray
    b_fmt: np.ndarray

    @property
    def dim_features(self) -> int:
        return self.w_in.shape[0]

    @property
    def hidden_width(self) -> int:
        return self.w_in.shape[1]

    @property
    def bins(self) -> int:
        return self.w_coord.shape[2]

    def tensors(self) -> tuple[np.ndarray, ...]:
        return (self.w_in, self.b_in, self.w_coord, self.b_coord, self.w_fmt, self.b_fmt)

    def validate(self) -> None:
        d, h, g = self.dim_features, self.hidden_width, self.bins
        expected = [(d, h), (h,), (4, h, g), (4, g), (h, 2), (2,)]
        for t, shape in zip(self.tensors(), expected):
            if t.shape != tuple(shape):
                raise ValueError(f"parameter tensor shape {t.shape} != expected {shape}")
            if not np.all(np.isfinite(t)):
                raise ValueError("non-finite policy parameter")


TENSOR_FIELDS = ("w_in", "b_in", "w_coord", "b_coord", "w_fmt", "b_fmt")


@dataclass(frozen=True)
class SampledResponse:
    bins: tuple[int, int, int, int]
    format_token: str
    logprob_old: float
    rendered: str


def init_params(dim_features: int, hidden_width: int, bins: int, rng: np.random.Generator) -> PolicyParams:
    """Seeded initialization: weights uniform in [-0.05, 0.05], biases zero."""
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")

    def w(*shape):
        return rng.uniform(-INIT_WEIGHT_SCALE, INIT_WEIGHT_SCALE, size=shape)

    return PolicyParams(
        w_in=w(dim_features, hidden_width),
        b_in=np.zeros(hidden_width),
        w_coord=w(4, hidden_width, bins),
        b_coord=np.zeros((4, bins)),
        w_fmt=w(hidden_width, 2),
        b_fmt=np.zeros(2),
    )


def zeros_like(params: PolicyParams) -> PolicyParams:
    return PolicyParams(*(np.zeros_like(t) for t in params.tensors()))


def clone_snapshot(params: PolicyParams) -> PolicyParams:
    """Deep value copy; mutating the original never changes the snapshot."""
    return PolicyParams(*(t.copy() for t in params.tensors()))


def _forward_logp(params: PolicyParams, features_batch: np.ndarray):
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(features_batch, dtype=np.float64)))
    if X.shape[1] != params.dim_features:
        raise ValueError(
            f"feature dimension {X.shape[1]} != policy input dimension {params.dim_features}"
        )
    return X, *kernels.batch_forward(*params.tensors(), X)


def forward(params: PolicyParams, features: np.ndarray) -> list[np.ndarray]:
    """Probability vectors of the five heads for one feature vector."""
    if not np.all(np.isfinite(np.asarray(features, dtype=np.float64))):
        raise ValueError("non-finite features")
    _, _, logp_c, logp_f = _forward_logp(params, features)
    return [np.exp(logp_c[0, k]) for k in range(4)] + [np.exp(logp_f[0])]


def _check_tokens(params: PolicyParams, bins: tuple[int, int, int, int], format_token: str) -> int:
    for b in bins:
        if not (0 <= int(b) < params.bins):
            raise ValueError(f"bin index {b} out of range [0, {params.bins - 1}]")
    if format_token not in _FORMAT_INDEX:
        raise ValueError(f"unknown format token {format_token!r}")
    return _FORMAT_INDEX[format_token]


def _gather_logprob(logp_c: np.ndarray, logp_f: np.ndarray, bins, fmt_index: int) -> float:
    total = logp_f[fmt_index]
    for k in range(4):
        total += logp_c[k, bins[k]]
    return float(total)


def logprob(params: PolicyParams, features: np.ndarray, response: SampledResponse) -> float:
    """Joint log-probability of a recorded response under the given params."""
    fmt_index = _check_tokens(params, response.bins, response.format_token)
    _, _, logp_c, logp_f = _forward_logp(params, features)
    return _gather_logprob(logp_c[0], logp_f[0], response.bins, fmt_index)


def logprobs_for(params: PolicyParams, features: np.ndarray, responses: list[SampledResponse]) -> np.ndarray:
    """Log-probabilities of many responses to the same task (one forward pass)."""
    _, _, logp_c, logp_f = _forward_logp(params, features)
    out = np.empty(len(responses))
    for i, r in enumerate(responses):
        fmt_index = _check_tokens(params, r.bins, r.format_token)
        out[i] = _gather_logprob(logp_c[0], logp_f[0], r.bins, fmt_index)
    return out


def sample(params: PolicyParams, features: np.ndarray, rng: np.random.Generator, n: int) -> list[SampledResponse]:
    """Draw n independent responses; each head is an independent categorical.

    Requires n >= 2 because downstream group statistics need variance.
    """
    if n < 2:
        raise ValueError(f"group size must be >= 2, got {n}")
    _, _, logp_c, logp_f = _forward_logp(params, features)
    cdf_c = [np.cumsum(np.exp(logp_c[0, k])) for k in range(4)]
    cdf_f = np.cumsum(np.exp(logp_f[0]))
    draws = rng.random((n, 5))

    out = []
    for i in range(n):
        bins = tuple(
            int(min(np.searchsorted(cdf_c[k], draws[i, k], side="right"), params.bins - 1))
            for k in range(4)
        )
        fmt_index = int(min(np.searchsorted(cdf_f, draws[i, 4], side="right"), 1))
        fmt = _FORMAT_TOKENS[fmt_index]
        lp = _gather_logprob(logp_c[0], logp_f[0], bins, fmt_index)
        rendered = render(THINK_PLACEHOLDER, bins, corrupt=(fmt == FORMAT_BROKEN))
        out.append(SampledResponse(bins=bins, format_token=fmt, logprob_old=lp, rendered=rendered))
    return out


def greedy_decode(params: PolicyParams, features: np.ndarray) -> SampledResponse:
    """Argmax token of every head (evaluation-time decoding)."""
    _, _, logp_c, logp_f = _forward_logp(params, features)
    bins = tuple(int(np.argmax(logp_c[0, k])) for k in range(4))
    fmt_index = int(np.argmax(logp_f[0]))
    fmt = _FORMAT_TOKENS[fmt_index]
    lp = _gather_logprob(logp_c[0], logp_f[0], bins, fmt_index)
    rendered = render(THINK_PLACEHOLDER, bins, corrupt=(fmt == FORMAT_BROKEN))
    return SampledResponse(bins=bins, format_token=fmt, logprob_old=lp, rendered=rendered)


def snap_box_to_bins(box: BBox, bins: int) -> tuple[int, int, int, int]:
    """Nearest-bin quantization of a box, ties toward the lower bin."""

    def snap(c: float) -> int:
        k = math.ceil(c * (bins - 1) - 0.5)
        return int(min(bins - 1, max(0, k)))

    return (snap(box.x1), snap(box.y1), snap(box.x2), snap(box.y2))


def sft_loss_and_grad(
    params: PolicyParams, features_batch: np.ndarray, target_bins: np.ndarray
) -> tuple[float, PolicyParams]:
    """Mean cross-entropy over the five heads and its exact gradient.

    Targets are GT boxes snapped to bins; the format target is always "ok".
    """
    X, hidden, logp_c, logp_f = _forward_logp(params, features_batch)
    targets = np.asarray(target_bins, dtype=np.intp)
    if targets.ndim != 2 or targets.shape != (X.shape[0], 4):
        raise ValueError(f"target_bins shape {targets.shape} != ({X.shape[0]}, 4)")
    if targets.min() < 0 or targets.max() >= params.bins:
        raise ValueError("target bin out of range")
    B = X.shape[0]
    if B == 0:
        raise ValueError("empty SFT batch")

    rows = np.arange(B)[:, None]
    heads = np.arange(4)[None, :]
    loss = -(logp_c[rows, heads, targets].sum() + logp_f[:, 0].sum()) / B

    dl_c = np.exp(logp_c)
    np.subtract.at(dl_c, (rows, heads, targets), 1.0)
    dl_c /= B
    dl_f = np.exp(logp_f)
    dl_f[:, 0] -= 1.0
    dl_f /= B

    grads = kernels.backward(params.w_coord, params.w_fmt, X, hidden, dl_c, dl_f)
    return float(loss), PolicyParams(*grads)


def save_checkpoint(params: PolicyParams, path: str | Path, seed: int, stage: str) -> None:
    """Single JSON document: metadata plus base64 little-endian float64 tensors."""
    doc = {
        "meta": {
            "dim_features": params.dim_features,
            "hidden_width": params.hidden_width,
            "bins": params.bins,
            "seed": seed,
            "stage": stage,
        },
        "tensors": {
            name: {
                "shape": list(getattr(params, name).shape),
                "data": base64.b64encode(
                    np.ascontiguousarray(getattr(params, name), dtype="<f8").tobytes()
                ).decode("ascii"),
            }
            for name in TENSOR_FIELDS
        },
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[PolicyParams, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    tensors = []
    for name in TENSOR_FIELDS:
        entry = doc["tensors"][name]
        flat = np.frombuffer(base64.b64decode(entry["data"]), dtype="<f8")
        tensors.append(flat.reshape(entry["shape"]).astype(np.float64).copy())
    params = PolicyParams(*tensors)
    params.validate()
    return params, dict(doc["meta"])
