"""Guide-driven anisotropic diffusion of a height field.

Explicit four-neighbour scheme without a re-projection onto the source:

    x_t[p] = x_{t-1}[p] + lam * sum_n (x_{t-1}[n] - x_{t-1}[p]) * c(g[p], g[n])
    c(a, b) = K^2 / (K^2 + |a - b|^2)

Coefficients are stored per edge in a ``[..., 2, H, W]`` array: plane 0
holds the edge between ``(i, j)`` and ``(i, j+1)``, plane 1 the edge between
``(i, j)`` and ``(i+1, j)``. The last column / row of each plane is zero,
which is exactly the homogeneous Neumann boundary (no flux leaves the grid).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grad as gc
from .errors import InvalidInputError, ShapeError
from .raster import GuideRaster


@dataclass(frozen=True)
class DiffusionParams:
    lam: float = 0.24
    K: float = 0.001
    n_steps_total: int = 8000
    n_steps_grad: int = 1024
    # None: use n_steps_total at inference too
    n_steps_infer: int | None = None
    learned_features: bool = False
    feature_channels: int = 8

    def __post_init__(self):
        if not 0.0 < self.lam < 0.25:
            raise InvalidInputError(f"lam must lie in (0, 0.25) for stability, got {self.lam}")
        if not self.K > 0:
            raise InvalidInputError(f"K must be positive, got {self.K}")
        if self.n_steps_total < 0 or self.n_steps_grad < 0:
            raise InvalidInputError("step counts must be non-negative")
        if self.n_steps_grad > self.n_steps_total:
            raise InvalidInputError(
                f"n_steps_grad ({self.n_steps_grad}) exceeds n_steps_total ({self.n_steps_total})"
            )
        if self.n_steps_infer is not None and self.n_steps_infer < 0:
            raise InvalidInputError("n_steps_infer must be non-negative")
        if self.feature_channels < 1:
            raise InvalidInputError("feature_channels must be >= 1")

    @property
    def inference_steps(self) -> int:
        return self.n_steps_total if self.n_steps_infer is None else self.n_steps_infer


@dataclass
class DiffusionState:
    x: np.ndarray
    t: int = 0


def diffusion_coefficient(gp, gn, K: float) -> float:
    d = np.asarray(gp, dtype=np.float64) - np.asarray(gn, dtype=np.float64)
    k2 = K * K
    return float(k2 / (k2 + np.dot(d.ravel(), d.ravel())))


def edge_coefficients_array(guide: np.ndarray, K: float) -> np.ndarray:
    """Coefficients for a ``[..., C, H, W]`` guide as a ``[..., 2, H, W]`` array."""
    g = np.asarray(guide, dtype=np.float64)
    if g.ndim < 3:
        raise ShapeError(f"guide must be [..., C, H, W], got {g.shape}")
    k2 = K * K
    out = np.zeros(g.shape[:-3] + (2,) + g.shape[-2:])
    dh = g[..., :, 1:] - g[..., :, :-1]
    dv = g[..., 1:, :] - g[..., :-1, :]
    out[..., 0, :, :-1] = k2 / (k2 + (dh * dh).sum(axis=-3))
    out[..., 1, :-1, :] = k2 / (k2 + (dv * dv).sum(axis=-3))
    return out


def edge_coefficients(features: gc.Tensor, K: float) -> gc.Tensor:
    """Differentiable version of :func:`edge_coefficients_array` for NCHW features."""
    f = features.data
    if f.ndim != 4:
        raise ShapeError(f"features must be NCHW, got {f.shape}")
    k2 = K * K
    dh = f[:, :, :, 1:] - f[:, :, :, :-1]
    dv = f[:, :, 1:, :] - f[:, :, :-1, :]
    ch = k2 / (k2 + (dh * dh).sum(axis=1))
    cv = k2 / (k2 + (dv * dv).sum(axis=1))
    out = np.zeros((f.shape[0], 2) + f.shape[2:], dtype=f.dtype)
    out[:, 0, :, :-1] = ch
    out[:, 1, :-1, :] = cv

    def bwd(g):
        # dc/dd = -2 c^2 / K^2 * d
        gh = (g[:, 0, :, :-1] * ch * ch * (-2.0 / k2))[:, None] * dh
        gv = (g[:, 1, :-1, :] * cv * cv * (-2.0 / k2))[:, None] * dv
        gf = np.zeros_like(f)
        gf[:, :, :, 1:] += gh
        gf[:, :, :, :-1] -= gh
        gf[:, :, 1:, :] += gv
        gf[:, :, :-1, :] -= gv
        return (gf,)

    return gc.custom_op("edge_coefficients", out, (features,), bwd)


def _split(coef: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if x.ndim == coef.ndim:
        # batched NCHW: x is [N, 1, H, W], coef is [N, 2, H, W]
        if x.shape[-3] != 1 or coef.shape[:-3] != x.shape[:-3] or coef.shape[-3] != 2:
            raise ShapeError(f"coefficients {coef.shape} do not match image {x.shape}")
        ch, cv = coef[..., 0:1, :, :], coef[..., 1:2, :, :]
    elif coef.ndim == x.ndim + 1:
        if coef.shape[:-3] != x.shape[:-2] or coef.shape[-3] != 2:
            raise ShapeError(f"coefficients {coef.shape} do not match image {x.shape}")
        ch, cv = coef[..., 0, :, :], coef[..., 1, :, :]
    else:
        raise ShapeError(f"coefficients {coef.shape} do not match image {x.shape}")
    if ch.shape[-2:] != x.shape[-2:]:
        raise ShapeError(f"coefficients {coef.shape} do not match image {x.shape}")
    return ch[..., :, :-1], cv[..., :-1, :]


def _apply(x: np.ndarray, lch: np.ndarray, lcv: np.ndarray) -> np.ndarray:
    """One Jacobi step with pre-scaled coefficients ``lam * c``."""
    fh = lch * (x[..., :, 1:] - x[..., :, :-1])
    fv = lcv * (x[..., 1:, :] - x[..., :-1, :])
    out = x.copy()
    out[..., :, :-1] += fh
    out[..., :, 1:] -= fh
    out[..., :-1, :] += fv
    out[..., 1:, :] -= fv
    return out


def diffuse_array(x: np.ndarray, coef: np.ndarray, lam: float, n_steps: int) -> np.ndarray:
    ch, cv = _split(coef, x)
    lch = (lam * ch).astype(x.dtype)
    lcv = (lam * cv).astype(x.dtype)
    for _ in range(n_steps):
        x = _apply(x, lch, lcv)
    return x


def diffuse(x: gc.Tensor, coef: gc.Tensor, lam: float, n_steps: int) -> gc.Tensor:
    """``n_steps`` diffusion steps as a single graph node.

    The step operator is symmetric, so the adjoint with respect to ``x`` is
    the same diffusion applied to the upstream gradient. Intermediate states
    are only kept when the coefficients themselves need a gradient.
    """
    dtype = x.data.dtype
    ch, cv = _split(coef.data, x.data)
    lch = (lam * ch).astype(dtype)
    lcv = (lam * cv).astype(dtype)
    keep = coef.requires_grad
    states = []
    cur = x.data
    for _ in range(n_steps):
        if keep:
            states.append(cur)
        cur = _apply(cur, lch, lcv)

    def bwd(g):
        gcoef = np.zeros_like(coef.data) if keep else None
        if keep:
            gh_all, gv_all = _split(gcoef, x.data)
        for t in range(n_steps - 1, -1, -1):
            if keep:
                prev = states[t]
                gh_all += lam * (prev[..., :, 1:] - prev[..., :, :-1]) * (g[..., :, :-1] - g[..., :, 1:])
                gv_all += lam * (prev[..., 1:, :] - prev[..., :-1, :]) * (g[..., :-1, :] - g[..., 1:, :])
            g = _apply(g, lch, lcv)
        return g, gcoef

    return gc.custom_op("diffuse", cur, (x, coef), bwd)


def _guide_array(guide) -> np.ndarray:
    if isinstance(guide, GuideRaster):
        return guide.values
    if isinstance(guide, gc.Tensor):
        return guide.data
    return np.asarray(guide, dtype=np.float64)


def diffusion_step(state: DiffusionState, guide, params: DiffusionParams) -> DiffusionState:
    g = _guide_array(guide)
    if g.shape[-2:] != state.x.shape[-2:]:
        raise ShapeError(f"guide {g.shape} does not match image {state.x.shape}")
    coef = edge_coefficients_array(g, params.K)
    return DiffusionState(diffuse_array(state.x, coef, params.lam, 1), state.t + 1)


def run_diffusion(
    x0,
    guide=None,
    params: DiffusionParams = DiffusionParams(),
    *,
    coefficients=None,
    n_steps: int | None = None,
    n_grad: int | None = None,
):
    """Run the diffusion loop.

    ``x0`` may be a numpy array (plain evaluation) or a Tensor. For Tensors
    only the final ``n_grad`` steps are recorded on the graph; the earlier
    ones run detached. Coefficients are computed once from ``guide`` unless
    given explicitly (array or Tensor).
    """
    n_steps = params.n_steps_total if n_steps is None else n_steps
    n_grad = min(params.n_steps_grad if n_grad is None else n_grad, n_steps)
    if coefficients is None:
        if guide is None:
            raise InvalidInputError("run_diffusion needs a guide or explicit coefficients")
        g = _guide_array(guide)
        xs = x0.shape if not isinstance(x0, gc.Tensor) else x0.shape
        if g.shape[-2:] != xs[-2:]:
            raise ShapeError(f"guide {g.shape} does not match image {xs}")
        coefficients = edge_coefficients_array(g, params.K)

    if not isinstance(x0, gc.Tensor):
        c = coefficients.data if isinstance(coefficients, gc.Tensor) else coefficients
        return diffuse_array(np.asarray(x0), np.asarray(c), params.lam, n_steps)

    coef_t = coefficients if isinstance(coefficients, gc.Tensor) else gc.Tensor(coefficients, dtype=x0.data.dtype)
    tracked = x0.requires_grad or coef_t.requires_grad
    if not tracked:
        return gc.Tensor(diffuse_array(x0.data, coef_t.data, params.lam, n_steps), dtype=x0.data.dtype)
    x = x0
    pre = n_steps - n_grad
    if pre:
        x = gc.Tensor(diffuse_array(x0.data, coef_t.data, params.lam, pre), dtype=x0.data.dtype)
    return diffuse(x, coef_t, params.lam, n_grad)


class GuidedDiffusion:
    """Trainable wrapper around the diffusion loop.

    Output is ``x + gate * (diffuse(x) - x)`` with a scalar gate that starts
    at zero, so an untrained stage passes its input through unchanged. With
    ``learned_features`` a two-layer conv encoder maps the guide to the
    features the coefficients are computed from.
    """

    def __init__(self, params: DiffusionParams, guide_channels: int, seed: int = 0):
        self.params = params
        self.guide_channels = guide_channels
        self.gate = gc.Parameter("diffusion.gate", gc.Tensor(np.zeros((1, 1, 1, 1))))
        self.encoder: list[gc.Parameter] = []
        if params.learned_features:
            rng = np.random.Generator(np.random.Philox(key=seed + 7919))
            f = params.feature_channels
            for name, cin, cout in (("enc1", guide_channels, f), ("enc2", f, f)):
                bound = 1.0 / np.sqrt(cin * 9)
                self.encoder.append(gc.Parameter(
                    f"diffusion.{name}.weight", gc.Tensor(rng.uniform(-bound, bound, (cout, cin, 3, 3)))))
                self.encoder.append(gc.Parameter(f"diffusion.{name}.bias", gc.Tensor(np.zeros(cout))))

    def parameters(self) -> list[gc.Parameter]:
        return [self.gate, *self.encoder]

    def coefficients(self, guide: gc.Tensor) -> gc.Tensor:
        if not self.encoder:
            return gc.Tensor(edge_coefficients_array(guide.data, self.params.K), dtype=guide.data.dtype)
        w1, b1, w2, b2 = (p.tensor for p in self.encoder)
        feat = gc.conv2d(gc.relu(gc.conv2d(guide, w1, b1, padding=1)), w2, b2, padding=1)
        return edge_coefficients(feat, self.params.K)

    def __call__(self, x: gc.Tensor, guide: gc.Tensor, *, training: bool = False) -> gc.Tensor:
        p = self.params
        steps = p.n_steps_total if training else p.inference_steps
        n_grad = p.n_steps_grad if training else 0
        coef = self.coefficients(guide)
        if not training:
            coef = coef.detach()
        d = run_diffusion(x, params=p, coefficients=coef, n_steps=steps, n_grad=n_grad)
        return gc.add(x, gc.mul(self.gate.tensor, gc.sub(d, x)))
