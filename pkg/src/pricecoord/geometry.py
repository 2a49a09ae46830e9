"""Geometric learning of utility-gradient fields along trajectories.

Connection view: the observed field xi(t) = grad_u U at z(t) = (x(t), u(t))
is transported along the trajectory by an affine rule

    delta xi_j ~ Dz^T d_j + Dz^T Gamma_j xi_lift,   j = 1..d,

where Dz is the step z(t+1) - z(t), d_j collects the constant linear
coefficients, and Gamma_j is the Christoffel block for component j, treated
as locally constant (slowly varying utilities). The field has no
x-components, so its lift into the 2d-dimensional tangent is
xi_lift = (0, xi); the x-slot columns of each Gamma_j are therefore not
identifiable from trajectory data and the minimum-norm fit pins them to
zero. That gauge choice is safe: every prediction this module makes
contracts Gamma_j with a lifted field whose x-slots vanish.

For purely quadratic utilities the field is affine in z, so the fitted
Gamma_j vanish (flat case) and d stacks (-C, -D) from the gradient formula;
a genuinely state-coupled utility (cross terms x_i u^T K_i u) shows up as
nonzero Gamma.

Kernel view: a decomposable utility U(x, u) = U^x(x) + U^u(u) has
grad_u U(x, u) = B^T-free form B g(x) + h(u) with g = grad U^x, h = grad U^u
(B maps the state part through the dynamics). Both unknown fields are
represented in a scalar Gaussian kernel times identity and fitted jointly by
ridge least squares against observed prices. Only the sum B g(x) + h(u) is
identified: shifting g by a constant v and h by -B v changes nothing, and no
gauge is imposed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, RankDeficiencyError
from .model import LinearDynamics


@dataclass(frozen=True)
class TrajectorySample:
    """One trajectory point: base point z = (x, u) of length 2d and the
    observed gradient xi of length d (the posted price, at agent
    stationarity). segment groups consecutive points; differences are only
    formed within a segment."""

    z: np.ndarray
    xi: np.ndarray
    segment: int = 0

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float).ravel()
        xi = np.asarray(self.xi, dtype=float).ravel()
        if z.size != 2 * xi.size:
            raise ValueError(f"z has length {z.size}, expected twice xi's {xi.size}")
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(xi))):
            raise ValueError("trajectory sample contains non-finite values")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "xi", xi)


def _lift(xi: np.ndarray) -> np.ndarray:
    return np.concatenate([np.zeros_like(xi), xi])


@dataclass(frozen=True)
class ConnectionModel:
    """Fitted transport rule. d_mat stacks the d_j as rows (d x 2d); gammas
    stacks the Gamma_j (d x 2d x 2d, x-slot columns zero by gauge).
    residual is the RMS misfit of the difference equations; rank the
    achieved regressor rank."""

    d_mat: np.ndarray
    gammas: np.ndarray
    residual: float
    rank: int

    @property
    def d(self) -> int:
        return self.d_mat.shape[0]

    def gamma_frobenius(self) -> float:
        """max_j ||Gamma_j||_F; near zero exactly when transport is linear
        (flat case, e.g. quadratic utilities)."""
        return float(max(np.linalg.norm(g) for g in self.gammas))


def _difference_rows(samples: Sequence[TrajectorySample]):
    dz_rows, xi_rows, dxi_rows = [], [], []
    for a, b in zip(samples[:-1], samples[1:]):
        if a.segment != b.segment:
            continue
        dz_rows.append(b.z - a.z)
        xi_rows.append(a.xi)
        dxi_rows.append(b.xi - a.xi)
    return dz_rows, xi_rows, dxi_rows


def fit_connection(samples: Sequence[TrajectorySample]) -> ConnectionModel:
    """Least-squares fit of the transport coefficients from one window.

    Builds one difference row per consecutive same-segment pair, with
    regressors (Dz, kron(Dz, xi_lift)) against delta xi, and solves each
    component j by minimum-norm least squares. Requires at least
    2d + 4d^2 difference rows (the stacked unknown count per component) and
    full rank on the identifiable columns; raises RankDeficiencyError with
    the achieved rank otherwise.
    """
    if len(samples) < 2:
        raise RankDeficiencyError("need at least two samples", rank=0, required=1)
    d = samples[0].xi.size
    for s in samples:
        if s.xi.size != d:
            raise ValueError("samples disagree on dimension")
    dz_rows, xi_rows, dxi_rows = _difference_rows(samples)
    n_unknown = 2 * d + 4 * d * d           # stated stacking width per component
    n_ident = 2 * d + 2 * d * d             # identifiable after the lift gauge
    if len(dz_rows) < n_unknown:
        raise RankDeficiencyError(
            f"{len(dz_rows)} difference rows < {n_unknown} unknowns per component",
            rank=len(dz_rows), required=n_unknown)

    design = np.array([np.concatenate([dz, np.kron(dz, _lift(xi))])
                       for dz, xi in zip(dz_rows, xi_rows)])
    target = np.array(dxi_rows)             # (rows, d)

    sv = np.linalg.svd(design, compute_uv=False)
    rank = int(np.sum(sv > 1e-10 * sv[0])) if sv[0] > 0 else 0
    if rank < n_ident:
        raise RankDeficiencyError(
            f"transport regressors are rank-deficient: rank {rank} < {n_ident} "
            "identifiable columns (vary the trajectory directions)",
            rank=rank, required=n_ident)

    coeffs, *_ = np.linalg.lstsq(design, target, rcond=1e-10)  # (2d+4d^2, d)
    d_mat = coeffs[:2 * d].T
    gammas = np.array([coeffs[2 * d:, j].reshape(2 * d, 2 * d) for j in range(d)])
    residual = float(np.sqrt(np.mean((design @ coeffs - target) ** 2)))
    return ConnectionModel(d_mat=d_mat, gammas=gammas, residual=residual, rank=rank)


def sliding_connection(samples: Sequence[TrajectorySample], window: int = 50,
                       stride: Optional[int] = None):
    """Fits one ConnectionModel per sliding window of `window` samples
    (stride defaults to the window, i.e. non-overlapping). Returns a list of
    (start_index, model). Windows without enough difference rows are
    skipped; treating the symbols as constant only within a window is what
    lets slowly varying utilities pass through the constant-coefficient fit."""
    if window < 2:
        raise ValueError("window must be >= 2")
    stride = window if stride is None else stride
    out = []
    for start in range(0, max(len(samples) - window + 1, 1), stride):
        chunk = samples[start:start + window]
        if len(chunk) < 2:
            break
        try:
            out.append((start, fit_connection(chunk)))
        except RankDeficiencyError:
            continue
    return out


def transport(model: ConnectionModel, z, xi, dz) -> np.ndarray:
    """Transports the field value xi at z along the step dz:
    xi + [dz^T d_j + dz^T Gamma_j xi_lift]_j. Linear in dz for fixed xi and
    affine in xi for fixed dz, by construction. z is accepted for interface
    symmetry; locally constant coefficients do not use it."""
    xi = np.asarray(xi, dtype=float).ravel()
    dz = np.asarray(dz, dtype=float).ravel()
    if xi.size != model.d or dz.size != 2 * model.d:
        raise ValueError("dimension mismatch with the fitted model")
    lifted = _lift(xi)
    corr = model.d_mat @ dz + np.array([dz @ g @ lifted for g in model.gammas])
    return xi + corr


def predict_delta(model: ConnectionModel, xi, dz) -> np.ndarray:
    """The increment transport adds: transport(model, z, xi, dz) - xi."""
    return transport(model, None, xi, dz) - np.asarray(xi, dtype=float).ravel()


# ---------------------------------------------------------------------------
# decomposable utilities via matrix-valued kernel regression

@dataclass(frozen=True)
class KernelFieldModel:
    """Gaussian-kernel representation of the decomposed gradient field:
    g(x) = sum_i k(x, centers_x[i]) coeff_x[i] and likewise h(u); the
    identified object is B g(x) + h(u) (see module docstring on gauge)."""

    centers_x: np.ndarray
    coeff_x: np.ndarray
    centers_u: np.ndarray
    coeff_u: np.ndarray
    sigma: float
    ridge: float

    def __post_init__(self):
        if not (len(self.centers_x) == len(self.coeff_x)
                and len(self.centers_u) == len(self.coeff_u)):
            raise ValueError("centers and coefficients disagree in length")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")


def gaussian_kernel(A, B_pts, sigma: float) -> np.ndarray:
    """k(a, b) = exp(-||a - b||^2 / (2 sigma^2)) for all pairs; (len A, len B)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B_pts = np.atleast_2d(np.asarray(B_pts, dtype=float))
    sq = np.sum((A[:, None, :] - B_pts[None, :, :]) ** 2, axis=2)
    return np.exp(-sq / (2.0 * sigma * sigma))


def median_pairwise(points) -> float:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] < 2:
        return 1.0
    diffs = pts[:, None, :] - pts[None, :, :]
    dists = np.sqrt(np.sum(diffs ** 2, axis=2))
    vals = dists[np.triu_indices(pts.shape[0], k=1)]
    vals = vals[vals > 0]
    return float(np.median(vals)) if vals.size else 1.0


def _as_xup(samples):
    if isinstance(samples, tuple) and len(samples) == 3:
        X, U, P = samples
    else:
        X = [s[0] for s in samples]
        U = [s[1] for s in samples]
        P = [s[2] for s in samples]
    X = np.atleast_2d(np.asarray(X, dtype=float))
    U = np.atleast_2d(np.asarray(U, dtype=float))
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if not (X.shape == U.shape == P.shape):
        raise ValueError("x, u, p samples must share one shape")
    return X, U, P


def fit_decomposable(samples, dyn: LinearDynamics, sigma: Optional[float] = None,
                     ridge: Optional[float] = None) -> KernelFieldModel:
    """Fits the decomposable-gradient model to (x, u, p) samples.

    Minimizes sum_i ||B g(x_i) + h(u_i) - p_i||^2 + ridge ||c||^2 over the
    kernel coefficients of g and h jointly (one ridge system; the
    Kronecker-structured design is small for the intended sample counts).
    sigma defaults to the median pairwise distance over the pooled x and u
    centers; ridge defaults to 1e-8 times the Gram trace. ridge = 0 is
    accepted only while the unregularized system has full column rank
    (duplicate centers break that).
    """
    X, U, P = _as_xup(samples)
    m, d = X.shape
    if m < 2:
        raise ValueError("need at least 2 samples")
    if sigma is None:
        sigma = float(np.median([median_pairwise(X), median_pairwise(U)]))
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    Kx = gaussian_kernel(X, X, sigma)
    Ku = gaussian_kernel(U, U, sigma)
    if ridge is None:
        ridge = 1e-8 * float(np.trace(Kx) + np.trace(Ku))
    if ridge < 0:
        raise ValueError("ridge must be non-negative")

    design = np.hstack([np.kron(Kx, dyn.B), np.kron(Ku, np.eye(d))])  # (md, 2md)
    y = P.ravel()
    if ridge == 0.0:
        if np.linalg.matrix_rank(design) < design.shape[1]:
            raise np.linalg.LinAlgError(
                "unregularized kernel system is singular (duplicate centers?); use ridge > 0")
        coeffs, *_ = np.linalg.lstsq(design, y, rcond=None)
    else:
        aug = np.vstack([design, np.sqrt(ridge) * np.eye(design.shape[1])])
        yaug = np.concatenate([y, np.zeros(design.shape[1])])
        coeffs, *_ = np.linalg.lstsq(aug, yaug, rcond=None)

    cx = coeffs[:m * d].reshape(m, d)
    cu = coeffs[m * d:].reshape(m, d)
    return KernelFieldModel(centers_x=X.copy(), coeff_x=cx, centers_u=U.copy(),
                            coeff_u=cu, sigma=float(sigma), ridge=float(ridge))


def predict_field(model: KernelFieldModel, dyn: LinearDynamics, x, u) -> np.ndarray:
    """B g(x) + h(u) under the fitted model."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    gx = gaussian_kernel(x, model.centers_x, model.sigma) @ model.coeff_x
    hu = gaussian_kernel(u, model.centers_u, model.sigma) @ model.coeff_u
    out = gx @ dyn.B.T + hu
    return out[0] if out.shape[0] == 1 else out


def kernel_fit_residual(model: KernelFieldModel, dyn: LinearDynamics, samples) -> float:
    """RMS training error of a fitted model on (x, u, p) samples."""
    X, U, P = _as_xup(samples)
    pred = np.atleast_2d(predict_field(model, dyn, X, U))
    return float(np.sqrt(np.mean((pred - P) ** 2)))


# ---------------------------------------------------------------------------
# serialization: ObservationLog schema plus a dflag column

def save_samples(samples: Sequence[TrajectorySample], path, agent: int = 0) -> None:
    """Writes trajectory samples as CSV rows t,n,x_*,u_*,p_* plus dflag.

    x and u are the two halves of z, p is xi. dflag is 1 when the row
    continues the previous row's segment (its difference is usable) and 0 at
    segment starts.
    """
    from .parametric import csv_header
    if not samples:
        raise ValueError("no samples to save")
    d = samples[0].xi.size
    lines = [csv_header(d) + ",dflag"]
    prev_seg = None
    for i, s in enumerate(samples):
        flag = 1 if prev_seg is not None and s.segment == prev_seg else 0
        vals = [str(i), str(agent)]
        vals += [f"{v:.17g}" for v in s.z[:d]]
        vals += [f"{v:.17g}" for v in s.z[d:]]
        vals += [f"{v:.17g}" for v in s.xi]
        vals.append(str(flag))
        lines.append(",".join(vals))
        prev_seg = s.segment
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_samples(path) -> list:
    """Reads trajectory samples written by save_samples; segments are
    reconstructed from the dflag column. Raises ConfigError naming the
    offending line on malformed input."""
    from .parametric import csv_header
    with open(path) as fh:
        lines = [ln for ln in (raw.strip() for raw in fh) if ln]
    if not lines:
        raise ConfigError(f"{path}: empty CSV")
    header = lines[0].split(",")
    if len(header) < 6 or header[-1] != "dflag" or (len(header) - 3) % 3 != 0:
        raise ConfigError(f"{path}: line 1: malformed header {lines[0]!r}")
    d = (len(header) - 3) // 3
    if header != (csv_header(d) + ",dflag").split(","):
        raise ConfigError(f"{path}: line 1: header does not match the sample schema")
    out = []
    segment = -1
    for idx, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != 3 + 3 * d:
            raise ConfigError(f"{path}: line {idx}: expected {3 + 3 * d} fields, got {len(parts)}")
        try:
            vals = [float(v) for v in parts[2:2 + 3 * d]]
            flag = int(parts[-1])
        except ValueError as exc:
            raise ConfigError(f"{path}: line {idx}: unparseable field ({exc})") from None
        if flag not in (0, 1):
            raise ConfigError(f"{path}: line {idx}: dflag must be 0 or 1")
        if flag == 0:
            segment += 1
        out.append(TrajectorySample(z=np.array(vals[:2 * d]), xi=np.array(vals[2 * d:]),
                                    segment=segment))
    if not out:
        raise ConfigError(f"{path}: no data rows")
    return out
