"""Differentially private low-rank matrix completion.

Two alternating solvers estimate factors U (m x r) and V (n x r) of a
partially observed matrix X: noisy alternating least squares, and an
alternating scheme whose column updates run regularized IRLS under the Huber
loss. Both protect the user rows by injecting mechanism noise only into the
column-factor updates; the row half-sweep never touches the noise stream,
which the draw counters make auditable.

Per-column noise is drawn from streams derived by a counter-based split
(solver entropy, sweep index, column index), so results are independent of
the order in which columns are processed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mechanisms import (
    UNIT_VARIANCE_ALPHA,
    MechanismConfig,
    huber_alpha_for_variance,
    sample,
)
from .robust_solvers import ZERO_RESIDUAL_TOL

__all__ = [
    "ObservedMatrix",
    "FactorPair",
    "SolverConfig",
    "DrawCounters",
    "row_index_sets",
    "noisy_als",
    "irls_huber",
    "rmse",
    "complete",
    "completion_objective",
    "resolve_loss_alpha",
]


@dataclass(frozen=True, eq=False)
class ObservedMatrix:
    """A partially observed m x n matrix stored as coordinate triplets.

    rows, cols, values are parallel arrays over the observed index set; no
    duplicate coordinate is allowed. value_range is the nominal ratings scale
    (lo, hi), kept as metadata for clipping and sensitivity assumptions; the
    stored values themselves are not forced into it.
    """

    m: int
    n: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    value_range: tuple[float, float] = (1.0, 5.0)

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("matrix dimensions must be >= 1")
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.int64)
        values = np.asarray(self.values, dtype=float)
        if not (rows.shape == cols.shape == values.shape) or rows.ndim != 1:
            raise ValueError("rows, cols, values must be 1-d arrays of equal length")
        if rows.size:
            if rows.min() < 0 or rows.max() >= self.m:
                raise ValueError("row index out of range")
            if cols.min() < 0 or cols.max() >= self.n:
                raise ValueError("column index out of range")
            flat = rows * self.n + cols
            if np.unique(flat).size != flat.size:
                raise ValueError("duplicate (row, col) coordinates")
        if not np.all(np.isfinite(values)):
            raise ValueError("observed values must be finite")
        lo, hi = self.value_range
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise ValueError("value_range must satisfy lo < hi")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "value_range", (float(lo), float(hi)))

    @classmethod
    def from_entries(cls, m, n, entries, value_range=(1.0, 5.0)) -> "ObservedMatrix":
        """Build from an iterable of (i, j, value) triplets."""
        entries = list(entries)
        if entries:
            rows, cols, values = (np.asarray(x) for x in zip(*entries))
        else:
            rows = cols = values = np.empty(0)
        return cls(m, n, rows, cols, values, value_range)

    @classmethod
    def from_dense(cls, x, value_range=(1.0, 5.0)) -> "ObservedMatrix":
        """Fully observed view of a dense matrix."""
        x = np.asarray(x, dtype=float)
        m, n = x.shape
        rows, cols = np.divmod(np.arange(m * n), n)
        return cls(m, n, rows, cols, x.ravel().copy(), value_range)

    @property
    def n_observed(self) -> int:
        return int(self.rows.size)

    @property
    def observed_fraction(self) -> float:
        return self.rows.size / (self.m * self.n)

    @property
    def entries(self) -> list[tuple[int, int, float]]:
        return [
            (int(i), int(j), float(v))
            for i, j, v in zip(self.rows, self.cols, self.values)
        ]


@dataclass(eq=False)
class FactorPair:
    """Low-rank factors U (m x r) and V (n x r) of the estimate U V^T."""

    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.U, dtype=float)
        v = np.asarray(self.V, dtype=float)
        if u.ndim != 2 or v.ndim != 2 or u.shape[1] != v.shape[1]:
            raise ValueError("U and V must be 2-d with equal column counts")
        if u.shape[1] > min(u.shape[0], v.shape[0]):
            raise ValueError("rank exceeds min(m, n)")
        self.U = u
        self.V = v

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    def predict_entries(self, rows, cols) -> np.ndarray:
        """Entry-wise predictions (U V^T)[rows, cols] without forming U V^T."""
        return np.einsum("er,er->e", self.U[rows], self.V[cols])


@dataclass(frozen=True)
class SolverConfig:
    """Shared configuration of the completion solvers.

    outer_iterations is the number of alternating sweeps (T for ALS, N for
    the IRLS variant); inner_iterations the IRLS iteration count K.
    huber_loss_alpha overrides the loss transition used by the IRLS solver;
    when None it defaults to the mechanism's own alpha for Huber noise, to
    the alpha calibrated to the noise variance for Laplace/Gaussian noise,
    and to UNIT_VARIANCE_ALPHA without noise.
    """

    rank: int
    lam: float = 0.5
    outer_iterations: int = 50
    inner_iterations: int = 20
    huber_loss_alpha: float | None = None
    mechanism: MechanismConfig = MechanismConfig.none()
    seed: int = 0
    trials: int = 1
    clip: bool = False

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if not math.isfinite(self.lam) or self.lam <= 0:
            raise ValueError("lam must be > 0")
        if self.outer_iterations < 1 or self.inner_iterations < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.huber_loss_alpha is not None and self.huber_loss_alpha <= 0:
            raise ValueError("huber_loss_alpha must be positive")


@dataclass
class DrawCounters:
    """Count of mechanism noise values consumed per half-sweep kind."""

    u_sweep: int = 0
    v_sweep: int = 0


def resolve_loss_alpha(config: SolverConfig) -> float:
    """Huber-loss transition used by the IRLS solver under this config."""
    if config.huber_loss_alpha is not None:
        return config.huber_loss_alpha
    mech = config.mechanism
    if mech.kind == "huber":
        return mech.scale
    if mech.kind == "none":
        return UNIT_VARIANCE_ALPHA
    return huber_alpha_for_variance(mech.variance())[0]


def row_index_sets(obs: ObservedMatrix) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Observed column indices per row and observed row indices per column."""
    by_row = np.argsort(obs.rows, kind="stable")
    row_ptr = np.concatenate(([0], np.cumsum(np.bincount(obs.rows, minlength=obs.m))))
    row_sets = [
        obs.cols[by_row[row_ptr[i] : row_ptr[i + 1]]] for i in range(obs.m)
    ]
    by_col = np.argsort(obs.cols, kind="stable")
    col_ptr = np.concatenate(([0], np.cumsum(np.bincount(obs.cols, minlength=obs.n))))
    col_sets = [
        obs.rows[by_col[col_ptr[j] : col_ptr[j + 1]]] for j in range(obs.n)
    ]
    return row_sets, col_sets


# ---------------------------------------------------------------------------
# Batched half-sweep engine
# ---------------------------------------------------------------------------
# Targets (rows in the U half-sweep, columns in the V half-sweep) are grouped
# by observation count so each group solves a stack of identically shaped
# r x r systems in one LAPACK call. Per-target results are identical to
# solving each system on its own.


def _target_groups(target_idx, other_idx, values, num_targets):
    counts = np.bincount(target_idx, minlength=num_targets)
    order = np.argsort(target_idx, kind="stable")
    ptr = np.concatenate(([0], np.cumsum(counts)))
    groups = []
    for c in np.unique(counts):
        ids = np.flatnonzero(counts == c)
        if c == 0:
            groups.append((0, ids, None, None))
            continue
        entry = order[ptr[ids][:, None] + np.arange(c)[None, :]]
        groups.append((int(c), ids, other_idx[entry], values[entry]))
    return groups


def _ridge_sweep(groups, other, lam, noise, num_targets):
    r = other.shape[1]
    out = np.empty((num_targets, r))
    lam_eye = lam * np.eye(r)
    for c, ids, oidx, vals in groups:
        if c == 0:
            out[ids] = 0.0 if noise is None else noise[ids] / lam
            continue
        ag = other[oidx]
        gram = np.einsum("gci,gcj->gij", ag, ag) + lam_eye
        rhs = np.einsum("gci,gc->gi", ag, vals)
        if noise is not None:
            rhs = rhs + noise[ids]
        out[ids] = np.linalg.solve(gram, rhs[:, :, None])[:, :, 0]
    return out


def _irls_sweep(groups, other, lam, alpha, iterations, init, noise, num_targets):
    r = other.shape[1]
    out = np.empty((num_targets, r))
    lam_eye = lam * np.eye(r)
    for c, ids, oidx, vals in groups:
        theta = init[ids]
        if c == 0:
            if noise is not None:
                theta = noise[ids, -1] / lam
            else:
                theta = np.zeros((len(ids), r))
            out[ids] = theta
            continue
        ag = other[oidx]
        for k in range(iterations):
            resid = vals - np.einsum("gcr,gr->gc", ag, theta)
            absr = np.abs(resid)
            w = np.ones_like(resid)
            big = absr >= ZERO_RESIDUAL_TOL
            w[big] = np.minimum(1.0, alpha / absr[big])
            aw = ag * w[:, :, None]
            gram = np.einsum("gci,gcj->gij", aw, ag) + lam_eye
            rhs = np.einsum("gci,gc->gi", aw, vals)
            if noise is not None:
                rhs = rhs + noise[ids, k]
            theta = np.linalg.solve(gram, rhs[:, :, None])[:, :, 0]
        out[ids] = theta
    return out


def _column_stream(e0: int, e1: int, sweep: int, col: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((e0, e1, sweep, col)))


def _als_sweep_noise(mech, e0, e1, sweep, n, r):
    noise = np.empty((n, r))
    for j in range(n):
        stream = _column_stream(e0, e1, sweep, j)
        noise[j] = sample(mech, r, stream, seed_info=f"sweep={sweep} col={j}").values
    return noise, n * r


def _irls_column_draws(mech, e0, e1, sweep, n, iterations, r):
    """Per-column initialization and per-iteration noise, drawn in the same
    order r_irls consumes its stream: init first, then one draw per
    iteration."""
    init = np.empty((n, r))
    draw_noise = mech.kind != "none"
    noise = np.empty((n, iterations, r)) if draw_noise else None
    for j in range(n):
        stream = _column_stream(e0, e1, sweep, j)
        init[j] = stream.standard_normal(r)
        if draw_noise:
            for k in range(iterations):
                noise[j, k] = sample(mech, r, stream, seed_info=f"sweep={sweep} col={j} iter={k}").values
    consumed = n * iterations * r if draw_noise else 0
    return init, noise, consumed


def _prepare(obs, config, rng, init):
    rng = np.random.default_rng(config.seed if rng is None else rng)
    r = config.rank
    if r > min(obs.m, obs.n):
        raise ValueError("rank exceeds min(m, n)")
    if init is None:
        u = rng.standard_normal((obs.m, r)) / math.sqrt(r)
        v = rng.standard_normal((obs.n, r)) / math.sqrt(r)
    else:
        if init.U.shape != (obs.m, r) or init.V.shape != (obs.n, r):
            raise ValueError("init factors have wrong shape")
        u = init.U.copy()
        v = init.V.copy()
    e0, e1 = (int(x) for x in rng.integers(0, 2**63, size=2))
    row_groups = _target_groups(obs.rows, obs.cols, obs.values, obs.m)
    col_groups = _target_groups(obs.cols, obs.rows, obs.values, obs.n)
    return rng, u, v, e0, e1, row_groups, col_groups


def noisy_als(
    obs: ObservedMatrix,
    config: SolverConfig,
    rng=None,
    *,
    counters: DrawCounters | None = None,
    init: FactorPair | None = None,
    history: list[float] | None = None,
) -> FactorPair:
    """Alternating least squares with noise in the column updates.

    Each sweep solves the ridge update for every row of U against the fixed
    V, then for every column of V against the fixed U with a mechanism noise
    vector added to the normal-equation right-hand side. rng may be a seed or
    Generator; omitted, config.seed is used. history, when given a list,
    receives the regularized completion objective after every half-sweep.
    """
    rng, u, v, e0, e1, row_groups, col_groups = _prepare(obs, config, rng, init)
    mech = config.mechanism
    for sweep in range(config.outer_iterations):
        u = _ridge_sweep(row_groups, v, config.lam, None, obs.m)
        if history is not None:
            history.append(completion_objective(obs, u, v, config.lam))
        noise = None
        if mech.kind != "none":
            noise, consumed = _als_sweep_noise(mech, e0, e1, sweep, obs.n, config.rank)
            if counters is not None:
                counters.v_sweep += consumed
        v = _ridge_sweep(col_groups, u, config.lam, noise, obs.n)
        if history is not None:
            history.append(completion_objective(obs, u, v, config.lam))
    return FactorPair(u, v)


def irls_huber(
    obs: ObservedMatrix,
    config: SolverConfig,
    rng=None,
    *,
    counters: DrawCounters | None = None,
    init: FactorPair | None = None,
    history: list[float] | None = None,
) -> FactorPair:
    """Alternating completion solver with IRLS column updates.

    Rows of U are updated by plain (noiseless) least squares; each column of
    V is re-estimated by regularized IRLS under the Huber loss, drawing a
    fresh noise vector inside every inner iteration, exactly as r_irls does
    with a per-column stream.
    """
    rng, u, v, e0, e1, row_groups, col_groups = _prepare(obs, config, rng, init)
    mech = config.mechanism
    alpha = resolve_loss_alpha(config)
    k_iters = config.inner_iterations
    for sweep in range(config.outer_iterations):
        u = _ridge_sweep(row_groups, v, config.lam, None, obs.m)
        if history is not None:
            history.append(completion_objective(obs, u, v, config.lam))
        init_mat, noise, consumed = _irls_column_draws(
            mech, e0, e1, sweep, obs.n, k_iters, config.rank
        )
        if counters is not None:
            counters.v_sweep += consumed
        v = _irls_sweep(col_groups, u, config.lam, alpha, k_iters, init_mat, noise, obs.n)
        if history is not None:
            history.append(completion_objective(obs, u, v, config.lam))
    return FactorPair(u, v)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def rmse(truth, factors: FactorPair, scope: str = "all_entries") -> float:
    """Root mean squared error of the factorization.

    scope "all_entries": truth must be the dense ground-truth matrix; returns
    ||X - U V^T||_F / sqrt(m n). scope "observed": truth must be an
    ObservedMatrix; returns the RMSE over its entries only (use a held-out
    split for test error on real data).
    """
    if scope == "all_entries":
        if isinstance(truth, ObservedMatrix):
            raise ValueError(
                "all_entries scope needs the dense ground-truth matrix; "
                "pass an ObservedMatrix with scope='observed'"
            )
        x = np.asarray(truth, dtype=float)
        if x.shape != (factors.U.shape[0], factors.V.shape[0]):
            raise ValueError("truth shape does not match the factors")
        return float(np.linalg.norm(x - factors.U @ factors.V.T) / math.sqrt(x.size))
    if scope == "observed":
        if not isinstance(truth, ObservedMatrix):
            raise ValueError("observed scope needs an ObservedMatrix")
        if truth.n_observed == 0:
            raise ValueError("cannot compute RMSE over an empty index set")
        err = truth.values - factors.predict_entries(truth.rows, truth.cols)
        return float(math.sqrt(np.mean(err * err)))
    raise ValueError(f"unknown scope {scope!r}")


def complete(obs: ObservedMatrix, factors: FactorPair, clip: bool = False) -> np.ndarray:
    """Dense completed matrix U V^T, optionally clipped to obs.value_range."""
    if factors.U.shape[0] != obs.m or factors.V.shape[0] != obs.n:
        raise ValueError("factor shapes do not match the observed matrix")
    z = factors.U @ factors.V.T
    if clip:
        lo, hi = obs.value_range
        np.clip(z, lo, hi, out=z)
    return z


def completion_objective(obs: ObservedMatrix, u, v, lam: float) -> float:
    """Regularized masked least-squares objective
    ||P_Omega(X - U V^T)||_F^2 + lam (||U||_F^2 + ||V||_F^2)."""
    pred = np.einsum("er,er->e", u[obs.rows], v[obs.cols])
    resid = obs.values - pred
    return float(resid @ resid + lam * ((u * u).sum() + (v * v).sum()))
