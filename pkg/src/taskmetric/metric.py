"""Per-episode metric construction.

From one episode this module builds must-link and cannot-link pairs,
averages their difference outer products into scatter matrices, estimates
the transductive task covariance, and assembles the adapted metric in
closed form:

    Y = prior_inv + gamma * m_tilde - gamma * lam * c_tilde
    M = Y^-1 + alpha * covariance

``Y^-1`` is the unique minimizer of ``tr(M Y) - log det M`` over the
positive-definite cone, so a projected-gradient reference solver is
provided to cross-check the closed form. Loss evaluators, a metric
factorization and a diagonal-dominance diagnostic round out the module.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

from .data import Episode, MetricHyperParams, MetricMatrix, PrototypeBank
from .errors import (
    ConstraintError,
    DataFormatError,
    NumericalError,
    ParameterError,
    SamplingError,
)

_QUADFORM_TOL = -1e-9


@dataclass(frozen=True)
class ConstraintSets:
    """Must-link and cannot-link vector pairs, stored side by side as
    (n, d) left/right arrays."""

    must_left: np.ndarray
    must_right: np.ndarray
    cannot_left: np.ndarray
    cannot_right: np.ndarray

    @property
    def n_must(self) -> int:
        return self.must_left.shape[0]

    @property
    def n_cannot(self) -> int:
        return self.cannot_left.shape[0]

    def must_diffs(self) -> np.ndarray:
        return self.must_left - self.must_right

    def cannot_diffs(self) -> np.ndarray:
        return self.cannot_left - self.cannot_right


@dataclass(frozen=True)
class ScatterPair:
    """Mean outer products of pair differences over the two constraint sets."""

    m_tilde: np.ndarray
    c_tilde: np.ndarray

    @property
    def dim(self) -> int:
        return self.m_tilde.shape[0]


def compute_prototypes(support_x: np.ndarray, support_y: np.ndarray) -> np.ndarray:
    """Arithmetic mean of each class's support vectors, in class-index order.

    Returns an (N, d) array whose row c is the prototype of class c.
    """
    support_x = np.asarray(support_x, dtype=np.float64)
    support_y = np.asarray(support_y)
    n_way = int(support_y.max()) + 1
    protos = np.empty((n_way, support_x.shape[1]))
    for c in range(n_way):
        rows = support_x[support_y == c]
        if rows.shape[0] == 0:
            raise ParameterError(f"class {c} has no support rows")
        protos[c] = rows.mean(axis=0)
    return protos


def episode_prototypes(episode: Episode) -> np.ndarray:
    return compute_prototypes(episode.support_x, episode.support_y)


def build_constraints(
    episode: Episode,
    prototypes: np.ndarray,
    bank: PrototypeBank | None = None,
    knn_k: int = 3,
    transductive: bool = True,
) -> ConstraintSets:
    """Assemble the pairwise constraint sets of one episode.

    Must-link: all same-class support pairs, every support point with its
    class prototype, and (transductively) each support point with its
    ``knn_k`` Euclidean nearest neighbors in the query-plus-unlabeled pool.
    Cannot-link: all cross-class prototype pairs plus every prototype
    against every bank anchor.
    """
    prototypes = np.asarray(prototypes, dtype=np.float64)
    sx, sy = episode.support_x, episode.support_y
    n_way = episode.n_way
    if prototypes.shape != (n_way, episode.dim):
        raise ParameterError(
            f"prototypes shape {prototypes.shape} does not match episode ({n_way}, {episode.dim})"
        )

    must_l, must_r = [], []
    for c in range(n_way):
        rows = np.flatnonzero(sy == c)
        for i, j in combinations(rows, 2):
            must_l.append(sx[i])
            must_r.append(sx[j])
    for i in range(sx.shape[0]):
        must_l.append(sx[i])
        must_r.append(prototypes[sy[i]])

    if transductive:
        pool = np.concatenate([episode.query_x, episode.unlabeled_x], axis=0)
        if knn_k > pool.shape[0]:
            raise ParameterError(
                f"knn_k={knn_k} exceeds the transductive pool of {pool.shape[0]} points"
            )
        for i in range(sx.shape[0]):
            d2 = np.sum((pool - sx[i]) ** 2, axis=1)
            nearest = np.argsort(d2, kind="stable")[:knn_k]
            for q in nearest:
                must_l.append(sx[i])
                must_r.append(pool[q])

    cannot_l, cannot_r = [], []
    for c, c2 in combinations(range(n_way), 2):
        cannot_l.append(prototypes[c])
        cannot_r.append(prototypes[c2])
    if bank is not None and len(bank):
        anchors = bank.vectors()
        if anchors.shape[1] != episode.dim:
            raise ParameterError(
                f"bank dimension {anchors.shape[1]} does not match episode dimension {episode.dim}"
            )
        for c in range(n_way):
            for b in anchors:
                cannot_l.append(prototypes[c])
                cannot_r.append(b)

    d = episode.dim
    return ConstraintSets(
        np.asarray(must_l).reshape(-1, d),
        np.asarray(must_r).reshape(-1, d),
        np.asarray(cannot_l).reshape(-1, d),
        np.asarray(cannot_r).reshape(-1, d),
    )


def scatter_matrices(cs: ConstraintSets) -> ScatterPair:
    """Average the outer products of pair differences.

    Zero-difference must-link pairs (a 1-shot point paired with its own
    prototype) carry no information and are dropped before averaging; if
    nothing remains the must scatter is the zero matrix.
    """
    if cs.n_must == 0 or cs.n_cannot == 0:
        raise ConstraintError("both constraint sets must be non-empty")
    md = cs.must_diffs()
    nonzero = np.any(md != 0.0, axis=1)
    md = md[nonzero]
    d = cs.must_left.shape[1]
    if md.shape[0] == 0:
        m_tilde = np.zeros((d, d))
    else:
        m_tilde = md.T @ md / md.shape[0]
        m_tilde = (m_tilde + m_tilde.T) / 2.0
    cd = cs.cannot_diffs()
    c_tilde = cd.T @ cd / cd.shape[0]
    c_tilde = (c_tilde + c_tilde.T) / 2.0
    return ScatterPair(m_tilde, c_tilde)


def task_covariance(episode: Episode) -> np.ndarray:
    """Unbiased sample covariance over support, query and unlabeled points."""
    x = episode.all_points()
    n = x.shape[0]
    if n < 2:
        raise SamplingError(f"covariance needs at least 2 points, episode has {n}")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    return (cov + cov.T) / 2.0


def closed_form_metric(
    sp: ScatterPair,
    cov: np.ndarray | None,
    hp: MetricHyperParams,
) -> MetricMatrix:
    """Assemble the adapted metric in closed form.

    Inverts ``Y = prior_inv + gamma * m_tilde - gamma * lam * c_tilde`` and
    adds ``alpha`` times the task covariance. If the cannot-link term
    pushes Y's smallest eigenvalue under ``pd_floor``, Y is shifted back
    onto the cone by ``(pd_floor - min_eig) * I``; the shift is recorded on
    the returned metric rather than raised.
    """
    d = sp.dim
    y = hp.prior_inverse(d) + hp.gamma * sp.m_tilde - hp.gamma * hp.lam * sp.c_tilde
    y = (y + y.T) / 2.0
    min_eig = float(np.linalg.eigvalsh(y).min())
    shift = 0.0
    if min_eig < hp.pd_floor:
        shift = hp.pd_floor - min_eig
        y = y + shift * np.eye(d)
    m = np.linalg.inv(y)
    if cov is not None:
        cov = np.asarray(cov, dtype=np.float64)
        if cov.shape != (d, d):
            raise ParameterError(f"covariance shape {cov.shape} does not match dim {d}")
        m = m + hp.alpha * cov
    m = (m + m.T) / 2.0
    return MetricMatrix(m, shift_applied=shift)


def episode_metric(
    episode: Episode,
    hp: MetricHyperParams,
    bank: PrototypeBank | None = None,
    transductive: bool = True,
) -> MetricMatrix:
    """Full per-episode pipeline: prototypes, constraints, scatter,
    covariance, closed form."""
    protos = episode_prototypes(episode)
    cs = build_constraints(episode, protos, bank=bank, knn_k=hp.knn_k, transductive=transductive)
    sp = scatter_matrices(cs)
    cov = task_covariance(episode) if hp.alpha > 0 else None
    return closed_form_metric(sp, cov, hp)


def metric_distance(m: MetricMatrix, x_i: np.ndarray, x_j: np.ndarray) -> float:
    """Mahalanobis distance sqrt((x_i - x_j)^T M (x_i - x_j))."""
    diff = np.asarray(x_i, dtype=np.float64) - np.asarray(x_j, dtype=np.float64)
    if diff.shape != (m.dim,):
        raise ParameterError(f"vectors must be {m.dim}-dimensional")
    q = float(diff @ m.matrix @ diff)
    if q < _QUADFORM_TOL:
        raise NumericalError(f"quadratic form came out {q:.3e} under a PD metric")
    return float(np.sqrt(max(q, 0.0)))


def pairwise_distances(
    m: MetricMatrix, a: np.ndarray, b: np.ndarray, squared: bool = False
) -> np.ndarray:
    """All distances between rows of ``a`` and rows of ``b``, shape (na, nb)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[1] != m.dim or b.shape[1] != m.dim:
        raise ParameterError("row dimension does not match the metric")
    am = a @ m.matrix
    qa = np.einsum("ij,ij->i", am, a)
    qb = np.einsum("ij,ij->i", b @ m.matrix, b)
    d2 = qa[:, None] + qb[None, :] - 2.0 * (am @ b.T)
    low = float(d2.min(initial=0.0))
    if low < _QUADFORM_TOL * max(1.0, float(np.abs(d2).max(initial=1.0))):
        raise NumericalError(f"squared distance came out {low:.3e} under a PD metric")
    d2 = np.maximum(d2, 0.0)
    return d2 if squared else np.sqrt(d2)


def pair_loss(m: MetricMatrix, sp: ScatterPair, lam: float) -> float:
    """tr(M m_tilde) - lam * tr(M c_tilde); equals the mean squared
    must-link distance minus lam times the mean squared cannot-link
    distance."""
    return float(np.sum(m.matrix * sp.m_tilde) - lam * np.sum(m.matrix * sp.c_tilde))


def _logdet_pd(m: np.ndarray) -> float:
    sign, logdet = np.linalg.slogdet(m)
    if sign <= 0:
        raise NumericalError("log det undefined: matrix is not positive definite")
    return float(logdet)


def reg_loss(m: MetricMatrix, prior: np.ndarray | None = None) -> float:
    """Prior-anchored regularizer tr(prior^-1 M) - log det M (the additive
    constant depending only on the prior is dropped)."""
    if prior is None:
        trace_term = float(np.trace(m.matrix))
    else:
        prior = np.asarray(prior, dtype=np.float64)
        if prior.shape != m.matrix.shape:
            raise ParameterError("prior shape does not match the metric")
        trace_term = float(np.sum(np.linalg.inv(prior).T * m.matrix))
    return trace_term - _logdet_pd(m.matrix)


def metric_objective(m: MetricMatrix, sp: ScatterPair, hp: MetricHyperParams) -> float:
    """The full construction objective: regularizer plus gamma times the
    pair loss.

    Evaluated two ways, as the composed sum and as the single-trace
    reformulation tr(M (prior_inv + gamma m_tilde - gamma lam c_tilde)) -
    log det M; a disagreement beyond 1e-9 relative raises, since the two
    must be algebraically identical.
    """
    d = m.dim
    composed = reg_loss(m, hp.prior_matrix(d) if hp.prior is not None else None)
    composed += hp.gamma * pair_loss(m, sp, hp.lam)
    y = hp.prior_inverse(d) + hp.gamma * sp.m_tilde - hp.gamma * hp.lam * sp.c_tilde
    single = float(np.sum(y * m.matrix)) - _logdet_pd(m.matrix)
    if abs(composed - single) > 1e-9 * max(1.0, abs(composed), abs(single)):
        raise NumericalError(
            f"objective reformulation mismatch: {composed!r} vs {single!r}"
        )
    return composed


@dataclass(frozen=True)
class OracleResult:
    metric: MetricMatrix
    converged: bool
    iterations: int
    grad_norm: float
    objective: float


def oracle_solve(
    sp: ScatterPair,
    hp: MetricHyperParams,
    steps: int = 20000,
    step_size: float = 0.05,
    tol: float = 1e-9,
) -> OracleResult:
    """Reference solver: projected gradient descent on the construction
    objective over the PD cone.

    The gradient is ``Y - M^-1``; after each step eigenvalues are clamped
    to ``pd_floor``. Intended for small dimensions as an independent check
    of the closed form. Non-convergence within ``steps`` is flagged on the
    result, never silent.
    """
    d = sp.dim
    y = hp.prior_inverse(d) + hp.gamma * sp.m_tilde - hp.gamma * hp.lam * sp.c_tilde
    y = (y + y.T) / 2.0

    def objective(mat: np.ndarray) -> float:
        return float(np.sum(y * mat)) - _logdet_pd(mat)

    def project(mat: np.ndarray) -> np.ndarray:
        mat = (mat + mat.T) / 2.0
        w, v = np.linalg.eigh(mat)
        if w.min() >= hp.pd_floor:
            return mat
        w = np.maximum(w, hp.pd_floor)
        return (v * w) @ v.T

    m = project(hp.prior_matrix(d).copy())
    f = objective(m)
    step = step_size
    grad_norm = np.inf
    it = 0
    for it in range(1, steps + 1):
        grad = y - np.linalg.inv(m)
        grad = (grad + grad.T) / 2.0
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm < tol:
            break
        cand = project(m - step * grad)
        f_cand = objective(cand)
        while f_cand > f + 1e-12 and step > 1e-12:
            step /= 2.0
            cand = project(m - step * grad)
            f_cand = objective(cand)
        m, f = cand, f_cand
    return OracleResult(
        metric=MetricMatrix(m),
        converged=grad_norm < tol,
        iterations=it,
        grad_norm=grad_norm,
        objective=f,
    )


def factor_metric(m: MetricMatrix) -> np.ndarray:
    """A matrix L with L^T L = M, so metric distances become Euclidean
    distances between projected points L x."""
    try:
        chol = np.linalg.cholesky(m.matrix)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"cannot factor metric: {e}") from e
    return chol.T


@dataclass(frozen=True)
class SparsityReport:
    """Diagonal-versus-off-diagonal statistics of a [0, 1]-rescaled metric."""

    diag_mean: float
    offdiag_mean: float
    gap_ratio: float | None
    sorted_values: np.ndarray
    degenerate: bool


def sparsity_report(m: MetricMatrix) -> SparsityReport:
    """Rescale entries to [0, 1] and compare diagonal against off-diagonal
    mass; ``gap_ratio`` above 1 means the metric concentrates on the
    diagonal. A constant matrix cannot be rescaled and is reported as
    degenerate."""
    if m.dim < 2:
        raise ParameterError("sparsity diagnostics need a metric of dimension >= 2")
    entries = m.matrix
    lo, hi = float(entries.min()), float(entries.max())
    if hi == lo:
        return SparsityReport(
            diag_mean=float("nan"),
            offdiag_mean=float("nan"),
            gap_ratio=None,
            sorted_values=np.full(entries.size, np.nan),
            degenerate=True,
        )
    scaled = (entries - lo) / (hi - lo)
    mask = np.eye(m.dim, dtype=bool)
    diag_mean = float(scaled[mask].mean())
    offdiag_mean = float(scaled[~mask].mean())
    gap = float("inf") if offdiag_mean == 0.0 else diag_mean / offdiag_mean
    return SparsityReport(
        diag_mean=diag_mean,
        offdiag_mean=offdiag_mean,
        gap_ratio=gap,
        sorted_values=np.sort(scaled.ravel())[::-1],
        degenerate=False,
    )


def save_metric_block(m: MetricMatrix, path) -> None:
    """Dump the metric for offline plotting: little-endian u32 dimension,
    then d*d f64 entries row-major."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", m.dim))
        fh.write(m.matrix.astype("<f8").tobytes(order="C"))


def load_metric_block(path) -> MetricMatrix:
    blob = Path(path).read_bytes()
    if len(blob) < 4:
        raise DataFormatError(f"{path}: too short for a metric block")
    (d,) = struct.unpack_from("<I", blob, 0)
    expected = 4 + d * d * 8
    if len(blob) != expected:
        raise DataFormatError(f"{path}: expected {expected} bytes, got {len(blob)}")
    mat = np.frombuffer(blob, dtype="<f8", count=d * d, offset=4).reshape(d, d)
    return MetricMatrix(mat)
