"""Deterministic skeleton of the population process.

The infinite-population dynamics iterate the expected-update map.  This
module computes orbits, interior equilibria of partnership payoff
matrices, the derivative of the update map at equilibrium together with
its spectral radius on the sum-zero subspace, diagnostic checks of the
stability hypotheses (symmetry, definiteness on sum-zero directions,
permanence, monotone averages), and reachability by pseudo-orbits with
bounded per-step error on a barycentric grid.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
from scipy.spatial.distance import cdist

from .errors import (
    ConfigError,
    DegenerateFitness,
    NoInteriorEquilibrium,
    NumericRangeError,
    PreconditionError,
)
from .fitness import (
    LinearFractionalFitness,
    PayoffMatrix,
    UpdateRule,
    finite_difference_jacobian,
)
from .simplex import SimplexPoint, SupportSet, lattice_counts

#: Orbit convergence: this many consecutive steps below the gap tolerance.
CONVERGENCE_RUN = 3

MatrixLike = Union[PayoffMatrix, np.ndarray, Sequence[Sequence[float]]]


def _as_matrix(a: MatrixLike) -> PayoffMatrix:
    return a if isinstance(a, PayoffMatrix) else PayoffMatrix(a)


def sum_zero_basis(m: int) -> np.ndarray:
    """Orthonormal basis of the sum-zero subspace as an (m, m-1) matrix.

    Column k is proportional to (1, ..., 1, -k, 0, ..., 0) with k ones, so
    the basis is deterministic and exactly reproducible.
    """
    basis = np.zeros((m, m - 1))
    for k in range(1, m):
        basis[:k, k - 1] = 1.0
        basis[k, k - 1] = -float(k)
        basis[:, k - 1] /= np.sqrt(k * (k + 1.0))
    return basis


# ----------------------------------------------------------------------
# orbits
# ----------------------------------------------------------------------

@dataclass
class Orbit:
    """A forward orbit of the update map: states[k+1] = update(states[k])."""

    states: np.ndarray            # (K+1, M)
    rule: UpdateRule
    converged_at: Optional[int]   # first index with 3 consecutive tiny gaps
    gap_tol: float

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def m(self) -> int:
        return self.states.shape[1]

    def point(self, k: int) -> SimplexPoint:
        return SimplexPoint(self.states[k], normalize=True)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def iterate(rule: UpdateRule, x0, steps: int, gap_tol: float = 1e-12,
            stop_on_convergence: bool = False) -> Orbit:
    """Iterate the update map ``steps`` times from ``x0``.

    Records the first index at which the max-norm gap between consecutive
    states has stayed below ``gap_tol`` for three steps in a row.  With
    ``stop_on_convergence`` the orbit is truncated at that index.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    x = x0.coords if isinstance(x0, SimplexPoint) else np.asarray(x0, dtype=np.float64)
    states = np.empty((steps + 1, x.size))
    states[0] = x
    converged_at = None
    run = 0
    last = steps
    for k in range(1, steps + 1):
        states[k] = rule.update_probs(states[k - 1])
        gap = float(np.max(np.abs(states[k] - states[k - 1])))
        run = run + 1 if gap < gap_tol else 0
        if run >= CONVERGENCE_RUN and converged_at is None:
            converged_at = k
            if stop_on_convergence:
                last = k
                break
    return Orbit(states=states[: last + 1], rule=rule,
                 converged_at=converged_at, gap_tol=gap_tol)


# ----------------------------------------------------------------------
# interior equilibrium and its derivative
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class EquilibriumResult:
    """Solution of ``A v = const * ones`` renormalized to total mass 1."""

    vector: np.ndarray
    c: float
    is_interior: bool
    residual: float

    @property
    def point(self) -> SimplexPoint:
        if not self.is_interior:
            raise NoInteriorEquilibrium("equilibrium is not interior")
        return SimplexPoint(self.vector, normalize=True)


def solve_interior_equilibrium(a: MatrixLike) -> EquilibriumResult:
    """Profile at which all types have equal payoff: solve ``A v = ones``.

    The solution is scaled to sum 1; the constant ``c`` is the common
    payoff value.  Raises when the matrix is singular; a solution with a
    non-positive coordinate is returned with ``is_interior=False`` rather
    than raised.
    """
    payoff = _as_matrix(a)
    entries = payoff.entries
    ones = np.ones(payoff.m)
    try:
        v = np.linalg.solve(entries, ones)
    except np.linalg.LinAlgError as exc:
        raise NoInteriorEquilibrium(
            "no interior equilibrium: payoff matrix is singular"
        ) from exc
    total = float(v.sum())
    if total == 0 or not np.isfinite(total):
        raise NoInteriorEquilibrium("equal-payoff solution has zero total mass")
    chi = v / total
    c = 1.0 / total
    residual = float(np.max(np.abs(entries @ chi - c * ones)))
    scale = max(1.0, float(np.abs(entries).max()))
    if residual > 1e-9 * scale:
        raise NumericRangeError(
            f"equilibrium residual {residual:.3e} exceeds 1e-9 * {scale:.3e}"
        )
    return EquilibriumResult(vector=chi, c=c,
                             is_interior=bool(np.all(chi > 0)),
                             residual=residual)


def jacobian_at_equilibrium(a: MatrixLike, omega: float, chi: np.ndarray,
                            cross_check: bool = True) -> np.ndarray:
    """Derivative matrix of the affine-fitness update map at its interior
    equilibrium.

    For the unit-baseline affine fitness with mixing weight ``omega``, the
    derivative at the equilibrium acts on sum-zero perturbations as
    ``I + diag(chi) B / (1 + r)`` where ``B = omega / (1 - omega) * A`` and
    ``r`` is the common value of ``B chi``.  When ``cross_check`` is on,
    the result is validated against central finite differences of the full
    map along a sum-zero basis (agreement to 1e-5 required).
    """
    payoff = _as_matrix(a)
    chi = np.asarray(chi, dtype=np.float64)
    if chi.shape != (payoff.m,):
        raise PreconditionError("equilibrium vector has the wrong length")
    if np.any(chi <= 0):
        raise PreconditionError("equilibrium must be interior (all coordinates > 0)")
    ratio = omega / (1.0 - omega)
    b_mat = ratio * payoff.entries
    bchi = b_mat @ chi
    r = float(bchi.mean())
    if float(np.max(np.abs(bchi - r))) > 1e-8 * (1.0 + abs(r)):
        raise PreconditionError(
            "chi is not an equal-payoff interior equilibrium of this matrix"
        )
    d = np.eye(payoff.m) + chi[:, None] * b_mat / (1.0 + r)
    if cross_check:
        rule = UpdateRule(LinearFractionalFitness(payoff, omega))
        d_fd = finite_difference_jacobian(rule, chi, step=1e-6)
        basis = sum_zero_basis(payoff.m)
        err = float(np.max(np.abs((d - d_fd) @ basis)))
        if err > 1e-5:
            raise NumericRangeError(
                f"analytic derivative disagrees with finite differences on "
                f"sum-zero directions by {err:.3e}"
            )
    return d


def spectral_radius_on_sum_zero(d: np.ndarray) -> float:
    """Largest eigenvalue magnitude of a matrix compressed to the sum-zero
    subspace."""
    d = np.asarray(d, dtype=np.float64)
    m = d.shape[0]
    basis = sum_zero_basis(m)
    try:
        eigs = np.linalg.eigvals(basis.T @ d @ basis)
    except np.linalg.LinAlgError as exc:
        raise NumericRangeError(f"eigenvalue computation failed: {exc}") from exc
    return float(np.max(np.abs(eigs)))


# ----------------------------------------------------------------------
# hypothesis checks
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class StabilityReport:
    """Flags for the partnership-stability hypotheses on a payoff matrix.

    ``negative_definite_on_sum_zero`` is the projected-eigenvalue test of
    the quadratic form; ``one_positive_eigenvalue`` is the equivalent
    full-spectrum signature test (the two agree whenever an interior
    equilibrium exists).
    """

    symmetric: bool
    positive_entries: bool
    invertible: bool
    one_positive_eigenvalue: bool
    negative_definite_on_sum_zero: bool
    interior_equilibrium: bool

    @property
    def ok(self) -> bool:
        return (self.symmetric and self.positive_entries and self.invertible
                and self.negative_definite_on_sum_zero
                and self.interior_equilibrium)

    def to_dict(self) -> dict:
        return {
            "symmetric": self.symmetric,
            "positive_entries": self.positive_entries,
            "invertible": self.invertible,
            "one_positive_eigenvalue": self.one_positive_eigenvalue,
            "negative_definite_on_sum_zero": self.negative_definite_on_sum_zero,
            "interior_equilibrium": self.interior_equilibrium,
            "ok": self.ok,
        }


def check_stability_assumptions(a: MatrixLike) -> StabilityReport:
    """Diagnostic flags: symmetry, positive entries, invertibility, sign
    structure of the quadratic form, and interior-equilibrium existence."""
    payoff = _as_matrix(a)
    sym_part = 0.5 * (payoff.entries + payoff.entries.T)
    eigs = np.linalg.eigvalsh(sym_part)
    tol = 1e-10 * max(1.0, float(np.max(np.abs(eigs))))
    one_positive = (int(np.sum(eigs > tol)) == 1
                    and int(np.sum(eigs < -tol)) == payoff.m - 1)
    basis = sum_zero_basis(payoff.m)
    proj_eigs = np.linalg.eigvalsh(basis.T @ sym_part @ basis)
    proj_tol = 1e-10 * max(1.0, float(np.max(np.abs(proj_eigs))))
    neg_def = bool(np.all(proj_eigs < -proj_tol))
    try:
        interior = solve_interior_equilibrium(payoff).is_interior
    except NoInteriorEquilibrium:
        interior = False
    return StabilityReport(
        symmetric=payoff.is_symmetric,
        positive_entries=payoff.has_positive_entries,
        invertible=payoff.is_invertible,
        one_positive_eigenvalue=one_positive,
        negative_definite_on_sum_zero=neg_def,
        interior_equilibrium=interior,
    )


def is_positive_definite_on_sum_zero(a: MatrixLike) -> bool:
    """Whether the quadratic form of a symmetric matrix is positive on all
    non-zero sum-zero vectors."""
    payoff = _as_matrix(a)
    if not payoff.is_symmetric:
        raise PreconditionError("definiteness test requires a symmetric matrix")
    basis = sum_zero_basis(payoff.m)
    eigs = np.linalg.eigvalsh(basis.T @ payoff.entries @ basis)
    tol = 1e-12 * max(1.0, float(np.max(np.abs(eigs))))
    return bool(np.all(eigs > tol))


# ----------------------------------------------------------------------
# permanence
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class BoundaryFixedPoint:
    support: SupportSet
    point: np.ndarray
    margin: Optional[float] = None  # witness payoff advantage at this point


@dataclass
class PermanenceReport:
    """Result of the sufficient-condition test that the boundary repels.

    ``status`` is "permanent" when some interior profile strictly
    out-scores every boundary fixed point against itself, "not-verified"
    when no tried candidate does, and "inconclusive" when no interior
    candidate was available at all.
    """

    status: str
    witness: Optional[np.ndarray]
    fixed_points: list[BoundaryFixedPoint] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def permanent(self) -> bool:
        return self.status == "permanent"


def _face_grid(m: int, indices: np.ndarray, resolution: int) -> np.ndarray:
    """Strictly positive barycentric grid points of one closed face,
    embedded in the full coordinate system."""
    k = indices.size
    counts = lattice_counts(k, resolution)
    counts = counts[np.all(counts > 0, axis=1)]
    pts = np.zeros((counts.shape[0], m))
    pts[:, indices] = counts / resolution
    return pts


def check_permanence(a: MatrixLike, rule: UpdateRule,
                     candidate_resolution: int = 12,
                     fixed_point_residual: float = 1e-8) -> PermanenceReport:
    """Test the interior-dominance sufficient condition for permanence.

    Enumerates the fixed points of the update map on every proper face
    (equal-payoff solutions of the face submatrix, vertices, and a dense
    grid scan where the submatrix is singular) and searches for an
    interior profile ``y`` whose payoff against each boundary fixed point
    ``z`` strictly exceeds ``z``'s payoff against itself.
    """
    payoff = _as_matrix(a)
    if not payoff.is_symmetric:
        raise PreconditionError("permanence test requires a symmetric payoff matrix")
    m = payoff.m
    if m > 5:
        raise PreconditionError("face enumeration is limited to m <= 5")
    entries = payoff.entries

    fixed: list[tuple[SupportSet, np.ndarray]] = []
    for size in range(1, m):
        for combo in itertools.combinations(range(m), size):
            idx = np.array(combo, dtype=np.intp)
            candidates: list[np.ndarray] = []
            if size == 1:
                z = np.zeros(m)
                z[idx[0]] = 1.0
                candidates.append(z)
            else:
                sub = entries[np.ix_(idx, idx)]
                try:
                    eq = solve_interior_equilibrium(sub)
                    if eq.is_interior:
                        z = np.zeros(m)
                        z[idx] = eq.vector
                        candidates.append(z)
                except NoInteriorEquilibrium:
                    # singular face submatrix: scan the face densely
                    for z in _face_grid(m, idx, 40):
                        if np.max(np.abs(rule.update_probs(z) - z)) < fixed_point_residual:
                            candidates.append(z)
            for z in candidates:
                try:
                    ok = np.max(np.abs(rule.update_probs(z) - z)) < fixed_point_residual
                except DegenerateFitness:
                    ok = False
                if ok:
                    fixed.append((SupportSet.from_mask(z > 0), z))

    report = PermanenceReport(status="inconclusive", witness=None)
    if not fixed:
        report.notes.append("no boundary fixed points found")
        report.status = "permanent"
        return report

    candidates_y: list[np.ndarray] = []
    try:
        eq = solve_interior_equilibrium(payoff)
        if eq.is_interior:
            candidates_y.append(eq.vector)
    except NoInteriorEquilibrium:
        pass
    interior_counts = lattice_counts(m, candidate_resolution)
    interior_counts = interior_counts[np.all(interior_counts > 0, axis=1)]
    candidates_y.extend(interior_counts / candidate_resolution)

    if not candidates_y:
        report.notes.append("no interior candidate available")
        return report

    z_mat = np.array([z for _, z in fixed])
    self_scores = np.einsum("ij,jk,ik->i", z_mat, entries, z_mat)
    best_y = None
    best_margins = None
    for y in candidates_y:
        margins = z_mat @ (entries @ y) - self_scores
        if best_margins is None or margins.min() > best_margins.min():
            best_margins = margins
            best_y = y
        if margins.min() > 0:
            break

    report.witness = best_y
    report.fixed_points = [
        BoundaryFixedPoint(support=supp, point=z, margin=float(mrg))
        for (supp, z), mrg in zip(fixed, best_margins)
    ]
    report.status = "permanent" if best_margins.min() > 0 else "not-verified"
    return report


# ----------------------------------------------------------------------
# monotone-average check
# ----------------------------------------------------------------------

@dataclass
class LyapunovReport:
    n_checked: int
    min_delta: float
    violations: list[tuple[np.ndarray, float]]

    @property
    def ok(self) -> bool:
        return not self.violations


def lyapunov_check(rule: UpdateRule, h: Callable[[np.ndarray], float],
                   sample: Iterable, tol: float = 1e-10) -> LyapunovReport:
    """Evaluate ``h(update(x)) - h(x)`` over a sample and report any
    decrease beyond ``tol``."""
    min_delta = np.inf
    violations: list[tuple[np.ndarray, float]] = []
    n = 0
    for point in sample:
        x = point.coords if isinstance(point, SimplexPoint) else np.asarray(point, dtype=np.float64)
        delta = float(h(rule.update_probs(x)) - h(x))
        min_delta = min(min_delta, delta)
        if delta < -tol:
            violations.append((x, delta))
        n += 1
    if n == 0:
        min_delta = 0.0
    return LyapunovReport(n_checked=n, min_delta=min_delta, violations=violations)


# ----------------------------------------------------------------------
# pseudo-orbit reachability on a barycentric grid
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class ReachabilityResult:
    reachable: bool
    length: Optional[int]
    n_nodes: int
    grid_resolution: int


@dataclass(frozen=True)
class CoverResult:
    """Worst-case pseudo-orbit length from a source region to a target."""

    max_length: Optional[int]   # None when some source node cannot reach
    unreached: int
    n_source: int
    grid_resolution: int


def _grid_nodes(m: int, resolution: int) -> np.ndarray:
    return lattice_counts(m, resolution) / float(resolution)


def _target_mask(nodes: np.ndarray, target) -> np.ndarray:
    if callable(target):
        return np.array([bool(target(v)) for v in nodes])
    if isinstance(target, SimplexPoint):
        points = [target.coords]
    else:
        arr = np.asarray(target, dtype=np.float64)
        points = [arr] if arr.ndim == 1 else list(arr)
    mask = np.zeros(nodes.shape[0], dtype=bool)
    for p in points:
        mask[int(np.argmin(np.max(np.abs(nodes - p), axis=1)))] = True
    return mask


def epsilon_chain_reachable(rule: UpdateRule, start, target, epsilon: float,
                            grid_resolution: int = 60) -> ReachabilityResult:
    """Breadth-first search for a pseudo-orbit from ``start`` to ``target``.

    Grid nodes are the barycentric lattice at the given resolution; there
    is a step from node ``u`` to node ``v`` whenever the image of ``u``
    lies within ``epsilon`` (max-norm) of ``v``.  ``target`` may be a
    predicate on frequency vectors, a single point, or a collection of
    points (mapped to their nearest nodes).  Returns reachability and the
    minimal number of steps.
    """
    m = rule.m
    if m > 3:
        raise PreconditionError("grid search is limited to m <= 3")
    if epsilon <= 1.0 / grid_resolution:
        raise ConfigError(
            f"epsilon {epsilon} must exceed the grid spacing {1.0 / grid_resolution}"
        )
    nodes = _grid_nodes(m, grid_resolution)
    start_vec = start.coords if isinstance(start, SimplexPoint) else np.asarray(start, dtype=np.float64)
    start_idx = int(np.argmin(np.max(np.abs(nodes - start_vec), axis=1)))
    target_mask = _target_mask(nodes, target)

    if target_mask[start_idx]:
        return ReachabilityResult(True, 0, nodes.shape[0], grid_resolution)

    level = np.full(nodes.shape[0], -1, dtype=np.int64)
    level[start_idx] = 0
    frontier = [start_idx]
    depth = 0
    while frontier:
        depth += 1
        next_frontier: list[int] = []
        for u in frontier:
            image = rule.update_probs(nodes[u])
            reach = np.max(np.abs(nodes - image), axis=1) < epsilon
            new = reach & (level < 0)
            if np.any(new & target_mask):
                return ReachabilityResult(True, depth, nodes.shape[0], grid_resolution)
            idx = np.flatnonzero(new)
            level[idx] = depth
            next_frontier.extend(idx.tolist())
        frontier = next_frontier
    return ReachabilityResult(False, None, nodes.shape[0], grid_resolution)


def epsilon_chain_max_length(rule: UpdateRule, source, target, epsilon: float,
                             grid_resolution: int = 60) -> CoverResult:
    """Worst-case minimal pseudo-orbit length from a source region.

    Computes, for every grid node in ``source`` (a predicate, or None for
    all nodes), the minimal pseudo-orbit length into ``target``, and
    returns the maximum.  This is an empirical surrogate for the abstract
    pair (error threshold, horizon) guaranteed by the theory near an
    attracting equilibrium; it is an estimate on a finite grid, not a
    certified constant.
    """
    m = rule.m
    if m > 3:
        raise PreconditionError("grid search is limited to m <= 3")
    if epsilon <= 1.0 / grid_resolution:
        raise ConfigError(
            f"epsilon {epsilon} must exceed the grid spacing {1.0 / grid_resolution}"
        )
    nodes = _grid_nodes(m, grid_resolution)
    images = np.array([rule.update_probs(v) for v in nodes])
    target_mask = _target_mask(nodes, target)
    source_mask = (np.ones(nodes.shape[0], dtype=bool) if source is None
                   else _target_mask(nodes, source))

    level = np.full(nodes.shape[0], -1, dtype=np.int64)
    level[target_mask] = 0
    frontier_mask = target_mask.copy()
    depth = 0
    while True:
        unassigned = level < 0
        if not np.any(unassigned) or not np.any(frontier_mask):
            break
        depth += 1
        dist = cdist(images[unassigned], nodes[frontier_mask], metric="chebyshev")
        hits = (dist < epsilon).any(axis=1)
        if not np.any(hits):
            break
        idx = np.flatnonzero(unassigned)[hits]
        level[idx] = depth
        frontier_mask = np.zeros_like(frontier_mask)
        frontier_mask[idx] = True

    source_levels = level[source_mask]
    unreached = int(np.sum(source_levels < 0))
    if unreached:
        return CoverResult(None, unreached, int(source_mask.sum()), grid_resolution)
    return CoverResult(int(source_levels.max()), 0, int(source_mask.sum()),
                       grid_resolution)


# ----------------------------------------------------------------------
# random test matrices
# ----------------------------------------------------------------------

def random_stability_matrix(m: int, rng: np.random.Generator,
                            max_tries: int = 200) -> PayoffMatrix:
    """Sample a symmetric positive-entry matrix that is negative definite
    on sum-zero vectors and has an interior equilibrium.

    Construction: ``A = c * ones - Q`` with ``Q`` symmetric positive
    definite and ``c`` above the largest entry of ``Q``; the quadratic
    form on sum-zero vectors is then ``-w' Q w < 0`` automatically, and
    the remaining flags are enforced by rejection.
    """
    for _ in range(max_tries):
        g = rng.normal(size=(m, m))
        q = g @ g.T + 0.05 * np.eye(m)
        c = float(q.max()) + rng.uniform(0.1, 2.0) * max(1.0, float(np.abs(q).max()))
        a = PayoffMatrix(c * np.ones((m, m)) - q)
        if check_stability_assumptions(a).ok:
            return a
    raise NumericRangeError("failed to sample a conforming matrix")


def random_pd_on_sum_zero_matrix(m: int, rng: np.random.Generator,
                                 max_tries: int = 200) -> PayoffMatrix:
    """Sample a symmetric positive-entry matrix whose quadratic form is
    positive definite on sum-zero vectors (``A = Q + c * ones``, Q SPD)."""
    for _ in range(max_tries):
        g = rng.normal(size=(m, m))
        q = g @ g.T + 0.05 * np.eye(m)
        c = max(0.0, -float(q.min())) + rng.uniform(0.1, 2.0) * max(1.0, float(np.abs(q).max()))
        a = PayoffMatrix(q + c * np.ones((m, m)))
        if a.has_positive_entries and is_positive_definite_on_sum_zero(a):
            return a
    raise NumericRangeError("failed to sample a conforming matrix")


# ----------------------------------------------------------------------
# aggregate report
# ----------------------------------------------------------------------

@dataclass
class MeanFieldReport:
    """Equilibrium, local derivative data, and hypothesis flags for one
    payoff system."""

    equilibrium: np.ndarray
    c: float
    interior: bool
    stability: StabilityReport
    jacobian: Optional[np.ndarray] = None
    spectral_radius: Optional[float] = None
    permanence: Optional[PermanenceReport] = None

    def to_dict(self) -> dict:
        out = {
            "equilibrium": self.equilibrium.tolist(),
            "c": self.c,
            "interior": self.interior,
            "stability": self.stability.to_dict(),
            "jacobian": None if self.jacobian is None else self.jacobian.tolist(),
            "spectral_radius_sum_zero": self.spectral_radius,
        }
        if self.permanence is not None:
            out["permanence"] = {
                "status": self.permanence.status,
                "witness": (None if self.permanence.witness is None
                            else np.asarray(self.permanence.witness).tolist()),
                "n_boundary_fixed_points": len(self.permanence.fixed_points),
                "min_margin": (min((fp.margin for fp in self.permanence.fixed_points),
                                   default=None)),
            }
        return out


def build_meanfield_report(rule: UpdateRule,
                           check_perm: bool = False) -> MeanFieldReport:
    """Equilibrium + derivative + flags for a payoff-driven update rule.

    Interior equilibria of fitness-monotone payoff responses all solve the
    same equal-payoff system.  The derivative at the equilibrium uses the
    closed form (with its finite-difference cross-check) for the
    unit-baseline affine model, and the generic analytic derivative
    otherwise.
    """
    payoff = getattr(rule.fitness, "payoff", None)
    if payoff is None:
        raise PreconditionError("report needs a payoff-driven fitness model")
    stability = check_stability_assumptions(payoff)
    eq = solve_interior_equilibrium(payoff)
    jac = None
    radius = None
    if eq.is_interior:
        closed_form = (isinstance(rule.fitness, LinearFractionalFitness)
                       and rule.mutation is None
                       and np.all(rule.fitness.b == 1.0))
        if closed_form:
            jac = jacobian_at_equilibrium(payoff, rule.fitness.omega, eq.vector)
        else:
            jac = rule.jacobian(eq.vector)
        radius = spectral_radius_on_sum_zero(jac)
    perm = None
    if check_perm:
        perm = check_permanence(payoff, rule)
    return MeanFieldReport(equilibrium=eq.vector, c=eq.c, interior=eq.is_interior,
                           stability=stability, jacobian=jac,
                           spectral_radius=radius, permanence=perm)
