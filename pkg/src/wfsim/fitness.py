"""Fitness landscapes and the induced expected-update map.

A fitness model assigns every type a non-negative reproductive weight as a
function of the current profile.  The expected next-generation profile is
the fitness-weighted renormalization of the current one; an optional
row-stochastic mutation matrix is applied to the profile first.  Darwinian,
reproductive, and average fitness notions are derived from the update map.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional

import numpy as np

from .errors import (
    ConfigError,
    DegenerateFitness,
    DimensionMismatch,
    InvalidNormalization,
    NumericRangeError,
    PreconditionError,
)
from .simplex import SimplexPoint

#: |det A| must exceed this times max(1, max|A|)^M to count as invertible.
DET_TOL = 1e-10

#: Row sums of a mutation matrix must be 1 within this tolerance.
ROW_SUM_TOL = 1e-12


class PayoffMatrix:
    """Square real matrix of pairwise interaction payoffs.

    Structural flags (symmetry, positive entries, invertibility) are
    computed on demand and cached; the entries themselves are immutable.
    """

    __slots__ = ("_entries", "_flags")

    def __init__(self, entries: Iterable[Iterable[float]]):
        arr = np.asarray(entries, dtype=np.float64).copy()
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
            raise DimensionMismatch("payoff matrix must be square and non-empty")
        if not np.all(np.isfinite(arr)):
            raise ConfigError("payoff entries must be finite")
        arr.flags.writeable = False
        self._entries = arr
        self._flags: dict[str, bool] = {}

    @property
    def entries(self) -> np.ndarray:
        return self._entries

    @property
    def m(self) -> int:
        return self._entries.shape[0]

    @property
    def is_symmetric(self) -> bool:
        if "sym" not in self._flags:
            a = self._entries
            self._flags["sym"] = bool(np.allclose(a, a.T, rtol=0, atol=1e-12))
        return self._flags["sym"]

    @property
    def has_positive_entries(self) -> bool:
        if "pos" not in self._flags:
            self._flags["pos"] = bool(np.all(self._entries > 0))
        return self._flags["pos"]

    @property
    def is_invertible(self) -> bool:
        if "inv" not in self._flags:
            scale = max(1.0, float(np.abs(self._entries).max())) ** self.m
            self._flags["inv"] = bool(
                abs(np.linalg.det(self._entries)) > DET_TOL * scale
            )
        return self._flags["inv"]

    def __repr__(self) -> str:
        return f"PayoffMatrix({self._entries.tolist()!r})"


class FitnessModel:
    """Base class: maps a profile to a vector of per-type fitness values."""

    m: int

    def values(self, x: np.ndarray) -> np.ndarray:
        """Raw fitness vector at profile ``x`` (may overflow; see subclasses)."""
        raise NotImplementedError

    def scaled_weights(self, x: np.ndarray) -> np.ndarray:
        """Range-guarded substitute used inside the update map.

        Returns a vector ``w`` with ``w = c * values(x)`` for some positive
        scalar ``c``; the update map is invariant under such scaling, so
        subclasses may shift into a safe numeric range here.
        """
        return self.values(x)

    def scaled_weights_batch(self, xs: np.ndarray) -> np.ndarray:
        """Row-wise ``scaled_weights`` for a (R, M) batch of profiles.

        Subclasses override with a vectorized path; the base implementation
        just loops.
        """
        return np.array([self.scaled_weights(row) for row in xs])

    def fitness_gradient(self, x: np.ndarray) -> Optional[np.ndarray]:
        """Matrix of partial derivatives d(fitness_i)/d(x_j), or None if the
        model has no analytic derivative (tabulated models)."""
        return None


class LinearFractionalFitness(FitnessModel):
    """Affine fitness: baseline vector blended with payoff interaction.

    ``fitness(x) = (1 - omega) * b + omega * A x`` with mixing weight
    ``omega`` in (0, 1) and strictly positive baseline ``b``.
    """

    def __init__(self, payoff: PayoffMatrix, omega: float, b: Iterable[float] | None = None):
        if not 0.0 < omega < 1.0:
            raise ConfigError(f"omega must lie in (0, 1), got {omega}")
        self.payoff = payoff
        self.omega = float(omega)
        self.m = payoff.m
        if b is None:
            b_arr = np.ones(self.m)
        else:
            b_arr = np.asarray(b, dtype=np.float64).copy()
            if b_arr.shape != (self.m,):
                raise DimensionMismatch("baseline b has the wrong length")
            if np.any(b_arr <= 0):
                raise ConfigError("baseline b must be strictly positive")
        b_arr.flags.writeable = False
        self.b = b_arr
        # precomputed pieces for the hot path
        self._b_part = (1.0 - self.omega) * self.b
        self._wa = self.omega * payoff.entries

    @classmethod
    def from_ratio(cls, payoff: PayoffMatrix, omega_ratio: float,
                   b: Iterable[float] | None = None) -> "LinearFractionalFitness":
        """Construct from the odds form ``omega / (1 - omega)``."""
        if omega_ratio <= 0:
            raise ConfigError("omega ratio must be positive")
        return cls(payoff, omega_ratio / (1.0 + omega_ratio), b)

    def values(self, x: np.ndarray) -> np.ndarray:
        return self._b_part + self._wa @ x

    def scaled_weights_batch(self, xs: np.ndarray) -> np.ndarray:
        return self._b_part + xs @ self._wa.T

    def fitness_gradient(self, x: np.ndarray) -> np.ndarray:
        return self._wa


class ExponentialFitness(FitnessModel):
    """Exponential payoff response: ``fitness_i(x) = exp(beta * (A x)_i)``."""

    def __init__(self, payoff: PayoffMatrix, beta: float):
        if beta <= 0:
            raise ConfigError(f"beta must be positive, got {beta}")
        self.payoff = payoff
        self.beta = float(beta)
        self.m = payoff.m

    def values(self, x: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore"):
            out = np.exp(self.beta * (self.payoff.entries @ x))
        if not np.all(np.isfinite(out)):
            raise NumericRangeError(
                "exponential fitness overflowed; use the update map, which "
                "is scale-invariant and evaluates in a guarded range"
            )
        return out

    def scaled_weights(self, x: np.ndarray) -> np.ndarray:
        # shift the exponent by its maximum; the update map is invariant
        # under positive scalar rescaling of fitness
        z = self.beta * (self.payoff.entries @ x)
        return np.exp(z - z.max())

    def scaled_weights_batch(self, xs: np.ndarray) -> np.ndarray:
        z = self.beta * (xs @ self.payoff.entries.T)
        return np.exp(z - z.max(axis=1, keepdims=True))

    def fitness_gradient(self, x: np.ndarray) -> np.ndarray:
        phi = self.values(x)
        return self.beta * phi[:, None] * self.payoff.entries


class TabulatedFitness(FitnessModel):
    """User-supplied fitness callback; validated at call time."""

    def __init__(self, func: Callable[[np.ndarray], Iterable[float]], m: int):
        self.func = func
        self.m = int(m)

    def values(self, x: np.ndarray) -> np.ndarray:
        out = np.asarray(self.func(x), dtype=np.float64)
        if out.shape != (self.m,):
            raise DimensionMismatch("tabulated fitness returned the wrong shape")
        if not np.all(np.isfinite(out)):
            raise NumericRangeError("tabulated fitness returned non-finite values")
        if np.any(out < 0):
            raise DegenerateFitness("tabulated fitness must be non-negative")
        return out


class MutationMatrix:
    """Row-stochastic matrix of per-generation type-switch probabilities."""

    __slots__ = ("_entries",)

    def __init__(self, entries: Iterable[Iterable[float]]):
        arr = np.asarray(entries, dtype=np.float64).copy()
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise DimensionMismatch("mutation matrix must be square")
        if np.any(arr < 0):
            raise ConfigError("mutation probabilities must be non-negative")
        rows = arr.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > ROW_SUM_TOL):
            raise ConfigError("every mutation-matrix row must sum to 1")
        arr.flags.writeable = False
        self._entries = arr

    @property
    def entries(self) -> np.ndarray:
        return self._entries

    @property
    def m(self) -> int:
        return self._entries.shape[0]

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Post-mutation profile: row vector times the matrix."""
        return x @ self._entries


class UpdateRule:
    """Expected next-generation profile map.

    Composition: optionally push the profile through the mutation matrix,
    then reweight by fitness and renormalize.  Without mutation the map
    never creates mass on types absent from the input.
    """

    def __init__(self, fitness: FitnessModel, mutation: MutationMatrix | None = None):
        if mutation is not None and mutation.m != fitness.m:
            raise DimensionMismatch("fitness and mutation dimensions differ")
        self.fitness = fitness
        self.mutation = mutation
        self.m = fitness.m

    # -- hot path -----------------------------------------------------
    def update_probs(self, x) -> np.ndarray:
        """Expected next profile for a frequency vector (returned raw)."""
        if isinstance(x, SimplexPoint):
            x = x.coords
        if self.mutation is not None:
            x = x @ self.mutation.entries
        w = self.fitness.scaled_weights(x)
        num = x * w
        total = num.sum()
        if not total > 0:
            raise DegenerateFitness("total fitness is zero at this profile")
        return num / total

    def update_probs_batch(self, xs: np.ndarray) -> np.ndarray:
        """Row-wise update for a (R, M) batch of frequency vectors."""
        if self.mutation is not None:
            xs = xs @ self.mutation.entries
        w = self.fitness.scaled_weights_batch(xs)
        num = xs * w
        totals = num.sum(axis=1, keepdims=True)
        if not np.all(totals > 0):
            raise DegenerateFitness("total fitness is zero at some profile")
        return num / totals

    # -- public wrappers ----------------------------------------------
    def mean_update(self, x: SimplexPoint) -> SimplexPoint:
        if x.m != self.m:
            raise DimensionMismatch("point dimension does not match the rule")
        return SimplexPoint(self.update_probs(x.coords), normalize=True)

    def jacobian(self, x: np.ndarray, fd_step: float = 1e-7) -> np.ndarray:
        """Derivative matrix of the update map at ``x``.

        Analytic whenever the fitness model has a gradient; otherwise falls
        back to central finite differences of the full map.
        """
        x = np.asarray(x, dtype=np.float64)
        if self.mutation is not None:
            inner = x @ self.mutation.entries
            return self._replicator_jacobian(inner, fd_step) @ self.mutation.entries.T
        return self._replicator_jacobian(x, fd_step)

    def _replicator_jacobian(self, x: np.ndarray, fd_step: float) -> np.ndarray:
        dphi = self.fitness.fitness_gradient(x)
        if dphi is None:
            return _fd_jacobian(lambda v: self._replicator_probs(v), x, fd_step)
        phi = self.fitness.values(x)
        s = float(np.dot(x, phi))
        if not s > 0:
            raise DegenerateFitness("total fitness is zero at this profile")
        gamma = x * phi / s
        grad_s = phi + dphi.T @ x
        jac = (np.diag(phi) + x[:, None] * dphi) / s
        jac -= np.outer(gamma, grad_s) / s
        return jac

    def _replicator_probs(self, x: np.ndarray) -> np.ndarray:
        w = self.fitness.scaled_weights(x)
        num = x * w
        total = num.sum()
        if not total > 0:
            raise DegenerateFitness("total fitness is zero at this profile")
        return num / total


def _fd_jacobian(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                 step: float) -> np.ndarray:
    m = x.size
    out = np.empty((m, m))
    for j in range(m):
        hi = x.copy()
        lo = x.copy()
        hi[j] += step
        lo[j] -= step
        out[:, j] = (f(hi) - f(lo)) / (2.0 * step)
    return out


def finite_difference_jacobian(rule: UpdateRule, x: np.ndarray,
                               step: float = 1e-6) -> np.ndarray:
    """Central-difference derivative matrix of the update map at ``x``.

    The map extends smoothly to a neighborhood of the simplex, so the
    perturbed points are evaluated without renormalizing the input.
    """
    return _fd_jacobian(rule.update_probs, np.asarray(x, dtype=np.float64), step)


def make_rule(matrix, *, omega: float | None = None,
              omega_ratio: float | None = None, b=None,
              fitness: str = "linear_fractional", beta: float | None = None,
              mutation=None) -> UpdateRule:
    """Build an update rule from plain (JSON-friendly) parameters.

    The mixing weight may be given directly (``omega``) or in odds form
    (``omega_ratio`` = omega / (1 - omega)), but not both.
    """
    payoff = PayoffMatrix(matrix)
    mut = MutationMatrix(mutation) if mutation is not None else None
    if fitness == "linear_fractional":
        if (omega is None) == (omega_ratio is None):
            raise ConfigError(
                "linear-fractional fitness needs exactly one of omega, omega_ratio"
            )
        if omega is None:
            model: FitnessModel = LinearFractionalFitness.from_ratio(
                payoff, omega_ratio, b)
        else:
            model = LinearFractionalFitness(payoff, omega, b)
    elif fitness == "exponential":
        if beta is None:
            raise ConfigError("exponential fitness needs beta")
        if omega is not None or omega_ratio is not None or b is not None:
            raise ConfigError("omega/b do not apply to exponential fitness")
        model = ExponentialFitness(payoff, beta)
    else:
        raise ConfigError(f"unknown fitness kind {fitness!r}")
    return UpdateRule(model, mut)


# ----------------------------------------------------------------------
# module-level operations
# ----------------------------------------------------------------------

def fitness_eval(model: FitnessModel, x: SimplexPoint) -> np.ndarray:
    """Per-type fitness values at a profile (raw, unshifted)."""
    if x.m != model.m:
        raise DimensionMismatch("point dimension does not match the model")
    return model.values(x.coords)


def replicator_update(rule: UpdateRule, x: SimplexPoint) -> SimplexPoint:
    """Fitness-weighted renormalization of the profile (mutation-free rules)."""
    if rule.mutation is not None:
        raise PreconditionError("replicator_update requires a mutation-free rule")
    return rule.mean_update(x)


def apply_mutation(rule: UpdateRule, x: SimplexPoint) -> SimplexPoint:
    """Full update for a rule with a mutation matrix: mutate, then reweight."""
    if rule.mutation is None:
        raise PreconditionError("apply_mutation requires a rule with a mutation matrix")
    return rule.mean_update(x)


def darwinian_fitness(rule: UpdateRule, x: SimplexPoint) -> np.ndarray:
    """Per-type growth factors: expected next share over current share.

    Entries for types with zero current share are undefined and returned
    as NaN.  The share-weighted average over present types is identically
    1 for mutation-free rules.
    """
    gamma = rule.update_probs(x.coords)
    out = np.full(x.m, np.nan)
    mask = x.coords > 0
    out[mask] = gamma[mask] / x.coords[mask]
    return out


def reproductive_fitness(rule: UpdateRule, h: Callable[[np.ndarray], float],
                         x: SimplexPoint) -> np.ndarray:
    """Growth factors rescaled by a positive average ``h``.

    Returns ``f_i * h(x)`` where ``f`` is the Darwinian fitness; entries
    off the support are NaN.  Requires the rule to conserve mass on the
    support of ``x`` (no mutation inflow), and checks the defining identity
    that the share-weighted average equals ``h(x)``.
    """
    gamma = rule.update_probs(x.coords)
    mask = x.coords > 0
    on_support = float(gamma[mask].sum())
    if abs(on_support - 1.0) > 1e-9:
        raise PreconditionError(
            "rule moves mass off the support of x; rescaled growth factors "
            "are not defined here"
        )
    hx = float(h(x.coords))
    if not hx > 0:
        raise InvalidNormalization(f"average must be positive, got {hx}")
    out = np.full(x.m, np.nan)
    out[mask] = gamma[mask] / x.coords[mask] * hx
    agreement = float(np.dot(x.coords[mask], out[mask]))
    if abs(agreement - hx) > 1e-12 * max(1.0, abs(hx)):
        raise NumericRangeError(
            "share-weighted average of rescaled growth factors drifted from h(x)"
        )
    return out


def average_fitness(rule: UpdateRule, x: SimplexPoint) -> float:
    """Share-weighted mean fitness at the profile (the update normalizer)."""
    phi = rule.fitness.values(x.coords)
    return float(np.dot(x.coords, phi))
