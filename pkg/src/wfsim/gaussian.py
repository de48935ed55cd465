"""Gaussian linearization of the resampling chain around the
deterministic orbit.

Rescaled deviations of the finite population from the orbit approach a
time-inhomogeneous Gaussian linear recursion driven by multinomial noise:
the next deviation is the update-map derivative applied to the current
one plus a centered Gaussian with the multinomial covariance of the
current image.  This module builds those covariances, samples the linear
recursion, propagates second moments exactly, and rescales simulated
trajectories for empirical comparison.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, NumericRangeError, PreconditionError
from .fitness import UpdateRule
from .meanfield import Orbit, iterate
from .simplex import SimplexPoint, round_to_lattice

#: Eigenvalues of a noise covariance this far below zero are rounding
#: noise and get clamped; anything lower is a genuine failure.
EIG_CLAMP = -1e-12


def noise_covariance(p) -> np.ndarray:
    """Covariance of one multinomial draw (scaled by N) with cell
    probabilities ``p``: diag(p) - p p'.

    ``p`` is the update image of the state of interest, i.e. the
    probability vector actually fed to the resampling step.  The result
    is symmetric positive semidefinite and annihilates the all-ones
    vector, so it is supported on the sum-zero subspace.
    """
    vec = p.coords if isinstance(p, SimplexPoint) else np.asarray(p, dtype=np.float64)
    return np.diag(vec) - np.outer(vec, vec)


def _gaussian_root(cov: np.ndarray) -> np.ndarray:
    """Square-root factor of a PSD matrix via eigendecomposition, clamping
    eigenvalues in [EIG_CLAMP, 0) to zero."""
    evals, evecs = np.linalg.eigh(cov)
    if evals.min() < EIG_CLAMP:
        raise NumericRangeError(
            f"covariance has eigenvalue {evals.min():.3e} below the PSD tolerance"
        )
    evals = np.clip(evals, 0.0, None)
    return evecs * np.sqrt(evals)


def sample_degenerate_gaussian(cov: np.ndarray, rng: np.random.Generator,
                               size: Optional[int] = None) -> np.ndarray:
    """Centered Gaussian draw(s) with a possibly rank-deficient covariance."""
    root = _gaussian_root(cov)
    m = cov.shape[0]
    if size is None:
        return root @ rng.standard_normal(m)
    return rng.standard_normal((size, m)) @ root.T


def ar1_sample(orbit: Orbit, u0, rng: np.random.Generator,
               stationary: bool = False,
               steps: Optional[int] = None,
               paths: Optional[int] = None) -> np.ndarray:
    """Sample the linear Gaussian recursion along an orbit.

    Starting from ``u0`` (which must be sum-zero), each step applies the
    update-map derivative at the current orbit point and adds a Gaussian
    with the multinomial covariance of the next orbit point.  With
    ``stationary`` the derivative and covariance are frozen at the final
    orbit point (useful once the orbit has converged), and ``steps`` may
    exceed the orbit length.  With ``paths`` an ensemble of independent
    trajectories is drawn; the result then has shape (paths, steps+1, M)
    instead of (steps+1, M), and ``u0`` may be a single deviation shared by
    every path or an array of per-path deviations with shape (paths, M).
    """
    u0 = np.asarray(u0, dtype=np.float64)
    m = orbit.m
    if u0.ndim == 2 and paths is None:
        paths = u0.shape[0]
    expected = (m,) if paths is None or u0.ndim == 1 else (paths, m)
    if u0.shape != expected:
        raise DimensionMismatch("initial deviation has the wrong shape")
    if float(np.abs(u0.sum(axis=-1)).max()) > 1e-10:
        raise PreconditionError("initial deviation must have zero coordinate sum")
    if steps is None:
        steps = len(orbit) - 1
    if not stationary and steps > len(orbit) - 1:
        raise PreconditionError("orbit is shorter than the requested path")

    if stationary:
        point = orbit.final
        coeffs = [(orbit.rule.jacobian(point),
                   _gaussian_root(noise_covariance(orbit.rule.update_probs(point))))]
        coeffs = coeffs * steps
    else:
        coeffs = [(orbit.rule.jacobian(orbit.states[k]),
                   _gaussian_root(noise_covariance(orbit.states[k + 1])))
                  for k in range(steps)]

    if paths is None:
        path = np.empty((steps + 1, m))
        path[0] = u0
        for k, (d, root) in enumerate(coeffs):
            path[k + 1] = d @ path[k] + root @ rng.standard_normal(m)
        return path

    out = np.empty((paths, steps + 1, m))
    out[:, 0, :] = u0
    for k, (d, root) in enumerate(coeffs):
        noise = rng.standard_normal((paths, m)) @ root.T
        out[:, k + 1, :] = out[:, k, :] @ d.T + noise
    return out


def ar1_covariance(orbit: Orbit, v0: Optional[np.ndarray] = None,
                   stationary: bool = False,
                   steps: Optional[int] = None) -> np.ndarray:
    """Exact second moments of the linear recursion: V_{k+1} = D V_k D' + S_k.

    ``v0`` defaults to the zero matrix (deterministic start).  Returns an
    array of shape (steps+1, M, M).
    """
    m = orbit.m
    if v0 is None:
        v0 = np.zeros((m, m))
    v0 = np.asarray(v0, dtype=np.float64)
    if v0.shape != (m, m):
        raise DimensionMismatch("initial covariance has the wrong shape")
    if steps is None:
        steps = len(orbit) - 1
    if not stationary and steps > len(orbit) - 1:
        raise PreconditionError("orbit is shorter than the requested horizon")

    out = np.empty((steps + 1, m, m))
    out[0] = v0
    if stationary:
        point = orbit.final
        d = orbit.rule.jacobian(point)
        sig = noise_covariance(orbit.rule.update_probs(point))
        for k in range(steps):
            out[k + 1] = d @ out[k] @ d.T + sig
    else:
        for k in range(steps):
            d = orbit.rule.jacobian(orbit.states[k])
            sig = noise_covariance(orbit.states[k + 1])
            out[k + 1] = d @ out[k] @ d.T + sig
    return out


def stationary_covariance(d: np.ndarray, sigma: np.ndarray,
                          tol: float = 1e-12, max_iter: int = 100_000,
                          divergence_cap: float = 1e12) -> np.ndarray:
    """Fixed point of V = D V D' + Sigma by iteration.

    Converges exactly when the derivative contracts the sum-zero subspace
    (the noise lives there); raises when iterates blow past the
    divergence cap, which is the expected behaviour for spectral radius
    above one.
    """
    d = np.asarray(d, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    v = np.zeros_like(sigma)
    for _ in range(max_iter):
        nxt = d @ v @ d.T + sigma
        if not np.all(np.isfinite(nxt)) or np.abs(nxt).max() > divergence_cap:
            raise NumericRangeError(
                "covariance recursion diverges (spectral radius >= 1 on the "
                "noise subspace)"
            )
        if np.abs(nxt - v).max() < tol:
            return nxt
        v = nxt
    raise NumericRangeError(f"covariance recursion did not settle in {max_iter} steps")


# ----------------------------------------------------------------------
# empirical residuals
# ----------------------------------------------------------------------

@dataclass
class ResidualSample:
    """Rescaled end-of-horizon deviations of simulated trajectories.

    ``residuals[r] = sqrt(N) * (X_k^(r) - psi_k)`` where the deterministic
    orbit restarts from the lattice-rounded initial point, so residuals
    are exactly zero at step 0.
    """

    residuals: np.ndarray       # (replicates, M)
    orbit: Orbit
    n: int
    step: int

    @property
    def empirical_mean(self) -> np.ndarray:
        return self.residuals.mean(axis=0)

    @property
    def empirical_cov(self) -> np.ndarray:
        return np.cov(self.residuals, rowvar=False, bias=False)


def rescaled_residuals(rule: UpdateRule, n: int, start, step: int,
                       replicates: int, rng: np.random.Generator) -> ResidualSample:
    """Simulate ``replicates`` trajectories for ``step`` generations and
    return the rescaled deviations from the deterministic orbit.

    The start is rounded to the size-``n`` lattice and the orbit is
    recomputed from the rounded point, so stochastic and deterministic
    paths share their initial state exactly.
    """
    start_vec = start.coords if isinstance(start, SimplexPoint) else np.asarray(start, dtype=np.float64)
    x0 = round_to_lattice(start_vec, n)
    orbit = iterate(rule, x0.as_frequencies(), step)
    counts = np.tile(x0.counts, (replicates, 1))
    for k in range(step):
        probs = rule.update_probs_batch(counts / n)
        probs = np.clip(probs, 0.0, None)
        probs /= probs.sum(axis=1, keepdims=True)
        counts = rng.multinomial(n, probs)
    residuals = np.sqrt(n) * (counts / n - orbit.states[step])
    return ResidualSample(residuals=residuals, orbit=orbit, n=n, step=step)


@dataclass(frozen=True)
class MomentComparison:
    """Entrywise agreement report between empirical and predicted moments."""

    mean_ok: bool
    cov_ok: bool
    max_mean_z: float           # |empirical mean| in standard-error units
    max_cov_excess: float       # worst (|diff| - allowance), <= 0 when cov_ok
    predicted_cov: np.ndarray
    empirical_cov: np.ndarray

    @property
    def ok(self) -> bool:
        return self.mean_ok and self.cov_ok


def compare_residual_moments(residuals: np.ndarray, predicted_cov: np.ndarray,
                             rel_tol: float = 0.10,
                             z_limit: float = 3.0) -> MomentComparison:
    """Check empirical mean against zero and empirical covariance against
    a prediction, at Monte Carlo resolution.

    The mean test uses ``z_limit`` standard errors per coordinate; the
    covariance test allows ``max(rel_tol * |predicted|, z_limit * SE)``
    per entry, with the usual Gaussian standard error for sample
    covariances, SE(C_ij) = sqrt((V_ii V_jj + V_ij^2) / R).
    """
    residuals = np.asarray(residuals, dtype=np.float64)
    predicted = np.asarray(predicted_cov, dtype=np.float64)
    r = residuals.shape[0]
    emp_mean = residuals.mean(axis=0)
    emp_cov = np.cov(residuals, rowvar=False, bias=False)

    mean_se = np.sqrt(np.clip(np.diag(emp_cov), 1e-300, None) / r)
    mean_z = np.abs(emp_mean) / mean_se
    mean_ok = bool(np.all(mean_z <= z_limit))

    diag = np.diag(predicted)
    cov_se = np.sqrt((np.outer(diag, diag) + predicted ** 2) / r)
    allowance = np.maximum(rel_tol * np.abs(predicted), z_limit * cov_se)
    excess = np.abs(emp_cov - predicted) - allowance
    return MomentComparison(
        mean_ok=mean_ok,
        cov_ok=bool(np.all(excess <= 0)),
        max_mean_z=float(mean_z.max()),
        max_cov_excess=float(excess.max()),
        predicted_cov=predicted,
        empirical_cov=emp_cov,
    )
