"""Metastability and route-to-extinction experiments.

Near an interior equilibrium the finite population lingers for a long
time, then a large fluctuation pushes one type below a threshold or all
the way to extinction — and the theory predicts which type: one whose
expected next-generation share at the equilibrium is smallest.  This
module identifies that least-fit set, checks the threshold conditions
under which the prediction holds, runs stopped and absorbed trial
ensembles with reproducible parallelism, and aggregates them into
per-initial-condition outcome counts plus a histogram of distances from
the equilibrium at a random intermediate time.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import ConfigError, DomainError, NoInteriorEquilibrium, PreconditionError
from .fitness import UpdateRule, make_rule
from .meanfield import solve_interior_equilibrium
from .simplex import LatticePoint, SimplexPoint, SupportSet, round_to_lattice

#: One-sided 95% normal quantile for the trend checks.
Z_95 = 1.6448536269514722


# ----------------------------------------------------------------------
# least-fit analysis at equilibrium
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class LeastFitReport:
    """Smallest expected next-generation share at a profile.

    ``alpha`` is the minimal component of the update image, attained
    exactly on ``least_fit`` (1-based labels); ``beta`` is the smallest
    component over the remaining types.
    """

    alpha: float
    beta: float
    least_fit: SupportSet
    image: np.ndarray

    @property
    def separation(self) -> float:
        return self.beta - self.alpha


def least_fit(rule: UpdateRule, point) -> LeastFitReport:
    """Identify the types with the minimal expected next-generation share.

    Ties are exact: every index attaining the minimum goes into the
    least-fit set.  A uniform image has no least-fit type and is rejected.
    """
    x = point.coords if isinstance(point, SimplexPoint) else np.asarray(point, dtype=np.float64)
    image = rule.update_probs(x)
    alpha = float(image.min())
    mask = image == alpha
    if mask.all():
        raise DomainError(
            "update image is uniform; the least-fit set is undefined"
        )
    beta = float(image[~mask].min())
    return LeastFitReport(alpha=alpha, beta=beta,
                          least_fit=SupportSet.from_mask(mask), image=image)


@dataclass(frozen=True)
class ThresholdCheck:
    """Evaluation of the tube-width conditions at given (theta, eta)."""

    theta: float
    eta: float
    epsilon_theta: float
    epsilon_source: str            # "user" or "grid-estimate"
    eta_admissible_max: float
    separation_ok: bool            # 1-a-t > (1-b+t)^(1-eta)
    concentration_ok: bool         # 1-a-t > exp(-eps^2/2)


def check_thresholds(report: LeastFitReport, theta: float, eta: float,
                     epsilon_theta: float,
                     epsilon_source: str = "user") -> ThresholdCheck:
    """Check the admissibility of (theta, eta) and evaluate both
    threshold inequalities for the given tube width.

    ``theta`` must leave room between the least-fit level and the rest;
    ``eta`` must lie below the exponent ratio ceiling.  Out-of-range
    values raise with the admissible interval in the message.
    """
    alpha, beta = report.alpha, report.beta
    theta_max = (beta - alpha) / 2.0
    if not 0.0 < theta < theta_max:
        raise DomainError(
            f"theta={theta} outside the admissible interval (0, {theta_max})"
        )
    survive = 1.0 - alpha - theta       # in (0, 1): alpha + theta < 1
    drop = 1.0 - beta + theta           # in (0, 1) and > survive is impossible:
    # theta < (beta - alpha)/2 gives drop < survive
    eta_max = 1.0 - math.log(survive) / math.log(drop)
    if not 0.0 < eta < eta_max:
        raise DomainError(
            f"eta={eta} outside the admissible interval (0, {eta_max})"
        )
    separation_ok = survive > drop ** (1.0 - eta)
    concentration_ok = survive > math.exp(-(epsilon_theta ** 2) / 2.0)
    return ThresholdCheck(theta=theta, eta=eta, epsilon_theta=epsilon_theta,
                          epsilon_source=epsilon_source,
                          eta_admissible_max=eta_max,
                          separation_ok=separation_ok,
                          concentration_ok=concentration_ok)


# ----------------------------------------------------------------------
# single trials
# ----------------------------------------------------------------------

class TrialOutcome(NamedTuple):
    """Result of one simulated trial (threshold-stopped or absorbed)."""

    stop_time: int
    censored: bool
    least_index: int               # 0-based argmin at the stop state
    tie: bool
    sample_time: Optional[int]     # step at which d_eq was taken
    early_sample: bool             # sampled before the window (stop came first)
    d_eq: Optional[float]
    support_size: Optional[int]    # absorption mode only
    vanished: Optional[tuple[int, ...]]  # 0-based extinct indices
    event: Optional[bool]          # exactly one extinct type, in the least-fit set


def _clean(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def run_trial_threshold(rule: UpdateRule, x0: LatticePoint,
                        rng: np.random.Generator, *,
                        stop_threshold: float = 0.05,
                        sample_window: tuple[int, int] = (1000, 5000),
                        max_steps: int = 1_000_000,
                        equilibrium: Optional[np.ndarray] = None) -> TrialOutcome:
    """Simulate until some type's frequency drops to the stop threshold.

    Records the least-abundant type at the stop time (ties broken toward
    the lowest index and flagged) and the Euclidean distance to the
    equilibrium at a uniformly random step inside ``sample_window`` — or
    at the step before stopping when the trial ends sooner (flagged).
    Hitting ``max_steps`` first marks the trial censored.
    """
    lo, hi = int(sample_window[0]), int(sample_window[1])
    if not 0 <= lo <= hi:
        raise ConfigError(f"bad sample window {sample_window}")
    t_star = int(rng.integers(lo, hi + 1))
    n = x0.n
    counts = x0.counts.copy()
    sampled: Optional[np.ndarray] = None
    prev = counts

    def outcome(k: int, censored: bool) -> TrialOutcome:
        ties = np.flatnonzero(counts == counts.min())
        if sampled is not None:
            s_state, s_time, early = sampled, t_star, False
        else:
            s_state, s_time, early = prev, max(k - 1, 0), True
        d = (float(np.linalg.norm(s_state / n - equilibrium))
             if equilibrium is not None else None)
        return TrialOutcome(stop_time=k, censored=censored,
                            least_index=int(ties[0]), tie=ties.size > 1,
                            sample_time=s_time, early_sample=early, d_eq=d,
                            support_size=None, vanished=None, event=None)

    if counts.min() / n <= stop_threshold:
        return outcome(0, censored=False)
    for k in range(1, max_steps + 1):
        prev = counts
        p = rule.update_probs(counts / n)
        counts = rng.multinomial(n, _clean(p))
        if k == t_star:
            sampled = counts.copy()
        if counts.min() / n <= stop_threshold:
            return outcome(k, censored=False)
    return outcome(max_steps, censored=True)


def run_trial_absorption(rule: UpdateRule, x0: LatticePoint,
                         rng: np.random.Generator, *,
                         least_fit_set: SupportSet,
                         max_steps: int = 1_000_000) -> TrialOutcome:
    """Simulate until the first boundary hit (some type's count reaches 0)
    and classify it: does exactly one type vanish, and is it least-fit?

    Requires a mutation-free rule (so the boundary is absorbing) and an
    interior start.
    """
    if rule.mutation is not None:
        raise PreconditionError("absorption trials require a mutation-free rule")
    if np.any(x0.counts == 0):
        raise PreconditionError("absorption trials require an interior start")
    n = x0.n
    counts = x0.counts.copy()
    fit_mask = least_fit_set.to_mask(x0.m)
    for k in range(1, max_steps + 1):
        p = rule.update_probs(counts / n)
        counts = rng.multinomial(n, _clean(p))
        if counts.min() == 0:
            zeros = np.flatnonzero(counts == 0)
            ties = np.flatnonzero(counts == counts.min())
            support_size = int(np.count_nonzero(counts))
            event = support_size == x0.m - 1 and bool(fit_mask[zeros[0]])
            return TrialOutcome(stop_time=k, censored=False,
                                least_index=int(ties[0]), tie=ties.size > 1,
                                sample_time=None, early_sample=False, d_eq=None,
                                support_size=support_size,
                                vanished=tuple(int(z) for z in zeros),
                                event=event)
    ties = np.flatnonzero(counts == counts.min())
    return TrialOutcome(stop_time=max_steps, censored=True,
                        least_index=int(ties[0]), tie=ties.size > 1,
                        sample_time=None, early_sample=False, d_eq=None,
                        support_size=int(np.count_nonzero(counts)),
                        vanished=(), event=None)


# ----------------------------------------------------------------------
# ensembles
# ----------------------------------------------------------------------

@dataclass
class ExperimentSpec:
    """Plain-data description of a trial ensemble (JSON round-trippable)."""

    rule_params: dict
    n: int
    initials: list[list[float]]
    replicates: int
    seed: int
    mode: str = "threshold"                      # or "absorption"
    stop_threshold: float = 0.05
    sample_window: tuple[int, int] = (1000, 5000)
    max_steps: int = 1_000_000
    bin_width: float = 0.01

    def __post_init__(self):
        if self.mode not in ("threshold", "absorption"):
            raise ConfigError(f"unknown experiment mode {self.mode!r}")
        if self.replicates < 1:
            raise ConfigError("replicates must be positive")
        if self.n < 1:
            raise ConfigError("population size must be positive")
        if not self.initials:
            raise ConfigError("at least one initial condition is required")
        self.sample_window = (int(self.sample_window[0]), int(self.sample_window[1]))
        m = len(np.asarray(self.rule_params["matrix"]))
        for x0 in self.initials:
            if len(x0) != m:
                raise ConfigError("initial condition length does not match matrix")

    @classmethod
    def from_config(cls, cfg: dict) -> "ExperimentSpec":
        """Build from a config mapping with the documented field names."""
        cfg = dict(cfg)
        required = ("matrix", "N", "initials", "replicates", "seed")
        missing = [k for k in required if k not in cfg]
        if missing:
            raise ConfigError(f"config missing fields: {', '.join(missing)}")
        rule_params = {
            "matrix": cfg.pop("matrix"),
            "b": cfg.pop("b", None),
            "fitness": cfg.pop("fitness", "linear_fractional"),
            "beta": cfg.pop("beta", None),
            "mutation": cfg.pop("mutation", None),
        }
        omega, ratio = cfg.pop("omega", None), cfg.pop("omega_ratio", None)
        if omega is None and ratio is not None:
            omega = ratio / (1.0 + ratio)        # canonical form
        if rule_params["fitness"] == "linear_fractional":
            rule_params["omega"] = omega
        m_declared = cfg.pop("M", None)
        spec = cls(
            rule_params=rule_params,
            n=int(cfg.pop("N")),
            initials=[list(map(float, x)) for x in cfg.pop("initials")],
            replicates=int(cfg.pop("replicates")),
            seed=int(cfg.pop("seed")),
            mode=cfg.pop("mode", "threshold"),
            stop_threshold=float(cfg.pop("stop_threshold", 0.05)),
            sample_window=tuple(cfg.pop("sample_window", (1000, 5000))),
            max_steps=int(cfg.pop("max_steps", 1_000_000)),
            bin_width=float(cfg.pop("bin_width", 0.01)),
        )
        if cfg:
            raise ConfigError(f"unknown config fields: {', '.join(sorted(cfg))}")
        if m_declared is not None and int(m_declared) != spec.m:
            raise ConfigError(
                f"declared M={m_declared} but the matrix is {spec.m}x{spec.m}"
            )
        return spec

    @property
    def m(self) -> int:
        return len(self.rule_params["matrix"])

    def to_config(self) -> dict:
        """Resolved config mapping; feeding it back reproduces this spec."""
        out = {
            "matrix": [list(map(float, row)) for row in self.rule_params["matrix"]],
            "N": self.n,
            "M": self.m,
            "initials": [list(row) for row in self.initials],
            "replicates": self.replicates,
            "seed": self.seed,
            "mode": self.mode,
            "stop_threshold": self.stop_threshold,
            "sample_window": list(self.sample_window),
            "max_steps": self.max_steps,
            "bin_width": self.bin_width,
            "fitness": self.rule_params.get("fitness", "linear_fractional"),
        }
        for key in ("b", "beta", "mutation", "omega"):
            if self.rule_params.get(key) is not None:
                val = self.rule_params[key]
                out[key] = np.asarray(val).tolist() if key in ("b", "mutation") else val
        return out

    def build_rule(self) -> UpdateRule:
        return make_rule(**self.rule_params)


def trial_rng(seed: int, initial_idx: int, trial: int) -> np.random.Generator:
    """The canonical per-trial stream: results depend only on these three
    integers, never on scheduling."""
    ss = np.random.SeedSequence(seed, spawn_key=(initial_idx, trial))
    return np.random.Generator(np.random.PCG64(ss))


def _experiment_context(spec: ExperimentSpec):
    """Shared derived quantities: (rule, equilibrium or None, least-fit set
    or None)."""
    rule = spec.build_rule()
    eq = None
    fit_set = None
    try:
        result = solve_interior_equilibrium(spec.rule_params["matrix"])
        if result.is_interior:
            eq = result.vector
    except NoInteriorEquilibrium:
        eq = None
    if eq is not None:
        try:
            fit_set = least_fit(rule, eq).least_fit
        except DomainError:
            fit_set = None
    if spec.mode == "absorption" and fit_set is None:
        raise PreconditionError(
            "absorption experiments need an interior equilibrium with a "
            "non-uniform update image to define the least-fit set"
        )
    return rule, eq, fit_set


def _run_chunk(cfg: dict, initial_idx: int, start: int,
               stop: int) -> list[tuple[int, int, TrialOutcome]]:
    """Worker: trials [start, stop) of one initial condition."""
    spec = ExperimentSpec.from_config(cfg)
    rule, eq, fit_set = _experiment_context(spec)
    x0 = round_to_lattice(np.asarray(spec.initials[initial_idx]), spec.n)
    rows = []
    for trial in range(start, stop):
        rng = trial_rng(spec.seed, initial_idx, trial)
        if spec.mode == "threshold":
            out = run_trial_threshold(
                rule, x0, rng, stop_threshold=spec.stop_threshold,
                sample_window=spec.sample_window, max_steps=spec.max_steps,
                equilibrium=eq)
        else:
            out = run_trial_absorption(rule, x0, rng, least_fit_set=fit_set,
                                       max_steps=spec.max_steps)
        rows.append((initial_idx, trial, out))
    return rows


@dataclass
class ExperimentResult:
    """Aggregated ensemble outcome.

    ``counts[i, j]`` is the number of uncensored trials of initial
    condition ``i`` whose least-abundant (threshold mode) or vanished-set
    argmin (absorption mode) type was ``j``.
    """

    spec: ExperimentSpec
    counts: np.ndarray                 # (I, M) int64
    censored: np.ndarray               # (I,) int64
    rows: list[tuple[int, int, TrialOutcome]]
    histogram_edges: np.ndarray
    histogram_counts: np.ndarray
    equilibrium: Optional[np.ndarray]
    least_fit_labels: Optional[list[int]]
    event_counts: Optional[np.ndarray] = None     # absorption mode, per initial
    mean_stop_time: Optional[np.ndarray] = None   # uncensored mean, per initial

    def summary_dict(self) -> dict:
        out = {
            "config": self.spec.to_config(),
            "counts": self.counts.tolist(),
            "censored": self.censored.tolist(),
            "equilibrium": None if self.equilibrium is None else self.equilibrium.tolist(),
            "least_fit_types": self.least_fit_labels,
            "replicates": self.spec.replicates,
        }
        if self.event_counts is not None:
            out["event_counts"] = self.event_counts.tolist()
        if self.mean_stop_time is not None:
            out["mean_stop_time"] = [None if not np.isfinite(v) else float(v)
                                     for v in self.mean_stop_time]
        return out

    TRIAL_COLUMNS = ("initial_idx", "trial", "stop_time", "least_type", "tie",
                     "sample_time", "early_sample", "d_eq", "support_size",
                     "vanished_types", "event", "censored")

    def trial_rows(self):
        """Rows for trials.csv, aligned with TRIAL_COLUMNS."""
        for initial_idx, trial, out in self.rows:
            yield (
                initial_idx, trial, out.stop_time, out.least_index + 1,
                int(out.tie),
                "" if out.sample_time is None else out.sample_time,
                int(out.early_sample),
                "" if out.d_eq is None else repr(out.d_eq),
                "" if out.support_size is None else out.support_size,
                "" if out.vanished is None else ";".join(str(v + 1) for v in out.vanished),
                "" if out.event is None else int(out.event),
                int(out.censored),
            )


def run_experiment(spec: ExperimentSpec, threads: int = 1) -> ExperimentResult:
    """Run the full ensemble: every initial condition times ``replicates``
    trials, parallel over chunks, merged deterministically.

    Results are identical for any ``threads`` because each trial draws
    from its own (seed, initial, trial) stream.
    """
    if threads < 1:
        raise ConfigError("threads must be positive")
    cfg = spec.to_config()
    _, eq, fit_set = _experiment_context(spec)

    n_initials = len(spec.initials)
    chunk = max(1, math.ceil(spec.replicates / max(threads * 4, 1)))
    tasks = [(i, s, min(s + chunk, spec.replicates))
             for i in range(n_initials)
             for s in range(0, spec.replicates, chunk)]

    all_rows: list[tuple[int, int, TrialOutcome]] = []
    if threads == 1:
        for i, s, e in tasks:
            all_rows.extend(_run_chunk(cfg, i, s, e))
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_run_chunk, cfg, i, s, e) for i, s, e in tasks]
            for fut in futures:
                all_rows.extend(fut.result())
    all_rows.sort(key=lambda row: (row[0], row[1]))

    m = spec.m
    counts = np.zeros((n_initials, m), dtype=np.int64)
    censored = np.zeros(n_initials, dtype=np.int64)
    event_counts = np.zeros(n_initials, dtype=np.int64)
    stop_sums = np.zeros(n_initials)
    stop_nums = np.zeros(n_initials, dtype=np.int64)
    d_values = []
    for initial_idx, _, out in all_rows:
        if out.censored:
            censored[initial_idx] += 1
            continue
        counts[initial_idx, out.least_index] += 1
        stop_sums[initial_idx] += out.stop_time
        stop_nums[initial_idx] += 1
        if out.d_eq is not None:
            d_values.append(out.d_eq)
        if out.event:
            event_counts[initial_idx] += 1

    n_bins = int(round(1.5 / spec.bin_width))
    edges = np.linspace(0.0, n_bins * spec.bin_width, n_bins + 1)
    hist, _ = np.histogram(np.asarray(d_values), bins=edges)

    with np.errstate(invalid="ignore"):
        mean_stop = np.where(stop_nums > 0, stop_sums / np.maximum(stop_nums, 1),
                             np.nan)
    return ExperimentResult(
        spec=spec, counts=counts, censored=censored, rows=all_rows,
        histogram_edges=edges, histogram_counts=hist,
        equilibrium=eq,
        least_fit_labels=sorted(fit_set.labels) if fit_set is not None else None,
        event_counts=event_counts if spec.mode == "absorption" else None,
        mean_stop_time=mean_stop,
    )


# ----------------------------------------------------------------------
# trend checks across population sizes
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class TrendReport:
    """Monotone-proportion check over an ordered ladder of sample points.

    A pair fails when the later proportion is significantly *below* the
    earlier one (one-sided two-proportion z-test); the trend holds when no
    pair fails.
    """

    ok: bool
    z_values: tuple[float, ...]
    proportions: tuple[float, ...]


def increasing_proportion_trend(counts: Sequence[tuple[int, int]],
                                z_crit: float = Z_95) -> TrendReport:
    """Check that binomial proportions do not significantly decrease along
    a ladder; ``counts`` holds (successes, trials) per rung."""
    if len(counts) < 2:
        raise DomainError("need at least two ladder points")
    props = []
    zs = []
    for successes, trials in counts:
        if trials < 1 or not 0 <= successes <= trials:
            raise DomainError("bad (successes, trials) pair")
        props.append(successes / trials)
    ok = True
    for (s1, t1), (s2, t2) in zip(counts, counts[1:]):
        pool = (s1 + s2) / (t1 + t2)
        se = math.sqrt(max(pool * (1.0 - pool), 1e-300) * (1.0 / t1 + 1.0 / t2))
        z = (s1 / t1 - s2 / t2) / se
        zs.append(z)
        if z > z_crit:
            ok = False
    return TrendReport(ok=ok, z_values=tuple(zs), proportions=tuple(props))
