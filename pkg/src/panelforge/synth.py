"""Synthetic panels from a known lag-1 dynamic system, plus recovery checks.

The generator mirrors the model family in :mod:`panelforge.clpm` exactly:
Gaussian disturbances, a Gaussian individual effect per process, time-constant
coefficients, additive wave offsets from wave 2 on, and a burn-in long enough
that wave 1 is a draw from the stationary distribution (so the wave-1 block
can be treated as predetermined with unrestricted moments).
"""

from __future__ import annotations

import logging
import re
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import AlignmentError, InputError, StabilityError
from .panel import PanelDataset, PanelObservation
from .semcore import FitResult
from .tables import render_table

logger = logging.getLogger(__name__)

DEFAULT_SEED = 20170904

#: AR(1) used for the overall co-authorship column when it is not part of the
#: simulated system: the panel file format carries it, the default models do
#: not, so it only needs to look plausible (high mean, mild persistence).
_COMPANION_C = {"mean": 0.90, "ar": 0.5, "sd": 0.05}


@dataclass(frozen=True)
class EquationParams:
    """One process's structural equation in the generating system."""

    error_sd: float
    effect_sd: float
    lags: Mapping[str, float] = field(default_factory=dict)
    fss_lag2: float = 0.0
    cohort: float = 0.0
    gender: float = 0.0
    intercept: float = 0.0

    def __post_init__(self):
        if self.error_sd <= 0:
            raise InputError("error_sd must be positive")
        if self.effect_sd < 0:
            raise InputError("effect_sd must be non-negative")


@dataclass(frozen=True)
class TrueParameters:
    """Full generating system; equation insertion order fixes process order."""

    equations: Mapping[str, EquationParams]
    cohort_mean: float = 1955.0
    cohort_sd: float = 8.6
    male_share: float = 0.7
    #: per process, additive intercept shifts for waves 2, 3, ... in order
    wave_offsets: Mapping[str, Sequence[float]] = field(default_factory=dict)
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if not self.equations:
            raise InputError("at least one equation is required")
        if not 0.0 <= self.male_share <= 1.0:
            raise InputError("male_share must lie in [0, 1]")
        unknown = [
            pred
            for eq in self.equations.values()
            for pred in eq.lags
            if pred not in self.equations
        ]
        if unknown:
            raise InputError(f"lag on unsimulated process(es): {sorted(set(unknown))}")
        if any(eq.fss_lag2 for eq in self.equations.values()) and "fss" not in self.equations:
            raise InputError("fss_lag2 set but no fss process is simulated")

    @property
    def processes(self) -> tuple[str, ...]:
        return tuple(self.equations)

    def lag_matrix(self) -> np.ndarray:
        procs = self.processes
        b = np.zeros((len(procs), len(procs)))
        for i, dep in enumerate(procs):
            for j, pred in enumerate(procs):
                b[i, j] = self.equations[dep].lags.get(pred, 0.0)
        return b

    def lag2_vector(self) -> np.ndarray:
        return np.array([self.equations[p].fss_lag2 for p in self.processes])

    def companion_matrix(self) -> np.ndarray:
        """State transition of (y_t, fss_{t-1}); governs stationarity."""
        procs = self.processes
        k = len(procs)
        extra = 1 if "fss" in procs else 0
        m = np.zeros((k + extra, k + extra))
        m[:k, :k] = self.lag_matrix()
        if extra:
            m[:k, k] = self.lag2_vector()
            m[k, procs.index("fss")] = 1.0
        return m

    def stationary_means(self) -> np.ndarray:
        """Per-process means implied by intercepts, covariates, and lags."""
        procs = self.processes
        k = len(procs)
        covs = np.array([self.cohort_mean, self.male_share])
        rhs = np.array(
            [
                self.equations[p].intercept
                + self.equations[p].cohort * covs[0]
                + self.equations[p].gender * covs[1]
                for p in procs
            ]
        )
        lhs = np.eye(k) - self.lag_matrix()
        if "fss" in procs:
            lhs[:, procs.index("fss")] -= self.lag2_vector()
        return np.linalg.solve(lhs, rhs)

    def param_value(self, pid: str) -> float | None:
        """True value of a fitted structural-coefficient id, if it maps."""
        pid = re.sub(r"_w\d+$", "", pid)
        if not pid.startswith("b_"):
            return None
        rest = pid[2:]
        if rest == "rank_fss2":
            eq = self.equations.get("rank")
            return None if eq is None else eq.fss_lag2
        for dep in sorted(self.equations, key=len, reverse=True):
            if rest.startswith(dep + "_"):
                pred = rest[len(dep) + 1 :]
                eq = self.equations[dep]
                if pred == "cohort":
                    return eq.cohort
                if pred == "gender":
                    return eq.gender
                if pred in self.equations:
                    return eq.lags.get(pred, 0.0)
                return None
        return None


def check_stability(true: TrueParameters, margin: float = 1e-9) -> float:
    """Spectral radius of the companion matrix; raises when not below one."""
    radius = float(np.max(np.abs(np.linalg.eigvals(true.companion_matrix()))))
    if radius >= 1.0 - margin:
        raise StabilityError(
            f"lag system is not stationary (spectral radius {radius:.6f})"
        )
    return radius


def _solve_intercepts(
    equations: dict[str, EquationParams],
    targets: Mapping[str, float],
    cohort_mean: float,
    male_share: float,
) -> dict[str, EquationParams]:
    """Back-solve intercepts so stationary means hit the targets."""
    procs = tuple(equations)
    k = len(procs)
    b = np.zeros((k, k))
    lag2 = np.zeros(k)
    for i, dep in enumerate(procs):
        for j, pred in enumerate(procs):
            b[i, j] = equations[dep].lags.get(pred, 0.0)
        lag2[i] = equations[dep].fss_lag2
    mu = np.array([targets[p] for p in procs])
    lhs = np.eye(k) - b
    if "fss" in procs:
        lhs[:, procs.index("fss")] -= lag2
    covs = np.array(
        [
            equations[p].cohort * cohort_mean + equations[p].gender * male_share
            for p in procs
        ]
    )
    intercepts = lhs @ mu - covs
    out = {}
    for i, p in enumerate(procs):
        eq = equations[p]
        out[p] = EquationParams(
            error_sd=eq.error_sd,
            effect_sd=eq.effect_sd,
            lags=dict(eq.lags),
            fss_lag2=eq.fss_lag2,
            cohort=eq.cohort,
            gender=eq.gender,
            intercept=float(intercepts[i]),
        )
    return out


#: stationary means the default systems are calibrated to
_MEAN_TARGETS = {"fss": 1.0, "ci": 0.60, "ced": 0.50, "cef": 0.30, "rank": 2.8}


def default_true_parameters(
    variant: str = "D", *, seed: int = DEFAULT_SEED
) -> TrueParameters:
    """Generating systems sized so n about 5000 detects the cross paths.

    ``variant`` zeroes the corresponding cross-lagged blocks: ``A`` has none,
    ``B`` keeps propensity-to-impact, ``C`` keeps impact-to-propensity, ``D``
    keeps both.  The rank equation is shared.
    """
    if variant not in ("A", "B", "C", "D"):
        raise InputError(f"unknown variant {variant!r}")
    to_fss = variant in ("B", "D")
    from_fss = variant in ("C", "D")
    # Propensity noise is kept small relative to the distance between the
    # stationary mean and the [0, 1] bounds, so recorded values are almost
    # never clamped and the linear-Gaussian oracle stays exact.
    equations = {
        "fss": EquationParams(
            error_sd=0.45,
            effect_sd=0.25,
            lags={
                "fss": 0.50,
                "ci": 0.12 if to_fss else 0.0,
                "ced": 0.10 if to_fss else 0.0,
                "cef": -0.12 if to_fss else 0.0,
                "rank": 0.02,
            },
            cohort=-0.004,
            gender=-0.150,
        ),
        # Propensity effect variances sit well away from zero relative to
        # their sampling noise at Monte Carlo sample sizes; tinier values
        # yield boundary (zero-variance) solutions in a visible share of
        # n ~ 400 replications.
        "ci": EquationParams(
            error_sd=0.10,
            effect_sd=0.09,
            lags={"ci": 0.35, "fss": 0.020 if from_fss else 0.0, "rank": 0.010},
            cohort=0.002,
            gender=-0.030,
        ),
        "ced": EquationParams(
            error_sd=0.10,
            effect_sd=0.09,
            lags={"ced": 0.38, "fss": 0.015 if from_fss else 0.0, "rank": 0.012},
            cohort=0.001,
            gender=-0.020,
        ),
        "cef": EquationParams(
            error_sd=0.07,
            effect_sd=0.065,
            lags={"cef": 0.40, "fss": 0.025 if from_fss else 0.0, "rank": 0.010},
            cohort=-0.001,
            gender=0.020,
        ),
        "rank": EquationParams(
            error_sd=0.30,
            effect_sd=0.18,
            lags={"rank": 0.55, "fss": 0.08, "ci": 0.05, "ced": 0.04, "cef": 0.06},
            fss_lag2=0.04,
            cohort=-0.005,
            gender=0.080,
        ),
    }
    equations = _solve_intercepts(equations, _MEAN_TARGETS, 1955.0, 0.7)
    offsets = {
        "fss": (0.08, 0.12, 0.10),
        "ci": (0.010, 0.015, 0.020),
        "ced": (0.010, 0.015, 0.020),
        "cef": (0.005, 0.010, 0.015),
        "rank": (0.05, 0.10, 0.12),
    }
    return TrueParameters(equations=equations, wave_offsets=offsets, seed=seed)


@dataclass(frozen=True)
class SimulationInfo:
    seed: int
    n: int
    waves: int
    burn_in: int
    clamped: int
    clamp_candidates: int
    spectral_radius: float
    #: drawn individual effects per process, shape (n,); lets diagnostics
    #: regress out the latent heterogeneity exactly
    effects: dict | None = None

    @property
    def clamp_rate(self) -> float:
        if self.clamp_candidates == 0:
            return 0.0
        return self.clamped / self.clamp_candidates


def simulate_panel(
    true: TrueParameters,
    n: int,
    waves: int = 4,
    *,
    seed: int | None = None,
    round_rank: bool = False,
    burn_in: int = 60,
    clamp_warn_rate: float = 0.02,
    return_info: bool = False,
):
    """Draw a balanced panel of ``n`` researchers over ``waves`` waves.

    Each researcher gets an independent stream spawned from the root seed, so
    researcher ``i``'s trajectory does not depend on ``n``.  Per stream the
    draw order is cohort, gender, individual effects, disturbances, then the
    companion co-authorship noise when that column is not simulated.

    Propensity columns are clamped to [0, 1] at recording time (the recursion
    itself stays linear); a clamp rate above ``clamp_warn_rate`` triggers a
    warning because heavy clamping bends the linear system the fitters assume.
    """
    if n < 1:
        raise InputError("n must be at least 1")
    if waves < 2:
        raise InputError("at least two waves are required")
    radius = check_stability(true)
    procs = true.processes
    k = len(procs)
    b = true.lag_matrix()
    lag2 = true.lag2_vector()
    fss_idx = procs.index("fss") if "fss" in procs else None
    intercepts = np.array([true.equations[p].intercept for p in procs])
    cov_coef = np.array(
        [[true.equations[p].cohort, true.equations[p].gender] for p in procs]
    )
    error_sd = np.array([true.equations[p].error_sd for p in procs])
    effect_sd = np.array([true.equations[p].effect_sd for p in procs])
    offsets = np.zeros((k, waves + 1))
    for i, p in enumerate(procs):
        shifts = tuple(true.wave_offsets.get(p, ()))
        for idx, value in enumerate(shifts[: waves - 1]):
            offsets[i, idx + 2] = value

    root_seed = true.seed if seed is None else seed
    streams = np.random.SeedSequence(root_seed).spawn(n)
    steps = burn_in + waves
    simulate_c = "c" not in procs

    cohort = np.empty(n)
    gender = np.empty(n, dtype=int)
    effects = np.empty((n, k))
    noise = np.empty((n, steps, k))
    c_noise = np.empty((n, steps)) if simulate_c else None
    for i, stream in enumerate(streams):
        rng = np.random.default_rng(stream)
        cohort[i] = np.round(rng.normal(true.cohort_mean, true.cohort_sd))
        gender[i] = rng.binomial(1, true.male_share)
        effects[i] = rng.normal(0.0, 1.0, k) * effect_sd
        noise[i] = rng.normal(0.0, 1.0, (steps, k)) * error_sd
        if simulate_c:
            c_noise[i] = rng.normal(0.0, 1.0, steps)

    covs = np.column_stack([cohort, gender.astype(float)])
    base = intercepts + covs @ cov_coef.T + effects  # (n, k), time-constant part

    y_prev = np.zeros((n, k))
    fss_lag1 = np.zeros(n)
    fss_lag2_vals = np.zeros(n)
    c_prev = np.full(n, _COMPANION_C["mean"])
    observed = np.empty((n, waves, k))
    c_observed = np.empty((n, waves)) if simulate_c else None
    for step in range(steps):
        wave = step - burn_in + 1  # 1..waves once past burn-in
        y = base + y_prev @ b.T + noise[:, step, :]
        if fss_idx is not None:
            y += np.outer(fss_lag2_vals, lag2)
        if 2 <= wave <= waves:
            y += offsets[:, wave]
        if fss_idx is not None:
            fss_lag2_vals = fss_lag1
            fss_lag1 = y[:, fss_idx]
        y_prev = y
        if simulate_c:
            c_now = (
                _COMPANION_C["mean"]
                + _COMPANION_C["ar"] * (c_prev - _COMPANION_C["mean"])
                + _COMPANION_C["sd"] * c_noise[:, step]
            )
            c_prev = c_now
        if wave >= 1:
            observed[:, wave - 1, :] = y
            if simulate_c:
                c_observed[:, wave - 1] = c_now

    prop_idx = [i for i, p in enumerate(procs) if p in ("c", "ci", "ced", "cef")]
    clamped = 0
    candidates = n * waves * len(prop_idx)
    if prop_idx:
        block = observed[:, :, prop_idx]
        out_of_range = (block < 0.0) | (block > 1.0)
        clamped = int(np.count_nonzero(out_of_range))
        observed[:, :, prop_idx] = np.clip(block, 0.0, 1.0)
    if simulate_c:
        c_observed = np.clip(c_observed, 0.0, 1.0)
    info = SimulationInfo(
        seed=root_seed,
        n=n,
        waves=waves,
        burn_in=burn_in,
        clamped=clamped,
        clamp_candidates=candidates,
        spectral_radius=radius,
        effects={proc: effects[:, j].copy() for j, proc in enumerate(procs)},
    )
    if candidates and info.clamp_rate > clamp_warn_rate:
        warnings.warn(
            f"{100 * info.clamp_rate:.1f}% of propensity values were clamped to "
            "[0, 1]; the generating system drifts outside the unit interval "
            "often enough to distort fits",
            stacklevel=2,
        )

    rank_idx = procs.index("rank") if "rank" in procs else None
    if round_rank and rank_idx is not None:
        observed[:, :, rank_idx] = np.clip(
            np.round(observed[:, :, rank_idx]), 1.0, 4.0
        )

    width = len(str(n))
    rows = []
    for i in range(n):
        rid = f"r{i:0{width}d}"
        for w in range(waves):
            values = {p: float(observed[i, w, j]) for j, p in enumerate(procs)}
            c_val = values["c"] if "c" in values else float(c_observed[i, w])
            rows.append(
                PanelObservation(
                    researcher_id=rid,
                    wave=w + 1,
                    fss_scaled=values.get("fss", 0.0),
                    c=c_val,
                    ci=values.get("ci", 0.0),
                    ced=values.get("ced", 0.0),
                    cef=values.get("cef", 0.0),
                    rank=values.get("rank", 1.0),
                    cohort=int(cohort[i]),
                    gender=int(gender[i]),
                )
            )
    panel = PanelDataset(rows)
    if return_info:
        return panel, info
    return panel


@dataclass(frozen=True)
class RecoveryRow:
    param_id: str
    truth: float
    estimate: float
    se: float | None

    @property
    def z(self) -> float | None:
        if self.se is None or self.se == 0.0:
            return None
        return (self.estimate - self.truth) / self.se

    @property
    def covered(self) -> bool:
        """True when the estimate sits within three standard errors of truth."""
        if self.se is None:
            return False
        return abs(self.estimate - self.truth) <= 3.0 * self.se


@dataclass(frozen=True)
class RecoveryReport:
    rows: tuple[RecoveryRow, ...]

    @property
    def coverage(self) -> float:
        if not self.rows:
            return 1.0
        return sum(r.covered for r in self.rows) / len(self.rows)

    @property
    def worst(self) -> RecoveryRow | None:
        scored = [r for r in self.rows if r.z is not None]
        if not scored:
            return None
        return max(scored, key=lambda r: abs(r.z))

    def to_text(self) -> str:
        body = [
            [
                r.param_id,
                f"{r.truth:.4f}",
                f"{r.estimate:.4f}",
                "" if r.se is None else f"{r.se:.4f}",
                "" if r.z is None else f"{r.z:+.2f}",
                "yes" if r.covered else "NO",
            ]
            for r in self.rows
        ]
        table = render_table(
            body, ["parameter", "truth", "estimate", "se", "z", "within 3 se"]
        )
        return table + f"coverage: {100 * self.coverage:.1f}%\n"

    def to_dict(self) -> dict:
        return {
            "coverage": self.coverage,
            "rows": [
                {
                    "param_id": r.param_id,
                    "truth": r.truth,
                    "estimate": r.estimate,
                    "se": r.se,
                    "z": r.z,
                    "covered": r.covered,
                }
                for r in self.rows
            ],
        }


def recovery_report(true: TrueParameters, result: FitResult) -> RecoveryReport:
    """Compare every fitted structural coefficient against its true value.

    Raises :class:`AlignmentError` when a fitted ``b_*`` id has no counterpart
    in the generating system (e.g. the fit includes a process that was never
    simulated).
    """
    rows = []
    for pid in result.param_names:
        if not pid.startswith("b_"):
            continue
        truth = true.param_value(pid)
        if truth is None:
            raise AlignmentError(
                f"fitted coefficient {pid!r} has no true counterpart"
            )
        est = result.estimates[pid]
        rows.append(
            RecoveryRow(
                param_id=pid,
                truth=float(truth),
                estimate=float(est.value),
                se=est.se,
            )
        )
    if not rows:
        raise AlignmentError("fit contains no structural coefficients")
    return RecoveryReport(rows=tuple(rows))
