"""Cross-lagged panel models over the researcher-by-window indicator panel.

Builds covariance-structure models for a system of five yearly processes
(scaled field-normalized impact, three collaboration propensities, academic
rank) observed over W waves, with individual-effect latents, wave intercepts,
and a predetermined block (cohort, gender, every wave-1 value, plus the
wave-2 rank, which has no lag-2 history to condition on).

Four nested variants differ only in which cross-lagged paths are freed:

* ``A`` - no paths between impact and the collaboration propensities,
* ``B`` - propensities at t-1 predict impact at t,
* ``C`` - impact at t-1 predicts propensities at t,
* ``D`` - both directions.

The rank equation is identical across variants (rank responds to impact at
lags one and two and to each propensity at lag one).
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConvergenceError, IdentificationError, ModelSpecError, PanelforgeError
from .panel import PanelDataset
from .semcore import (
    CovarianceModel,
    DiffTest,
    FitOptions,
    FitResult,
    SampleMoments,
    chi_square_diff_test,
    classical_moments,
    fit,
    robust_moments,
)

logger = logging.getLogger(__name__)

VARIANTS = ("A", "B", "C", "D")

#: which variants are nested inside each variant (proper subsets of its
#: cross-lagged paths); used to warm-start fuller models and to keep the
#: difference tests monotone
_NESTED_INSIDE = {"A": (), "B": ("A",), "C": ("A",), "D": ("B", "C", "A")}

#: Processes in model order.  "fss" reads the panel's fss_scaled column; "c"
#: (overall co-authorship) is optional and off by default because it is a
#: near-deterministic ceiling for the three specific propensities.
CORE_PROCESSES = ("fss", "ci", "ced", "cef", "rank")

PROCESS_COLUMNS = {
    "fss": "fss_scaled",
    "c": "c",
    "ci": "ci",
    "ced": "ced",
    "cef": "cef",
    "rank": "rank",
}

PROCESS_LABELS = {
    "fss": "FSS",
    "c": "C",
    "ci": "CI",
    "ced": "CED",
    "cef": "CEF",
    "rank": "Rank",
}

COVARIATES = ("cohort", "gender")

COVARIATE_LABELS = {"cohort": "Cohort", "gender": "Gender (male)"}


@dataclass(frozen=True)
class ClpmSpec:
    """Structural choices shared by all variants of one analysis."""

    waves: int = 4
    include_c: bool = False
    time_invariant: bool = True
    time_effect: str = "dummies"  # "dummies" or "linear"
    correlated_effects: bool = False
    future_error_covariances: bool = False

    def __post_init__(self):
        if self.waves < 3:
            raise ModelSpecError(
                "at least three waves are needed for the lag-2 rank equation"
            )
        if self.time_effect not in ("dummies", "linear"):
            raise ModelSpecError(f"unknown time_effect {self.time_effect!r}")
        if self.include_c:
            warnings.warn(
                "including the overall co-authorship propensity alongside its "
                "three components invites near-collinearity; check the fitted "
                "standard errors",
                stacklevel=3,
            )

    @property
    def processes(self) -> tuple[str, ...]:
        if self.include_c:
            return ("fss", "c", "ci", "ced", "cef", "rank")
        return CORE_PROCESSES

    @property
    def propensities(self) -> tuple[str, ...]:
        return tuple(p for p in self.processes if p not in ("fss", "rank"))

    def endogenous_waves(self, process: str) -> tuple[int, ...]:
        """Waves at which the process has a structural equation."""
        first = 3 if process == "rank" else 2
        return tuple(range(first, self.waves + 1))

    def effect_processes(self) -> tuple[str, ...]:
        """Processes that get an individual-effect latent.

        A latent with a single endogenous wave cannot be separated from that
        wave's error variance, so it is only introduced once a process has at
        least two equations.
        """
        return tuple(
            p for p in self.processes if len(self.endogenous_waves(p)) >= 2
        )

    def predetermined(self) -> tuple[str, ...]:
        pre = list(COVARIATES)
        pre += [f"{p}_1" for p in self.processes]
        pre.append("rank_2")
        return tuple(pre)

    def observed_names(self) -> tuple[str, ...]:
        names = list(COVARIATES)
        for p in self.processes:
            names += [f"{p}_{w}" for w in range(1, self.waves + 1)]
        return tuple(names)


def cross_paths(spec: ClpmSpec, variant: str) -> tuple[tuple[str, str], ...]:
    """(dependent, predictor) pairs freed by the variant."""
    if variant not in VARIANTS:
        raise ModelSpecError(f"unknown variant {variant!r}")
    pairs: list[tuple[str, str]] = []
    if variant in ("B", "D"):
        pairs += [("fss", p) for p in spec.propensities]
    if variant in ("C", "D"):
        pairs += [(p, "fss") for p in spec.propensities]
    return tuple(pairs)


def _coef_id(spec: ClpmSpec, dep: str, pred: str, wave: int) -> str:
    base = f"b_{dep}_{pred}"
    if not spec.time_invariant:
        base += f"_w{wave}"
    return base


def build_model(spec: ClpmSpec, variant: str = "D") -> CovarianceModel:
    """Assemble the covariance-structure model for one variant."""
    crosses = set(cross_paths(spec, variant))
    effects = spec.effect_processes()
    latents = tuple(f"eff_{p}" for p in effects)
    model = CovarianceModel(spec.observed_names(), latents)

    def predictors(dep: str) -> tuple[str, ...]:
        preds = [dep]  # own lag first
        if dep == "rank":
            preds += ["fss"] + list(spec.propensities)
        elif dep == "fss":
            preds += [p for p in spec.propensities if ("fss", p) in crosses]
            preds += ["rank"]
        else:
            if (dep, "fss") in crosses:
                preds += ["fss"]
            preds += ["rank"]
        return tuple(preds)

    for dep in spec.processes:
        for w in spec.endogenous_waves(dep):
            y = f"{dep}_{w}"
            for pred in predictors(dep):
                model.path(y, f"{pred}_{w - 1}", param=_coef_id(spec, dep, pred, w))
            if dep == "rank":
                # second impact lag, distinct coefficient
                pid = "b_rank_fss2" if spec.time_invariant else f"b_rank_fss2_w{w}"
                model.path(y, f"fss_{w - 2}", param=pid)
            for cov in COVARIATES:
                model.path(y, cov, param=_coef_id(spec, dep, cov, w))
            if dep in effects:
                model.path(y, f"eff_{dep}", value=1.0)
            # wave intercept and error variance
            if spec.time_effect == "dummies":
                model.mean(y, param=f"nu_{dep}_w{w}")
            else:
                model.mean(y, terms=[(f"nu0_{dep}", 1.0), (f"trend_{dep}", float(w))])
            model.var(y, param=f"var_e_{dep}_w{w}")

    pre = spec.predetermined()
    for name in pre:
        model.mean(name, param=f"mu_{name}")
        model.var(name, param=f"var_{name}")
    for i, a in enumerate(pre):
        for b in pre[i + 1 :]:
            model.cov(a, b, param=f"cov_{a}_{b}")

    time_varying_pre = tuple(n for n in pre if n not in COVARIATES)
    for p in effects:
        model.var(f"eff_{p}", param=f"var_eff_{p}")
        for name in time_varying_pre:
            model.cov(f"eff_{p}", name, param=f"cov_eff_{p}_{name}")
    if spec.correlated_effects:
        for i, a in enumerate(effects):
            for b in effects[i + 1 :]:
                model.cov(f"eff_{a}", f"eff_{b}", param=f"cov_eff_{a}_eff_{b}")

    if spec.future_error_covariances:
        # relax sequential exogeneity: let each equation's disturbance move
        # with other processes' later outcomes through their disturbances
        errors = [
            (dep, w) for dep in spec.processes for w in spec.endogenous_waves(dep)
        ]
        for dep_a, wa in errors:
            for dep_b, wb in errors:
                if wa < wb and dep_a != dep_b:
                    model.cov(
                        f"{dep_a}_{wa}",
                        f"{dep_b}_{wb}",
                        param=f"cov_e_{dep_a}_w{wa}_e_{dep_b}_w{wb}",
                    )
    return model


def structural_param_ids(spec: ClpmSpec, variant: str = "D") -> tuple[str, ...]:
    """Ids of the regression coefficients of one variant, in model order."""
    model = build_model(spec, variant)
    return tuple(p for p in model.free_params() if p.startswith("b_"))


def wide_data(panel: PanelDataset, spec: ClpmSpec) -> tuple[np.ndarray, list[str]]:
    """n-by-p data matrix matching the model's observed variable order.

    Panel waves map positionally onto model waves 1..W.
    """
    if len(panel.waves) != spec.waves:
        raise ModelSpecError(
            f"panel has {len(panel.waves)} waves but the model expects {spec.waves}"
        )
    columns = [PROCESS_COLUMNS[p] for p in spec.processes]
    data, _ = panel.wide(columns)
    return data, list(spec.observed_names())


def panel_moments(
    panel: PanelDataset, spec: ClpmSpec, mode: str = "robust"
) -> SampleMoments:
    """First and second moments of the wide panel, classical or outlier-downweighted."""
    data, names = wide_data(panel, spec)
    if mode == "classical":
        return classical_moments(data, names)
    if mode == "robust":
        return robust_moments(data, names)
    raise ModelSpecError(f"unknown moments mode {mode!r}")


@dataclass
class VariantComparison:
    """Fits of the requested variants plus the nested-test selection."""

    spec: ClpmSpec
    moments: SampleMoments
    fits: dict[str, FitResult]
    failures: dict[str, str] = field(default_factory=dict)
    tests: dict[str, DiffTest] = field(default_factory=dict)
    selected: str | None = None

    def __getitem__(self, variant: str) -> FitResult:
        return self.fits[variant]

    def to_dict(self) -> dict:
        return {
            "selected": self.selected,
            "fits": {v: f.to_dict() for v, f in self.fits.items()},
            "failures": dict(self.failures),
            "tests": {
                v: {
                    "delta_chi_square": t.delta_chi_square,
                    "delta_df": t.delta_df,
                    "p_value": t.p_value,
                }
                for v, t in self.tests.items()
            },
        }


def _fit_one(spec, variant, moments, options):
    model = build_model(spec, variant)
    return fit(model, moments, options=options)


def fit_variants(
    panel: PanelDataset,
    spec: ClpmSpec | None = None,
    *,
    variants: tuple[str, ...] = VARIANTS,
    moments_mode: str = "robust",
    options: FitOptions | None = None,
    alpha: float = 0.05,
    threads: int = 1,
) -> VariantComparison:
    """Fit the requested variants and pick one by nested tests then AIC.

    Each restricted variant is tested against ``D``; the non-rejected
    restricted variants (p >= alpha) and ``D`` itself compete on AIC.  When
    every restriction is rejected the bidirectional model wins outright.
    Variants that fail to converge are excluded and recorded in ``failures``.
    """
    spec = spec or ClpmSpec(waves=len(panel.waves))
    options = options or FitOptions()
    options = replace(options, raise_on_nonconvergence=False)
    moments = panel_moments(panel, spec, moments_mode)

    fits: dict[str, FitResult] = {}
    failures: dict[str, str] = {}

    def run(variant: str) -> tuple[str, FitResult | None, str | None]:
        try:
            return variant, _fit_one(spec, variant, moments, options), None
        except ConvergenceError as exc:  # pragma: no cover - options disable this
            return variant, None, str(exc)
        except IdentificationError as exc:
            # empirical rank deficiency at this sample's solution; the other
            # variants may still be fine, and the warm-start pass below can
            # often rescue this one
            return variant, None, str(exc)

    if threads > 1 and len(variants) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, variants))
    else:
        results = [run(v) for v in variants]
    for variant, result, err in results:
        if result is not None and result.converged:
            fits[variant] = result
        elif result is not None:
            failures[variant] = result.message
            logger.warning("variant %s did not converge: %s", variant, result.message)
        else:
            failures[variant] = err or "fit failed"

    # Cold starts occasionally leave a variant in a poor basin: a fuller
    # model can land above a model nested inside it (flipping the sign of
    # its difference test), and a restricted model can get stranded on a
    # ridge where the line search stalls or the information matrix loses
    # rank at the stopping point.  Two warm-start passes repair both.
    # Refitting a fuller model from a nested solution (the extra cross
    # paths start at zero, so the first iterate reproduces the nested
    # optimum exactly) can only improve it; refitting a restricted model
    # from the best containing solution, with the dropped paths discarded,
    # rescues failed fits and basin mismatches.  Alternate until neither
    # pass improves anything; chi-square only ever decreases, so the round
    # cap is a formality.
    def try_warm(variant: str, donor_name: str) -> bool:
        current = fits.get(variant)
        donor = fits[donor_name]
        have = set(donor.param_names)
        start = {
            pid: (donor[pid].value if pid in have else 0.0)
            for pid in build_model(spec, variant).free_params()
        }
        try:
            warm = _fit_one(spec, variant, moments, replace(options, start=start))
        except PanelforgeError as exc:
            if current is None:
                failures.setdefault(variant, str(exc))
            return False
        if not warm.converged or (current is not None and warm.chi_square >= current.chi_square):
            return False
        logger.info(
            "variant %s refitted from %s's solution (chi2 %.3f -> %.3f)",
            variant,
            donor_name,
            math.inf if current is None else current.chi_square,
            warm.chi_square,
        )
        fits[variant] = warm
        failures.pop(variant, None)
        return True

    requested = sorted(set(variants), key=VARIANTS.index)
    retried_at: dict[str, float] = {}
    for _ in range(3):
        changed = False
        for variant in requested:
            donors = [u for u in _NESTED_INSIDE[variant] if u in fits]
            if not donors:
                continue
            best = min(donors, key=lambda u: fits[u].chi_square)
            current = fits.get(variant)
            if current is not None and current.chi_square <= fits[best].chi_square + 1e-9:
                continue
            changed |= try_warm(variant, best)
        for variant in reversed(requested):
            donors = [u for u in requested if variant in _NESTED_INSIDE[u] and u in fits]
            if not donors:
                continue
            best = min(donors, key=lambda u: fits[u].chi_square)
            donor_chi = fits[best].chi_square
            if variant in retried_at and donor_chi >= retried_at[variant] - 1e-9:
                continue
            retried_at[variant] = donor_chi
            changed |= try_warm(variant, best)
        if not changed:
            break

    tests: dict[str, DiffTest] = {}
    if "D" in fits:
        for restricted in ("A", "B", "C"):
            if restricted in fits:
                tests[restricted] = chi_square_diff_test(fits[restricted], fits["D"])

    selected: str | None = None
    if fits:
        if "D" in fits and tests:
            candidates = [v for v, t in tests.items() if t.p_value >= alpha]
            candidates.append("D")
            selected = min(candidates, key=lambda v: fits[v].aic)
        else:
            selected = min(fits, key=lambda v: fits[v].aic)
    return VariantComparison(
        spec=spec,
        moments=moments,
        fits=fits,
        failures=failures,
        tests=tests,
        selected=selected,
    )


# -- reporting ---------------------------------------------------------------


def _stars(p: float | None) -> str:
    from .panel import significance_stars

    if p is None:
        return ""
    return significance_stars(p, marginal=True)


def _cell(result: FitResult, pid: str) -> str:
    if pid not in result.param_names:
        return ""
    est = result.estimates[pid]
    stars = _stars(est.p_value)
    se = f" ({est.se:.3f})" if est.se is not None else ""
    return f"{est.value:.3f}{stars}{se}"


def _predictor_rows(spec: ClpmSpec, dep: str) -> list[tuple[str, str]]:
    """(label, coefficient id) rows for one equation, union over variants."""
    rows: list[tuple[str, str]] = []
    order = ["fss"] + list(spec.propensities) + ["rank"]
    lagged = [dep] + [p for p in order if p != dep]
    if dep == "rank":
        lagged = ["rank", "fss"] + list(spec.propensities)
    for pred in lagged:
        label = f"{PROCESS_LABELS[pred]} (t-1)"
        rows.append((label, f"b_{dep}_{pred}"))
    if dep == "rank":
        rows.append((f"{PROCESS_LABELS['fss']} (t-2)", "b_rank_fss2"))
    for cov in COVARIATES:
        rows.append((COVARIATE_LABELS[cov], f"b_{dep}_{cov}"))
    return rows


def _mean_r_squared(result: FitResult, spec: ClpmSpec, process: str) -> float | None:
    values = [
        result.r_squared.get(f"{process}_{w}")
        for w in spec.endogenous_waves(process)
    ]
    values = [v for v in values if v is not None]
    if not values:
        return None
    return float(np.mean(values))


def coefficient_table(comparison: VariantComparison) -> str:
    """Coefficient estimates by equation, one column per fitted variant."""
    from .tables import render_table

    spec = comparison.spec
    variants = [v for v in VARIANTS if v in comparison.fits]
    if not variants:
        return "no converged fits\n"
    headers = ["", *(f"Model {v}" for v in variants)]
    rows: list[list[str]] = []

    for dep in spec.processes:
        rows.append([f"{PROCESS_LABELS[dep]} equation"] + [""] * len(variants))
        first_wave = spec.endogenous_waves(dep)[0]
        if spec.time_effect == "dummies":
            icpt = f"nu_{dep}_w{first_wave}"
        else:
            icpt = f"nu0_{dep}"
        rows.append(
            ["  Intercept"] + [_cell(comparison.fits[v], icpt) for v in variants]
        )
        for label, pid in _predictor_rows(spec, dep):
            if not spec.time_invariant:
                pid = f"{pid}_w{first_wave}"
            cells = [_cell(comparison.fits[v], pid) for v in variants]
            if any(cells):
                rows.append([f"  {label}", *cells])
        r2_cells = []
        for v in variants:
            r2 = _mean_r_squared(comparison.fits[v], spec, dep)
            r2_cells.append("" if r2 is None else f"{100 * r2:.2f}")
        rows.append(["  R-squared (%)", *r2_cells])

    rows.append(["Fit"] + [""] * len(variants))

    def fit_row(label, getter, fmt):
        rows.append(
            [f"  {label}"]
            + [
                fmt(getter(comparison.fits[v])) if getter(comparison.fits[v]) is not None else ""
                for v in variants
            ]
        )

    fit_row("chi-square", lambda f: f.chi_square, lambda x: f"{x:.3f}")
    fit_row("df", lambda f: f.df, lambda x: f"{x:d}")
    fit_row("free parameters", lambda f: f.q, lambda x: f"{x:d}")
    fit_row("SRMR", lambda f: f.srmr, lambda x: f"{x:.3f}")
    fit_row("RMSEA", lambda f: f.rmsea, lambda x: f"{x:.3f}")
    fit_row("CFI", lambda f: f.cfi, lambda x: f"{x:.3f}")
    fit_row("TLI", lambda f: f.tli, lambda x: f"{x:.3f}")
    fit_row("AIC", lambda f: f.aic, lambda x: f"{x:.3f}")
    fit_row("N", lambda f: f.n, lambda x: f"{x:d}")

    out = [render_table(rows, headers)]
    if comparison.tests:
        out.append("\nNested tests against Model D:\n")
        test_rows = []
        for v in ("A", "B", "C"):
            if v in comparison.tests:
                t = comparison.tests[v]
                test_rows.append(
                    [
                        f"  {v} vs D",
                        f"{t.delta_chi_square:.3f}",
                        f"{t.delta_df:d}",
                        f"{t.p_value:.4f}",
                    ]
                )
        out.append(render_table(test_rows, ["", "delta chi-sq", "delta df", "p"]))
    if comparison.selected:
        out.append(f"\nSelected variant: {comparison.selected}\n")
    if comparison.failures:
        for v, msg in sorted(comparison.failures.items()):
            out.append(f"warning: variant {v} dropped ({msg})\n")
    sig = "significance: *** p<0.001, ** p<0.01, * p<0.05, ° p<0.1\n"
    return "".join(out) + sig
