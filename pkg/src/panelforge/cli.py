"""Command-line entry points.

Exit codes: 0 success, 2 input/configuration problems, 3 optimizer
non-convergence, 4 structurally invalid model specifications.  All file
outputs are byte-deterministic for a given input and seed: no timestamps,
no absolute paths, stable float formatting.
"""

from __future__ import annotations

import csv
import functools
import io
import json
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import __version__
from .clpm import VARIANTS, ClpmSpec, coefficient_table, fit_variants
from .config import RunConfig
from .corpus import (
    filter_document_types,
    link_roster,
    load_publications,
    load_roster,
    make_windows,
    select_active_population,
)
from .errors import (
    ConvergenceError,
    DegenerateColumnError,
    InputError,
    ModelSpecError,
    PanelforgeError,
)
from .indicators import compute_window_indicators, write_indicators_csv
from .mediation import PathSystem, mediation_csv_rows, mediation_report, mediation_table
from .panel import (
    VALUE_COLUMNS,
    build_panel,
    correlation_matrix,
    descriptive_stats,
    read_panel_csv,
    significance_stars,
    write_panel_csv,
)
from .semcore import FitOptions
from .synth import default_true_parameters, simulate_panel
from .tables import render_table


def _exit_code(exc: PanelforgeError) -> int:
    if isinstance(exc, ConvergenceError):
        return 3
    if isinstance(exc, ModelSpecError):
        return 4
    return 2


def cli_errors(f):
    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except PanelforgeError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(_exit_code(exc))
        except OSError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)

    return wrapper


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return value if np.isfinite(value) else None
    return obj


def _print_json(payload) -> None:
    click.echo(json.dumps(_jsonable(payload), indent=2, sort_keys=True))


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _csv_text(rows) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerows(rows)
    return out.getvalue()


# -- shared pipeline steps ----------------------------------------------------


def _load_corpus(cfg: RunConfig):
    if not cfg.roster or not cfg.publications:
        raise InputError("both a roster and a publications file are required")
    roster = load_roster(cfg.roster)
    raw_pubs = load_publications(cfg.publications)
    pubs = filter_document_types(raw_pubs, frozenset(cfg.excluded_doc_types))
    pubs = link_roster(pubs, roster)
    windows = make_windows(cfg.first_year, cfg.window_length, cfg.window_count)
    active = select_active_population(roster, pubs, windows)
    return roster, raw_pubs, pubs, windows, active


def _indicator_rows(cfg: RunConfig):
    roster, _raw, pubs, windows, active = _load_corpus(cfg)
    rows = compute_window_indicators(
        roster,
        pubs,
        windows,
        active,
        weighted_udas=frozenset(cfg.weighted_udas),
        home_country=cfg.home_country,
        strict_roster_intra=cfg.strict_roster_intra,
        missing_country=cfg.missing_country,
    )
    return roster, windows, rows


def _fit_options(cfg: RunConfig) -> FitOptions:
    return FitOptions(max_iter=cfg.max_iter, gtol=cfg.gtol)


def _clpm_spec(cfg: RunConfig, n_waves: int) -> ClpmSpec:
    return ClpmSpec(
        waves=n_waves, include_c=cfg.include_c, time_effect=cfg.time_effect
    )


def _descriptives_rows(stats) -> list[list[str]]:
    rows = [["column", "mean", "sd", "min", "max", "n"]]
    for s in stats:
        rows.append(
            [s.name, repr(s.mean), repr(s.sd), repr(s.minimum), repr(s.maximum), str(s.n)]
        )
    return rows


def _descriptives_text(stats) -> str:
    body = [
        [s.name, f"{s.mean:.3f}", f"{s.sd:.3f}", f"{s.minimum:.3f}", f"{s.maximum:.3f}", str(s.n)]
        for s in stats
    ]
    return render_table(body, ["column", "mean", "sd", "min", "max", "n"])


def _correlation_rows(cm) -> list[list[str]]:
    rows = [["column", *cm.columns]]
    for i, name in enumerate(cm.columns):
        row = [name]
        for j in range(len(cm.columns)):
            row.append(repr(float(cm.r[i, j])) if j <= i else "")
        rows.append(row)
    return rows


def _correlation_text(cm) -> str:
    body = []
    for i, name in enumerate(cm.columns):
        row = [name]
        for j in range(len(cm.columns)):
            if j < i:
                row.append(f"{cm.r[i, j]:+.3f}{significance_stars(cm.p[i, j])}")
            elif j == i:
                row.append("1")
            else:
                row.append("")
        body.append(row)
    note = f"pairwise Pearson correlations, n = {cm.n}; *** p<0.001, ** p<0.01, * p<0.05\n"
    return render_table(body, ["", *cm.columns]) + note


def _estimates_rows(comparison) -> list[list[str]]:
    rows = [["variant", "parameter", "estimate", "se", "z", "p_value"]]
    for variant in VARIANTS:
        if variant not in comparison.fits:
            continue
        result = comparison.fits[variant]
        for pid in result.param_names:
            est = result.estimates[pid]
            rows.append(
                [
                    variant,
                    pid,
                    repr(float(est.value)),
                    "" if est.se is None else repr(float(est.se)),
                    "" if est.z is None else repr(float(est.z)),
                    "" if est.p_value is None else repr(float(est.p_value)),
                ]
            )
    return rows


def _tests_rows(comparison) -> list[list[str]]:
    rows = [["restricted", "full", "delta_chi_square", "delta_df", "p_value"]]
    for variant in ("A", "B", "C"):
        if variant in comparison.tests:
            t = comparison.tests[variant]
            rows.append(
                [variant, "D", repr(float(t.delta_chi_square)), str(t.delta_df), repr(float(t.p_value))]
            )
    return rows


def _fit_panel(cfg: RunConfig, panel, variants=None):
    spec = _clpm_spec(cfg, len(panel.waves))
    comparison = fit_variants(
        panel,
        spec,
        variants=tuple(variants or cfg.variants),
        moments_mode=cfg.moments,
        options=_fit_options(cfg),
        alpha=cfg.alpha,
        threads=cfg.threads,
    )
    if not comparison.fits:
        detail = "; ".join(f"{v}: {m}" for v, m in sorted(comparison.failures.items()))
        raise ConvergenceError(f"no variant converged ({detail})")
    return spec, comparison


# -- commands -----------------------------------------------------------------


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="panelforge")
@click.option(
    "--config",
    "config_path",
    type=click.Path(dir_okay=False),
    default=None,
    help="JSON file with RunConfig fields; flags override it.",
)
@click.option(
    "--threads",
    type=int,
    default=None,
    envvar="PANELFORGE_THREADS",
    help="Worker threads for fitting model variants.",
)
@click.pass_context
@cli_errors
def main(ctx, config_path, threads):
    """Career-long collaboration/impact panels and their dynamic models."""
    cfg = RunConfig.from_file(config_path) if config_path else RunConfig()
    if threads is not None:
        cfg = cfg.merged(threads=threads)
    ctx.obj = cfg


_fmt_option = click.option(
    "--format",
    "fmt",
    type=click.Choice(["text", "json"]),
    default="text",
    show_default=True,
    help="Stdout format.",
)


@main.command()
@click.option("--roster", type=click.Path(dir_okay=False), default=None)
@click.option("--publications", type=click.Path(dir_okay=False), default=None)
@_fmt_option
@click.pass_obj
@cli_errors
def ingest(cfg: RunConfig, roster, publications, fmt):
    """Validate a roster and publication corpus; report what a run would use."""
    cfg = cfg.merged(roster=roster, publications=publications)
    roster_map, raw_pubs, pubs, windows, active = _load_corpus(cfg)
    summary = {
        "researchers": len(roster_map),
        "publications_read": len(raw_pubs),
        "publications_kept": len(pubs),
        "publications_excluded_by_doc_type": len(raw_pubs) - len(pubs),
        "windows": [
            {"index": w.index, "start_year": w.start_year, "end_year": w.end_year}
            for w in windows
        ],
        "active_researchers": len(active),
    }
    if fmt == "json":
        _print_json(summary)
        return
    click.echo(f"researchers:        {summary['researchers']}")
    click.echo(f"publications read:  {summary['publications_read']}")
    click.echo(
        f"publications kept:  {summary['publications_kept']} "
        f"({summary['publications_excluded_by_doc_type']} excluded by document type)"
    )
    spans = ", ".join(f"{w.index}: {w.start_year}-{w.end_year}" for w in windows)
    click.echo(f"windows:            {spans}")
    click.echo(f"active researchers: {summary['active_researchers']}")


@main.command()
@click.option("--roster", type=click.Path(dir_okay=False), default=None)
@click.option("--publications", type=click.Path(dir_okay=False), default=None)
@click.option(
    "--out",
    type=click.Path(dir_okay=False),
    default="indicators.csv",
    show_default=True,
)
@click.pass_obj
@cli_errors
def indicators(cfg: RunConfig, roster, publications, out):
    """Compute per-researcher, per-window indicators and write them as CSV."""
    cfg = cfg.merged(roster=roster, publications=publications)
    _roster, _windows, rows = _indicator_rows(cfg)
    _write(Path(out), write_indicators_csv(rows))
    click.echo(f"wrote {len(rows)} indicator rows to {out}")


@main.command()
@click.option("--roster", type=click.Path(dir_okay=False), default=None)
@click.option("--publications", type=click.Path(dir_okay=False), default=None)
@click.option("--out-dir", type=click.Path(file_okay=False), default="panelforge_out", show_default=True)
@_fmt_option
@click.pass_obj
@cli_errors
def panel(cfg: RunConfig, roster, publications, out_dir, fmt):
    """Build the balanced researcher-by-wave panel plus descriptive tables."""
    cfg = cfg.merged(roster=roster, publications=publications)
    roster_map, windows, rows = _indicator_rows(cfg)
    dataset = build_panel(rows, roster_map, windows)
    out = Path(out_dir)
    _write(out / "indicators.csv", write_indicators_csv(rows))
    _write(out / "panel.csv", write_panel_csv(dataset))
    stats = descriptive_stats(dataset)
    _write(out / "descriptives.csv", _csv_text(_descriptives_rows(stats)))
    report, payload = _panel_reports(dataset, out)
    if fmt == "json":
        _print_json(
            {
                "researchers": dataset.n_researchers,
                "waves": list(dataset.waves),
                "out_dir": out_dir,
                **payload,
            }
        )
        return
    click.echo(f"panel: {dataset.n_researchers} researchers x {dataset.n_waves} waves")
    click.echo(_descriptives_text(stats), nl=False)
    click.echo(report, nl=False)
    click.echo(f"wrote panel.csv, descriptives.csv, correlations to {out_dir}")


def _panel_reports(dataset, out: Path):
    """Write correlation CSVs; return (text, json payload) for both modes."""
    text_parts = []
    payload = {}
    for mode, fname in (("pooled", "correlations_pooled.csv"), ("wave1", "correlations_wave1.csv")):
        try:
            cm = correlation_matrix(dataset, VALUE_COLUMNS, mode=mode)
        except DegenerateColumnError as exc:
            text_parts.append(f"correlations ({mode}): skipped - {exc}\n")
            payload[f"correlations_{mode}"] = {"skipped": str(exc)}
            continue
        _write(out / fname, _csv_text(_correlation_rows(cm)))
        text_parts.append(f"correlations ({mode}):\n" + _correlation_text(cm))
        payload[f"correlations_{mode}"] = {
            "columns": list(cm.columns),
            "r": cm.r,
            "n": cm.n,
        }
    return "".join(text_parts), payload


@main.command()
@click.option("--panel", "panel_path", type=click.Path(dir_okay=False), default=None)
@click.option("--out-dir", type=click.Path(file_okay=False), default="panelforge_out", show_default=True)
@click.option("--variants", default=None, help="Comma-separated subset of A,B,C,D.")
@click.option("--moments", type=click.Choice(["robust", "classical"]), default=None)
@click.option("--include-c/--no-include-c", default=None)
@click.option("--time-effect", type=click.Choice(["dummies", "linear"]), default=None)
@click.option("--alpha", type=float, default=None)
@_fmt_option
@click.pass_obj
@cli_errors
def fit(cfg: RunConfig, panel_path, out_dir, variants, moments, include_c, time_effect, alpha, fmt):
    """Fit the cross-lagged model variants to a panel and compare them."""
    cfg = cfg.merged(
        panel=panel_path,
        moments=moments,
        include_c=include_c,
        time_effect=time_effect,
        alpha=alpha,
        variants=tuple(v.strip() for v in variants.split(",")) if variants else None,
    )
    if not cfg.panel:
        raise InputError("a panel CSV is required (use --panel)")
    dataset = read_panel_csv(cfg.panel)
    _spec, comparison = _fit_panel(cfg, dataset)
    out = Path(out_dir)
    _write(out / "estimates.csv", _csv_text(_estimates_rows(comparison)))
    _write(out / "tests.csv", _csv_text(_tests_rows(comparison)))
    table = coefficient_table(comparison)
    _write(out / "coefficients.txt", table)
    if fmt == "json":
        _print_json(comparison.to_dict())
        return
    click.echo(table, nl=False)
    click.echo(f"wrote estimates.csv, tests.csv, coefficients.txt to {out_dir}")


@main.command()
@click.option("--panel", "panel_path", type=click.Path(dir_okay=False), default=None)
@click.option("--variant", type=click.Choice(list(VARIANTS)), default="D", show_default=True)
@click.option("--moments", type=click.Choice(["robust", "classical"]), default=None)
@click.option("--out-dir", type=click.Path(file_okay=False), default="panelforge_out", show_default=True)
@_fmt_option
@click.pass_obj
@cli_errors
def mediate(cfg: RunConfig, panel_path, variant, moments, out_dir, fmt):
    """Decompose two-wave effects into direct and mediated channels."""
    cfg = cfg.merged(panel=panel_path, moments=moments)
    if not cfg.panel:
        raise InputError("a panel CSV is required (use --panel)")
    dataset = read_panel_csv(cfg.panel)
    spec, comparison = _fit_panel(cfg, dataset, variants=(variant,))
    paths = PathSystem.from_fit(comparison.fits[variant], spec)
    cells = mediation_report(paths)
    _write(Path(out_dir) / "mediation.csv", _csv_text(mediation_csv_rows(cells)))
    if fmt == "json":
        _print_json(
            {
                "variant": variant,
                "cells": [
                    {
                        "treatment": c.treatment,
                        "outcome": c.outcome,
                        "indirect": c.indirect,
                        "direct": c.direct,
                        "ratio_pct": c.ratio_pct,
                    }
                    for c in cells
                ],
            }
        )
        return
    click.echo(mediation_table(cells), nl=False)
    click.echo(f"wrote mediation.csv to {out_dir}")


@main.command()
@click.option("--out", type=click.Path(dir_okay=False), default="simulated_panel.csv", show_default=True)
@click.option("--n", "n_researchers", type=int, default=None)
@click.option("--waves", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--truth-variant", type=click.Choice(list(VARIANTS)), default=None)
@click.option("--round-rank/--no-round-rank", default=None)
@click.pass_obj
@cli_errors
def simulate(cfg: RunConfig, out, n_researchers, waves, seed, truth_variant, round_rank):
    """Draw a synthetic panel from a known generating system."""
    cfg = cfg.merged(
        n_researchers=n_researchers,
        waves=waves,
        seed=seed,
        truth_variant=truth_variant,
        round_rank=round_rank,
    )
    true = default_true_parameters(cfg.truth_variant, seed=cfg.seed)
    dataset, info = simulate_panel(
        true,
        cfg.n_researchers,
        cfg.waves,
        round_rank=cfg.round_rank,
        return_info=True,
    )
    _write(Path(out), write_panel_csv(dataset))
    click.echo(
        f"simulated {info.n} researchers x {info.waves} waves "
        f"(truth {cfg.truth_variant}, seed {info.seed}, "
        f"clamp rate {100 * info.clamp_rate:.2f}%, spectral radius {info.spectral_radius:.3f})"
    )
    click.echo(f"wrote {out}")


@main.command()
@click.option("--panel", "panel_path", type=click.Path(dir_okay=False), default=None)
@click.option("--roster", type=click.Path(dir_okay=False), default=None)
@click.option("--publications", type=click.Path(dir_okay=False), default=None)
@click.option("--simulate", "do_simulate", is_flag=True, default=False, help="Analyze a synthetic panel.")
@click.option("--seed", type=int, default=None)
@click.option("--n", "n_researchers", type=int, default=None)
@click.option("--truth-variant", type=click.Choice(list(VARIANTS)), default=None)
@click.option("--moments", type=click.Choice(["robust", "classical"]), default=None)
@click.option("--out-dir", type=click.Path(file_okay=False), default="panelforge_out", show_default=True)
@_fmt_option
@click.pass_obj
@cli_errors
def analyze(cfg, panel_path, roster, publications, do_simulate, seed, n_researchers, truth_variant, moments, out_dir, fmt):
    """End-to-end run: panel, descriptives, model comparison, mediation."""
    cfg = cfg.merged(
        panel=panel_path,
        roster=roster,
        publications=publications,
        seed=seed,
        n_researchers=n_researchers,
        truth_variant=truth_variant,
        moments=moments,
    )
    out = Path(out_dir)
    report = []

    if do_simulate:
        true = default_true_parameters(cfg.truth_variant, seed=cfg.seed)
        dataset, info = simulate_panel(
            true, cfg.n_researchers, cfg.waves, round_rank=cfg.round_rank, return_info=True
        )
        report.append(
            f"input: simulated panel (truth {cfg.truth_variant}, seed {info.seed}, "
            f"{info.n} researchers, {info.waves} waves, clamp rate {100 * info.clamp_rate:.2f}%)\n"
        )
    elif cfg.panel:
        dataset = read_panel_csv(cfg.panel)
        report.append(
            f"input: panel file ({dataset.n_researchers} researchers, {dataset.n_waves} waves)\n"
        )
    elif cfg.roster and cfg.publications:
        roster_map, windows, rows = _indicator_rows(cfg)
        _write(out / "indicators.csv", write_indicators_csv(rows))
        dataset = build_panel(rows, roster_map, windows)
        report.append(
            f"input: corpus ({dataset.n_researchers} active researchers, {dataset.n_waves} windows)\n"
        )
    else:
        raise InputError(
            "no input: give --panel, or --roster with --publications, or --simulate"
        )

    _write(out / "panel.csv", write_panel_csv(dataset))
    stats = descriptive_stats(dataset)
    _write(out / "descriptives.csv", _csv_text(_descriptives_rows(stats)))
    report.append("\ndescriptive statistics (pooled):\n" + _descriptives_text(stats))
    corr_text, corr_payload = _panel_reports(dataset, out)
    report.append("\n" + corr_text)

    _spec, comparison = _fit_panel(cfg, dataset)
    _write(out / "estimates.csv", _csv_text(_estimates_rows(comparison)))
    _write(out / "tests.csv", _csv_text(_tests_rows(comparison)))
    table = coefficient_table(comparison)
    report.append("\n" + table)

    selected = comparison.selected
    cells = None
    if selected is not None and len(dataset.waves) >= 3:
        paths = PathSystem.from_fit(comparison.fits[selected], _spec)
        cells = mediation_report(paths)
        _write(out / "mediation.csv", _csv_text(mediation_csv_rows(cells)))
        report.append(
            f"\ntwo-step mediation through the selected variant ({selected}):\n"
            + mediation_table(cells)
        )

    _write(out / "report.txt", "".join(report))
    if fmt == "json":
        payload = {
            "panel": {
                "researchers": dataset.n_researchers,
                "waves": list(dataset.waves),
            },
            "descriptives": [
                {
                    "column": s.name,
                    "mean": s.mean,
                    "sd": s.sd,
                    "min": s.minimum,
                    "max": s.maximum,
                    "n": s.n,
                }
                for s in stats
            ],
            **corr_payload,
            "comparison": comparison.to_dict(),
            "mediation": None
            if cells is None
            else [
                {
                    "treatment": c.treatment,
                    "outcome": c.outcome,
                    "indirect": c.indirect,
                    "direct": c.direct,
                    "ratio_pct": c.ratio_pct,
                }
                for c in cells
            ],
        }
        _write(out / "analysis.json", json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
        _print_json(payload)
        return
    click.echo("".join(report), nl=False)
    click.echo(f"wrote analysis bundle to {out_dir}")


if __name__ == "__main__":
    main()
