"""Command-line entry point.

Every command accepts ``--config FILE`` (YAML or JSON mapping); explicit flags
override config values. Data goes to stdout unless ``-o`` is given,
diagnostics go to stderr.
"""

from __future__ import annotations

import json
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import click
import numpy as np
import yaml

from .estimator import DegenerateFitError, FitOptions, IdentifiabilityError, fit_from_training_set
from .io import (
    CampaignFile,
    CampaignRow,
    FormatError,
    ModelFile,
    campaign_to_training_set,
    format_curve,
    format_trace,
    read_campaign,
)
from .locator import locate_one_bs, locate_two_bs, path_loss_from_rssi
from .model import DegenerateModelError, TemplateModel, TunnelGeometry, path_loss
from .simulator import (
    STANDARD_POLICIES,
    REFERENCE_MODEL,
    Explicit,
    ReferenceScenario,
    make_rng,
    parse_policy,
    place_anchors,
    run_experiment_matrix,
    sample_iteration,
)

EXIT_OK = 0
EXIT_PARSE = 3
EXIT_VALIDATION = 4
EXIT_IDENTIFIABILITY = 5
EXIT_INVERSION = 6

DEFAULT_PLACEMENT = "explicit:15,30,270,285"


class CommandError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code = code
        self.kind = kind


def _fail(exc: CommandError):
    click.echo(json.dumps({"error": exc.kind, "code": exc.code, "message": str(exc)}), err=True)
    sys.exit(exc.code)


def _load_config(path: str | None, allowed: set[str]) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CommandError(EXIT_PARSE, "parse", f"{path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}: " if mark else ""
        raise CommandError(EXIT_PARSE, "parse", f"{path}: {where}{exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise CommandError(EXIT_VALIDATION, "validation", f"{path}: top level must be a mapping")
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise CommandError(
            EXIT_VALIDATION, "validation",
            f"{path}: unknown field(s) {', '.join(unknown)}; allowed: {', '.join(sorted(allowed))}",
        )
    return data


def _merge(config: dict, flags: dict, defaults: dict) -> dict:
    out = dict(defaults)
    out.update({k: v for k, v in config.items()})
    out.update({k: v for k, v in flags.items() if v is not None and v != ()})
    return out


def _number(cfg: dict, key: str, kind=float):
    value = cfg.get(key)
    if value is None:
        return None
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise CommandError(EXIT_VALIDATION, "validation", f"field {key!r}: expected a number, got {value!r}") from None


def _emit(text: str, output: str | None) -> None:
    if output is None:
        click.echo(text, nl=False)
    else:
        Path(output).write_text(text, encoding="utf-8", newline="")


def _placement(value):
    if isinstance(value, (list, tuple)):
        return Explicit(tuple(float(v) for v in value))
    return parse_policy(str(value))


def _reference(cfg: dict) -> TemplateModel:
    try:
        return TemplateModel(
            gamma=_number(cfg, "gamma"), c=_number(cfg, "c"),
            d0=_number(cfg, "d0"), alpha=_number(cfg, "alpha"),
        )
    except (TypeError, ValueError) as exc:
        raise CommandError(EXIT_VALIDATION, "validation", f"reference model: {exc}") from None


_REF_DEFAULTS = {
    "gamma": REFERENCE_MODEL.gamma,
    "c": REFERENCE_MODEL.c,
    "d0": REFERENCE_MODEL.d0,
    "alpha": REFERENCE_MODEL.alpha,
}


def _ref_options(f):
    f = click.option("--alpha", type=float, help="Reference far-region slope, dB/m.")(f)
    f = click.option("--d0", type=float, help="Reference break point, m.")(f)
    f = click.option("--c", "c", type=float, help="Reference constant C.")(f)
    f = click.option("--gamma", type=float, help="Reference path-loss exponent.")(f)
    return f


@click.group()
def main():
    """Estimate and use two-piece tunnel path-loss models."""


@main.command()
@click.option("--config", "config_path", type=click.Path(), help="YAML/JSON scenario file.")
@click.option("--tunnel", help="Tunnel identifier written to the header.")
@click.option("--bs1", type=float, help="BS1 coordinate, m.")
@click.option("--bs2", type=float, help="BS2 coordinate, m.")
@_ref_options
@click.option("--placement", help="uniform:N or explicit:x1,x2,...")
@click.option("--sigma", type=float, help="Noise standard deviation, dB.")
@click.option("--iterations", type=int, help="Passes through all anchors.")
@click.option("--seed", type=int)
@click.option("-o", "--output", type=click.Path(), help="Output CSV (default stdout).")
def simulate(config_path, output, **flags):
    """Generate a synthetic measurement campaign from a reference model."""
    try:
        allowed = {"tunnel", "bs1", "bs2", "gamma", "c", "d0", "alpha", "placement", "sigma", "iterations", "seed"}
        cfg = _merge(
            _load_config(config_path, allowed), flags,
            {"tunnel": "synthetic", "bs1": 0.0, "bs2": 300.0, "placement": DEFAULT_PLACEMENT,
             "sigma": 1.25, "iterations": 100, "seed": 0, **_REF_DEFAULTS},
        )
        _emit(simulate_campaign(cfg).dumps(), output)
    except CommandError as exc:
        _fail(exc)


def simulate_campaign(cfg: dict) -> CampaignFile:
    ref = _reference(cfg)
    try:
        policy = _placement(cfg["placement"])
        geo = place_anchors(policy, TunnelGeometry(_number(cfg, "bs1"), _number(cfg, "bs2")))
        scen = ReferenceScenario(
            reference_model=ref, geometry=geo, noise_sigma=_number(cfg, "sigma"),
            iterations=_number(cfg, "iterations", int), seed=_number(cfg, "seed", int),
        )
    except (TypeError, ValueError) as exc:
        raise CommandError(EXIT_VALIDATION, "validation", str(exc)) from None
    rng = make_rng(scen.seed, policy)
    rows = []
    for t in range(1, scen.iterations + 1):
        for i, l1, l2 in sample_iteration(scen, rng):
            rows.append(CampaignRow(geo.anchor_positions[i], l1, l2, t))
    extra = {
        "synthetic": "true",
        "generator": (
            f"gamma={ref.gamma!r} c={ref.c!r} d0={ref.d0!r} alpha={ref.alpha!r} "
            f"sigma={scen.noise_sigma!r} seed={scen.seed} placement={policy.label}"
        ),
    }
    return CampaignFile(str(cfg["tunnel"]), geo.bs1_pos, geo.bs2_pos, rows, extra=extra)


_FIT_KEYS = {
    "grid_step", "refine_tol", "d0_min", "d0_max", "d0_hint", "d0_fixed",
    "alpha_nonneg", "raw_samples", "base_station",
}


def _fit_options(cfg: dict) -> FitOptions:
    lo, hi = _number(cfg, "d0_min"), _number(cfg, "d0_max")
    if (lo is None) != (hi is None):
        raise CommandError(EXIT_VALIDATION, "validation", "d0_min and d0_max must be given together")
    try:
        return FitOptions(
            grid_step=_number(cfg, "grid_step") or 0.5,
            refine_tol=_number(cfg, "refine_tol") or 1e-4,
            d0_bounds=None if lo is None else (lo, hi),
            d0_hint=_number(cfg, "d0_hint"),
            d0_fixed=_number(cfg, "d0_fixed"),
            alpha_nonneg=bool(cfg.get("alpha_nonneg", False)),
            raw_samples=bool(cfg.get("raw_samples", False)),
            base_station=_number(cfg, "base_station", int),
        )
    except ValueError as exc:
        raise CommandError(EXIT_VALIDATION, "validation", f"fit options: {exc}") from None


@main.command()
@click.argument("campaign", type=click.Path())
@click.option("--config", "config_path", type=click.Path(), help="YAML/JSON fit options.")
@click.option("--grid-step", type=float, help="Break-point grid resolution, m (default 0.5).")
@click.option("--refine-tol", type=float, help="Golden-section tolerance, m (default 1e-4).")
@click.option("--d0-min", type=float)
@click.option("--d0-max", type=float)
@click.option("--d0-hint", type=float, help="Grid node to center on, e.g. a Fresnel estimate.")
@click.option("--d0-fixed", type=float, help="Hold the break point fixed.")
@click.option("--alpha-nonneg/--alpha-free", default=None, help="Constrain the far slope to >= 0.")
@click.option("--raw-samples/--means", default=None, help="Fit raw samples instead of per-anchor means.")
@click.option("--base-station", type=click.Choice(["1", "2"]), help="Fit one BS only.")
@click.option("--timestamp/--no-timestamp", default=True, help="Record the fit time in provenance.")
@click.option("-o", "--output", type=click.Path(), help="Output JSON (default stdout).")
def fit(campaign, config_path, timestamp, output, **flags):
    """Fit the template model to a campaign CSV."""
    try:
        cfg = _merge(_load_config(config_path, _FIT_KEYS), flags, {})
        options = _fit_options(cfg)
        mf = fit_campaign(campaign, options, timestamp)
        _emit(mf.dumps(), output)
    except CommandError as exc:
        _fail(exc)


def fit_campaign(path: str, options: FitOptions, timestamp: bool = True) -> ModelFile:
    try:
        camp = read_campaign(path)
    except OSError as exc:
        raise CommandError(EXIT_PARSE, "parse", f"{path}: {exc.strerror}") from None
    except FormatError as exc:
        raise CommandError(EXIT_PARSE, "parse", f"{path}: {exc}") from None
    if not camp.rows:
        raise CommandError(EXIT_VALIDATION, "validation", f"{path}: campaign has no rows")
    ts, geo = campaign_to_training_set(camp)
    try:
        res = fit_from_training_set(ts, options)
    except IdentifiabilityError as exc:
        raise CommandError(
            EXIT_IDENTIFIABILITY, "identifiability",
            f"{exc}. Anchors at {list(geo.anchor_positions)} m do not observe both regions; "
            "place anchors near each base station and further away.",
        ) from None
    except DegenerateFitError as exc:
        raise CommandError(EXIT_IDENTIFIABILITY, "degenerate", str(exc)) from None
    except ValueError as exc:
        raise CommandError(EXIT_VALIDATION, "validation", str(exc)) from None
    opts = {
        "grid_step": options.grid_step, "refine_tol": options.refine_tol,
        "d0_bounds": list(options.d0_bounds) if options.d0_bounds else None,
        "d0_hint": options.d0_hint, "d0_fixed": options.d0_fixed,
        "alpha_nonneg": options.alpha_nonneg, "raw_samples": options.raw_samples,
        "base_station": options.base_station,
    }
    prov = {
        "source": {"campaign": str(path), "tunnel": camp.tunnel,
                   "bs1_pos": camp.bs1_pos, "bs2_pos": camp.bs2_pos},
        "fit_options": opts,
        "n_points": res.n_points,
        "near_count": res.near_count,
        "far_count": res.far_count,
        "timestamp": _timestamp() if timestamp else None,
    }
    return ModelFile(res.model, res.sse, prov)


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    now = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return now.isoformat(timespec="seconds")


def _seed_list(value) -> list[int]:
    if isinstance(value, int):
        return [value]
    if isinstance(value, (list, tuple)):
        out = []
        for v in value:
            out += _seed_list(v)
        return out
    text = str(value).strip()
    if "-" in text.lstrip("-"):
        lo, _, hi = text.partition("-")
        return list(range(int(lo), int(hi) + 1))
    return [int(p) for p in text.split(",") if p.strip()]


@main.command()
@click.option("--config", "config_path", type=click.Path(), help="YAML/JSON matrix file.")
@click.option("--policy", "policies", multiple=True, help="Placement policy; repeatable (default: the four standard layouts).")
@click.option("--seeds", help="Seed list '0,1,2' or range '0-19' (default 0).")
@click.option("--bs1", type=float)
@click.option("--bs2", type=float)
@_ref_options
@click.option("--sigma", type=float)
@click.option("--iterations", type=int)
@click.option("--workers", type=int, help="Worker processes for matrix entries.")
@click.option("-o", "--output", type=click.Path(), help="Output CSV (default stdout).")
def convergence(config_path, output, **flags):
    """Emit per-iteration parameter traces for a policy x seed matrix."""
    try:
        allowed = {"policies", "seeds", "bs1", "bs2", "gamma", "c", "d0", "alpha",
                   "sigma", "iterations", "workers"} | _FIT_KEYS
        cfg = _merge(
            _load_config(config_path, allowed), flags,
            {"policies": [p.label for p in STANDARD_POLICIES], "seeds": 0, "bs1": 0.0, "bs2": 300.0,
             "sigma": 1.25, "iterations": 100, "workers": 1, **_REF_DEFAULTS},
        )
        try:
            policies = [_placement(p) for p in cfg["policies"]]
            seeds = _seed_list(cfg["seeds"])
            base = ReferenceScenario(
                reference_model=_reference(cfg),
                geometry=TunnelGeometry(_number(cfg, "bs1"), _number(cfg, "bs2")),
                noise_sigma=_number(cfg, "sigma"),
                iterations=_number(cfg, "iterations", int),
                fit_options=_fit_options(cfg),
            )
            traces = run_experiment_matrix(base, policies, seeds, workers=_number(cfg, "workers", int))
        except ValueError as exc:
            raise CommandError(EXIT_VALIDATION, "validation", str(exc)) from None
        _emit(format_trace(traces), output)
    except CommandError as exc:
        _fail(exc)


@main.command()
@click.option("--model", "model_path", type=click.Path(), help="Fitted model JSON.")
@click.option("--config", "config_path", type=click.Path(), help="YAML/JSON locate settings.")
@click.option("--bs1", type=float, help="BS1 coordinate, m.")
@click.option("--bs2", type=float, help="BS2 coordinate, m.")
@click.option("--l1", type=float, help="Path loss at BS1, dB.")
@click.option("--l2", type=float, help="Path loss at BS2, dB.")
@click.option("--rssi1", type=float, help="RSSI at BS1, dBm (needs --tx-power and --gains).")
@click.option("--rssi2", type=float, help="RSSI at BS2, dBm.")
@click.option("--tx-power", type=float, help="Object transmit power, dBm.")
@click.option("--gains", type=float, help="Total antenna/system gains, dB.")
@click.option("--direction", type=click.Choice(["+1", "-1", "1"]), help="Single-BS side of the object.")
@click.option("-o", "--output", type=click.Path(), help="Output JSON (default stdout).")
def locate(config_path, output, **flags):
    """Estimate an object's position from one or two measured losses."""
    try:
        allowed = {"model", "bs1", "bs2", "l1", "l2", "rssi1", "rssi2", "tx_power", "gains", "direction"}
        flags["model"] = flags.pop("model_path")
        cfg = _merge(_load_config(config_path, allowed), flags, {})
        _emit(json.dumps(locate_report(cfg), indent=2) + "\n", output)
    except CommandError as exc:
        _fail(exc)


def locate_report(cfg: dict) -> dict:
    if cfg.get("model") is None:
        raise CommandError(EXIT_VALIDATION, "validation", "a model file is required (--model)")
    try:
        mf = ModelFile.read(cfg["model"])
    except OSError as exc:
        raise CommandError(EXIT_PARSE, "parse", f"{cfg['model']}: {exc.strerror}") from None
    except FormatError as exc:
        raise CommandError(EXIT_PARSE, "parse", f"{cfg['model']}: {exc}") from None

    losses = {}
    for k in (1, 2):
        loss, rssi = _number(cfg, f"l{k}"), _number(cfg, f"rssi{k}")
        if loss is not None and rssi is not None:
            raise CommandError(EXIT_VALIDATION, "validation", f"give either l{k} or rssi{k}, not both")
        if rssi is not None:
            tx, gains = _number(cfg, "tx_power"), _number(cfg, "gains")
            if tx is None or gains is None:
                raise CommandError(
                    EXIT_VALIDATION, "validation",
                    "RSSI input needs both tx_power and gains; no default link budget is assumed",
                )
            loss = path_loss_from_rssi(rssi, tx, gains)
        if loss is not None:
            if not math.isfinite(loss):
                raise CommandError(EXIT_VALIDATION, "validation", f"l{k} must be finite")
            losses[k] = loss
    if not losses:
        raise CommandError(EXIT_VALIDATION, "validation", "at least one loss (l1/l2 or rssi1/rssi2) is required")

    bs1, bs2 = _number(cfg, "bs1"), _number(cfg, "bs2")
    try:
        if len(losses) == 2:
            if bs1 is None or bs2 is None:
                raise CommandError(EXIT_VALIDATION, "validation", "two-BS mode needs bs1 and bs2")
            est = locate_two_bs(mf.model, TunnelGeometry(bs1, bs2), losses[1], losses[2])
            mode = "two_bs"
        else:
            (k, loss), = losses.items()
            bs_pos = bs1 if k == 1 else bs2
            if bs_pos is None:
                raise CommandError(EXIT_VALIDATION, "validation", f"single-BS mode with l{k} needs bs{k}")
            direction = cfg.get("direction")
            direction = (1 if k == 1 else -1) if direction is None else int(str(direction))
            extent = (bs1, bs2) if bs1 is not None and bs2 is not None else None
            est = locate_one_bs(mf.model, bs_pos, direction, loss, extent)
            mode = f"single_bs{k}"
    except DegenerateModelError as exc:
        raise CommandError(EXIT_INVERSION, "inversion", str(exc)) from None
    except ValueError as exc:
        raise CommandError(EXIT_VALIDATION, "validation", str(exc)) from None
    return {
        "mode": mode,
        "position_m": est.position,
        "d1_m": est.d1 if mode != "single_bs2" else None,
        "d2_m": est.d2 if mode != "single_bs2" else est.d1,
        "raw_d1_m": est.raw_d1 if mode != "single_bs2" else None,
        "raw_d2_m": est.raw_d2 if mode != "single_bs2" else est.raw_d1,
        "normalized": est.normalized,
        "losses_db": {f"l{k}": v for k, v in losses.items()},
        "warnings": list(est.warnings),
    }


@main.command(name="eval")
@click.option("--model", "model_path", required=True, type=click.Path(), help="Model JSON.")
@click.option("--start", type=float, default=1.0, show_default=True)
@click.option("--end", type=float, default=300.0, show_default=True)
@click.option("--step", type=float, default=1.0, show_default=True)
@click.option("-o", "--output", type=click.Path(), help="Output CSV (default stdout).")
def eval_cmd(model_path, start, end, step, output):
    """Tabulate the model's path loss over a distance range."""
    try:
        try:
            mf = ModelFile.read(model_path)
        except OSError as exc:
            raise CommandError(EXIT_PARSE, "parse", f"{model_path}: {exc.strerror}") from None
        except FormatError as exc:
            raise CommandError(EXIT_PARSE, "parse", f"{model_path}: {exc}") from None
        try:
            d = curve_distances(start, end, step)
        except ValueError as exc:
            raise CommandError(EXIT_VALIDATION, "validation", str(exc)) from None
        _emit(format_curve(d, path_loss(mf.model, d)), output)
    except CommandError as exc:
        _fail(exc)


def curve_distances(start: float, end: float, step: float) -> np.ndarray:
    if not 0 < start <= end:
        raise ValueError(f"need 0 < start <= end, got start={start}, end={end}")
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    n = int(math.floor((end - start) / step + 1e-9)) + 1
    return start + step * np.arange(n, dtype=float)


if __name__ == "__main__":
    main()
