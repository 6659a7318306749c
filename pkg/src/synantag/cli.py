"""Command-line interface: ``fit``, ``simulate``, ``select`` and ``diagnose``.

Exit codes: 0 on success, 2 for configuration, schema or input problems,
3 for numerical failures during sampling.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .diagnostics import credible_interval, diagnose, posterior_predictive
from .errors import ConfigError, NumericalError, SchemaError
from .model import Dataset
from .posterior import interaction_grid_draws, main_effect_draws
from .preprocess import ColumnRoles, backscale, prepare
from .sampler import PosteriorSamples, SamplerConfig, run_chains
from .selection import DEFAULT_CUTOFF, DEFAULT_GRID, classify
from .simgen import Kind, Scenario, generate
from .splines import make_bases

log = logging.getLogger("synantag")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
MAIN_GRID = 100
SURFACE_GRID = 30
FLOAT_FMT = "%.17g"


@dataclass
class RunConfig:
    """Flat run configuration; every field is a top-level JSON key."""

    response: str = "y"
    exposures: list = field(default_factory=list)
    covariates: list = field(default_factory=list)
    categorical: dict = field(default_factory=dict)
    flow_rate: str | None = None
    acr: str | None = None
    acr_threshold: float = 30.0
    response_lod: float | None = None
    log_response: bool = True
    log_exposures: bool = True
    cdf_transform: bool = True
    scale_covariates: bool = True
    m: int = 6
    d: int = 6
    degree: int = 3
    constraint: str = "origin"
    iterations: int = 15000
    burnin: int = 5000
    step_size: float = 0.01
    leapfrog_steps: int = 10
    perturb_interval: int = 500
    perturb_low: float = 0.9
    perturb_high: float = 1.1
    rejection_cap: int = 10000
    a: float = 0.5
    seed: int = 0
    cutoff: float = DEFAULT_CUTOFF
    selection_grid: int = DEFAULT_GRID
    chains: int = 1

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise SchemaError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise SchemaError(f"unknown config keys: {', '.join(unknown)}")
        for k, v in raw.items():
            if isinstance(v, dict) and k != "categorical":
                raise SchemaError(f"config key {k!r} must not be nested")
        cfg = cls(**raw)
        if cfg.constraint not in ("origin", "integral"):
            raise ConfigError(f"constraint must be 'origin' or 'integral', got {cfg.constraint!r}")
        if not cfg.cutoff > 0:
            raise ConfigError("cutoff must be positive")
        if cfg.chains < 1:
            raise ConfigError("chains must be >= 1")
        cfg.sampler()  # validates sampler fields
        return cfg

    def roles(self) -> ColumnRoles:
        return ColumnRoles(response=self.response, exposures=list(self.exposures), covariates=list(self.covariates),
                           categorical=dict(self.categorical), flow_rate=self.flow_rate, acr=self.acr)

    def sampler(self) -> SamplerConfig:
        return SamplerConfig(iterations=self.iterations, burnin=self.burnin, step_size=self.step_size,
                             leapfrog_steps=self.leapfrog_steps, perturb_interval=self.perturb_interval,
                             perturb_range=(self.perturb_low, self.perturb_high), rejection_cap=self.rejection_cap,
                             a=self.a, seed=self.seed)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------------------
# File helpers
# ---------------------------------------------------------------------------


def git_blob_hash(data: bytes) -> str:
    """SHA-1 of the bytes framed as a git blob object."""
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def write_json(path: Path, obj) -> None:
    write_text(path, json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")


def write_rows(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([FLOAT_FMT % v if isinstance(v, (float, np.floating)) else v for v in r])


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"config {path} is not valid JSON: {exc}") from exc


def read_table(path: str) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise SchemaError(f"cannot parse {path}: {exc}") from exc


def save_dataset(path: Path, data: Dataset) -> None:
    with open(path, "wb") as fh:
        np.savez(fh, y=data.y, X=data.X, Z=data.Z, y_scale=np.array(data.y_scale))
    write_json(path.with_suffix(".json"), {"exposure_names": list(data.exposure_names),
                                           "covariate_names": list(data.covariate_names)})


def load_dataset(path: Path) -> Dataset:
    try:
        arr = np.load(path)
        with open(path.with_suffix(".json")) as fh:
            names = json.load(fh)
    except (OSError, ValueError, KeyError) as exc:
        raise SchemaError(f"cannot read prepared dataset {path}: {exc}") from exc
    return Dataset(y=arr["y"], X=arr["X"], Z=arr["Z"], y_scale=float(arr["y_scale"]),
                   exposure_names=names["exposure_names"], covariate_names=names["covariate_names"])


def load_fit(out: Path) -> tuple[PosteriorSamples, dict]:
    """All chains of a fit directory, stacked, plus its run config."""
    chain_dirs = sorted((out / "samples").glob("chain_*"), key=lambda p: int(p.name.split("_")[1]))
    if not chain_dirs:
        raise SchemaError(f"no posterior samples under {out / 'samples'}")
    runs = [PosteriorSamples.load(c) for c in chain_dirs]
    try:
        with open(out / "config.json") as fh:
            cfg = json.load(fh)
    except (OSError, ValueError) as exc:
        raise SchemaError(f"cannot read {out / 'config.json'}: {exc}") from exc
    return (runs[0] if len(runs) == 1 else PosteriorSamples.concatenate(runs)), cfg


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------


def _band(draws) -> dict:
    lo, hi = credible_interval(draws)
    return {"mean": np.mean(draws, axis=0), "lower": lo, "upper": hi}


def posterior_summaries(samples: PosteriorSamples, data: Dataset) -> dict:
    """Posterior means and 95% intervals on the standardized scale."""
    bases = samples.bases
    xg = np.linspace(0.0, 1.0, MAIN_GRID)
    sg = np.linspace(0.0, 1.0, SURFACE_GRID)
    names = list(data.exposure_names)
    out = {
        "alpha": _band(samples.alpha),
        "eta": {n: _band(samples.eta[:, k]) for k, n in enumerate(data.covariate_names)},
        "sigma": _band(np.sqrt(samples.sigma2)),
        "sigma2": _band(samples.sigma2),
        "main_effects": {names[j]: _band(main_effect_draws(samples, j, xg, bases)) for j in range(samples.p)},
        "interactions": {},
    }
    for i, (u, v) in enumerate(samples.pairs):
        out["interactions"][f"{names[u]}:{names[v]}"] = _band(interaction_grid_draws(samples, i, sg, bases))
    return out


def write_summaries(out: Path, summary: dict, data: Dataset) -> None:
    xg = np.linspace(0.0, 1.0, MAIN_GRID)
    sg = np.linspace(0.0, 1.0, SURFACE_GRID)
    doc = dict(summary)
    doc["grids"] = {"main_effect_x": xg, "interaction_x": sg}
    doc["y_scale"] = data.y_scale
    write_json(out / "summary.json", doc)
    rows = []
    for name, band in summary["main_effects"].items():
        for k, x in enumerate(xg):
            rows.append([name, float(x), float(band["mean"][k]), float(band["lower"][k]), float(band["upper"][k])])
    write_rows(out / "main_effects.csv", ["exposure", "x", "mean", "lower", "upper"], rows)
    rows = []
    for name, band in summary["interactions"].items():
        for a, xu in enumerate(sg):
            for b, xv in enumerate(sg):
                rows.append([name, float(xu), float(xv), float(band["mean"][a, b]), float(band["lower"][a, b]),
                             float(band["upper"][a, b])])
    write_rows(out / "interactions.csv", ["pair", "xu", "xv", "mean", "lower", "upper"], rows)


def named_selection(report, names: list[str]) -> dict:
    doc = report.to_dict()
    for row in doc["pairs"]:
        row["exposures"] = [names[row["u"] - 1], names[row["v"] - 1]]
    return doc


def write_selection(out: Path, samples: PosteriorSamples, cutoff: float, grid: int, names: list[str]) -> None:
    report = classify(samples, cutoff, grid)
    write_json(out / "selection.json", named_selection(report, names))
    write_text(out / "selection.csv", report.to_csv())


def write_diagnostics(out: Path, samples: PosteriorSamples, data: Dataset, seed: int) -> None:
    rng = np.random.default_rng([seed, 1])
    report = diagnose(samples, data, rng=rng)
    write_text(out / "diagnostics.json", report.to_json())
    check = posterior_predictive(samples, data, rng=np.random.default_rng([seed, 2]))
    rows = [[i, float(data.y[i]), float(check.mean[i]), float(check.lower[i]), float(check.upper[i]),
             float(check.residuals[i])] for i in range(data.n)]
    write_rows(out / "residuals.csv", ["index", "y", "pred_mean", "pred_lower", "pred_upper", "std_residual"], rows)


def write_manifest(out: Path, cfg: dict, data_path: str | None) -> dict:
    files = {}
    for path in sorted(out.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            files[path.relative_to(out).as_posix()] = git_blob_hash(path.read_bytes())
    listing = "".join(f"{h}  {name}\n" for name, h in sorted(files.items()))
    manifest = {"config": cfg, "seed": cfg.get("seed"), "files": files,
                "content_hash": git_blob_hash(listing.encode())}
    if data_path is not None:
        manifest["data_hash"] = git_blob_hash(Path(data_path).read_bytes())
    write_json(out / "manifest.json", manifest)
    return manifest


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _overrides(args) -> dict:
    mapping = {"iters": "iterations", "burnin": "burnin", "seed": "seed", "cutoff": "cutoff", "chains": "chains"}
    return {key: getattr(args, flag) for flag, key in mapping.items() if getattr(args, flag, None) is not None}


def cmd_fit(args) -> int:
    raw = load_config(args.config)
    raw.update(_overrides(args))
    frame = read_table(args.data)
    if not raw.get("exposures"):
        response = raw.get("response", "y")
        raw["exposures"] = [c for c in frame.columns if c != response and c not in raw.get("covariates", [])
                            and c not in raw.get("categorical", {})]
    cfg = RunConfig.from_dict(raw)
    data, _ = prepare(frame, cfg.roles(), acr_threshold=cfg.acr_threshold, response_lod=cfg.response_lod,
                      log_response=cfg.log_response, log_exposures=cfg.log_exposures, cdf=cfg.cdf_transform,
                      scale_covariates=cfg.scale_covariates)
    bases = make_bases(m=cfg.m, d=cfg.d, degree=cfg.degree, constraint=cfg.constraint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", cfg.to_dict())
    save_dataset(out / "dataset.npz", data)
    runs = run_chains(data, cfg.sampler(), bases, chains=cfg.chains)
    for k, run in enumerate(runs, start=1):
        run.save(out / "samples" / f"chain_{k}")
    samples = runs[0] if len(runs) == 1 else PosteriorSamples.concatenate(runs)
    write_summaries(out, backscale(posterior_summaries(samples, data), data.y_scale), data)
    write_selection(out, samples, cfg.cutoff, cfg.selection_grid, list(data.exposure_names))
    write_diagnostics(out, samples, data, cfg.seed)
    manifest = write_manifest(out, cfg.to_dict(), args.data)
    print(f"fit written to {out} (content hash {manifest['content_hash']})")
    return EXIT_OK


def cmd_simulate(args) -> int:
    kind = Kind(args.scenario)
    kw = {"kind": kind, "seed": args.seed if args.seed is not None else 0}
    if args.gamma is not None:
        kw["gamma0"] = args.gamma
    if args.sigma2 is not None:
        kw["sigma0_sq"] = args.sigma2
    if args.n is not None:
        kw["n_train"] = args.n
    scenario = Scenario(**kw)
    data, truth = generate(scenario)
    out = Path(args.out)
    cols = [f"x{j + 1}" for j in range(scenario.p)]
    y = data.y * data.y_scale
    write_rows(out / "data.csv", ["y", *cols], ([float(y[i]), *map(float, data.X[i])] for i in range(data.n)))
    pairs = sorted(truth.h_test)
    test_rows = ([*map(float, truth.X_test[i]), float(truth.H_test[i]), *(float(truth.h_test[pq][i]) for pq in pairs)]
                 for i in range(len(truth.X_test)))
    write_rows(out / "test.csv", [*cols, "H", *(f"h_{u + 1}_{v + 1}" for u, v in pairs)], test_rows)
    write_json(out / "truth.json", truth.to_json())
    write_json(out / "config.json", {"response": "y", "exposures": cols, "log_response": False,
                                     "log_exposures": False, "cdf_transform": False, "seed": kw["seed"]})
    print(f"simulated {kind.value} data written to {out}")
    return EXIT_OK


def cmd_select(args) -> int:
    out = Path(args.out)
    samples, cfg = load_fit(out)
    cutoff = args.cutoff if args.cutoff is not None else cfg.get("cutoff", DEFAULT_CUTOFF)
    if not cutoff > 0:
        raise ConfigError("cutoff must be positive")
    data = load_dataset(out / "dataset.npz")
    write_selection(out, samples, cutoff, cfg.get("selection_grid", DEFAULT_GRID), list(data.exposure_names))
    sys.stdout.write((out / "selection.csv").read_text())
    return EXIT_OK


def cmd_diagnose(args) -> int:
    out = Path(args.out)
    samples, cfg = load_fit(out)
    data = load_dataset(out / "dataset.npz")
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    write_diagnostics(out, samples, data, seed)
    sys.stdout.write((out / "diagnostics.json").read_text())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="synantag", description="Synergistic/antagonistic interaction models.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log sampler progress")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="preprocess a CSV file and fit the model")
    fit.add_argument("--data", required=True, help="input CSV file")
    fit.add_argument("--config", help="JSON run configuration (flat keys)")
    fit.add_argument("--out", required=True, help="output directory")
    fit.add_argument("--iters", type=int, help="total iterations")
    fit.add_argument("--burnin", type=int, help="burn-in iterations")
    fit.add_argument("--seed", type=int)
    fit.add_argument("--cutoff", type=float, help="integral cutoff for selection")
    fit.add_argument("--chains", type=int, help="number of independent chains")
    fit.set_defaults(func=cmd_fit)

    sim = sub.add_parser("simulate", help="generate a simulation scenario with known truth")
    sim.add_argument("--scenario", required=True, choices=[k.value for k in Kind])
    sim.add_argument("--gamma", type=float, help="interaction strength")
    sim.add_argument("--sigma2", type=float, help="noise variance")
    sim.add_argument("--n", type=int, help="training sample size")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--out", required=True, help="output directory")
    sim.set_defaults(func=cmd_simulate)

    sel = sub.add_parser("select", help="recompute the selection report of a fit")
    sel.add_argument("--out", required=True, help="fit output directory")
    sel.add_argument("--cutoff", type=float)
    sel.set_defaults(func=cmd_select)

    dia = sub.add_parser("diagnose", help="recompute diagnostics of a fit")
    dia.add_argument("--out", required=True, help="fit output directory")
    dia.add_argument("--seed", type=int)
    dia.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
