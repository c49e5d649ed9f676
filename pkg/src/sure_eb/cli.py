"""Command-line interface: ``sure-eb {simulate,fit,fission,cv}``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
JSON output is canonical and carries ``{"schema_version", "config", "rows"}``;
the ``config`` block can be fed back with ``--config`` to rerun a command
bit-for-bit. Input CSVs need ``z`` and ``sigma`` (a standard deviation, not
a variance); columns named ``x1, x2, ...`` are used as covariates.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .estimators import FITTERS, FitConfig, cv_sure, fit
from .evaluation import MseReport, fission_evaluate, insample_mse
from .exceptions import DataError, NumericalError
from .mixture import Observations
from .simgen import SETTINGS, DgpSpec, generate

log = logging.getLogger("sure_eb")

SCHEMA_VERSION = 1
EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 2, 3, 4
COVARIATE_FREE = {"npmle", "sure-pm", "grandmean", "mle"}


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    methods: list = field(default_factory=lambda: ["sure-pm", "npmle"])
    setting: str = None
    a_star: float = 1.0
    m_star: float = 3.0
    k_star: int = 5
    input: str = None
    n: list = field(default_factory=lambda: [1000])
    replicates: int = 1
    K: int = 100
    seed: int = 0
    iters: int = 2000
    lr: float = 0.01
    folds: int = 5
    grid: dict = field(default_factory=dict)
    format: str = "json"
    timings: bool = False

    def fit_config(self, seed=None) -> FitConfig:
        return FitConfig(
            K=self.K,
            iterations=self.iters,
            learning_rate=self.lr,
            folds=self.folds,
            seed=self.seed if seed is None else seed,
        )

    @classmethod
    def from_dict(cls, d) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise UsageError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------- CSV input


def read_observations(path) -> tuple[Observations, list, list]:
    """Parse an input CSV; returns ``(observations, header, raw rows)``."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    for col in ("z", "sigma"):
        if col not in header:
            raise DataError(f"input is missing required column {col!r}")
    xcols = sorted((c for c in header if c.startswith("x") and c[1:].isdigit()), key=lambda c: int(c[1:]))
    rows = list(reader)
    if not rows:
        raise DataError("input has no data rows")
    z = np.empty(len(rows))
    sigma = np.empty(len(rows))
    cov = np.empty((len(rows), len(xcols)))
    for i, row in enumerate(rows):
        line = i + 2  # header is line 1
        try:
            z[i] = float(row["z"])
            sigma[i] = float(row["sigma"])
            for j, c in enumerate(xcols):
                cov[i, j] = float(row[c])
        except (TypeError, ValueError):
            raise DataError(f"line {line}: non-numeric or missing value") from None
        if not (np.isfinite(z[i]) and np.isfinite(sigma[i]) and np.all(np.isfinite(cov[i]))):
            raise DataError(f"line {line}: NaN or infinite value")
        if sigma[i] <= 0:
            raise DataError(f"line {line}: sigma must be positive")
    return Observations(z, sigma**2, cov), header, rows


def _fmt(v):
    if v is None or (isinstance(v, float) and not np.isfinite(v)):
        return ""
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(r.get(h)) for h in header])
    Path(path).write_text(buf.getvalue())


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _emit(cfg: RunConfig, out, rows, header, extra=None):
    payload = {"schema_version": SCHEMA_VERSION, "config": asdict(cfg), "rows": rows}
    if extra:
        payload.update(extra)
    if cfg.format == "json":
        _write_json(out, payload)
    else:
        _write_csv(out, header, rows)


# ---------------------------------------------------------------- simulate


def _method_seed(seed, replicate, method):
    ss = np.random.SeedSequence([seed, replicate, 2, sum(ord(ch) * 31**i for i, ch in enumerate(method)) % 2**32])
    return int(ss.generate_state(1)[0])


def _simulate_one(args):
    cfg, n, b = args
    spec = DgpSpec(cfg.setting, n, cfg.seed, b, cfg.a_star, cfg.m_star, cfg.k_star)
    draw = generate(spec)
    out = []
    for method in cfg.methods:
        t0 = time.perf_counter()
        if method == "oracle":
            est = draw.oracle_estimates
        else:
            est = fit(method, draw.observations, cfg.fit_config(_method_seed(cfg.seed, b, method))).estimates
        out.append((n, method, b, insample_mse(draw.mu, est), time.perf_counter() - t0))
    return out


def _workers():
    try:
        return max(1, int(os.environ.get("SURE_EB_THREADS", "1")))
    except ValueError:
        raise UsageError("SURE_EB_THREADS must be an integer") from None


def cmd_simulate(cfg: RunConfig, out):
    if cfg.setting not in SETTINGS:
        raise UsageError(f"unknown setting {cfg.setting!r}; valid: {', '.join(SETTINGS)}")
    jobs = [(cfg, n, b) for n in cfg.n for b in range(cfg.replicates)]
    workers = _workers()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_simulate_one, jobs))
    else:
        results = [_simulate_one(j) for j in jobs]
    records = sorted(r for batch in results for r in batch)
    rows, plot = [], []
    for n in cfg.n:
        per = {m: [r[3] for r in records if r[0] == n and r[1] == m] for m in cfg.methods}
        rt = {m: sum(r[4] for r in records if r[0] == n and r[1] == m) for m in cfg.methods}
        rep = MseReport.from_replicates(cfg.setting, n, per)
        for m in sorted(cfg.methods):
            row = {
                "setting": cfg.setting,
                "n": n,
                "method": m,
                "mse_mean": rep.mse_mean[m],
                "mse_se": rep.mse_se[m] if cfg.replicates > 1 else None,
                "replicates": cfg.replicates,
                "runtime_s": rt[m] if cfg.timings else None,
                "seed": cfg.seed,
            }
            rows.append(row)
            plot.append({"setting": cfg.setting, "method": m, "n": n, "mse": row["mse_mean"], "se": row["mse_se"]})
    header = ["setting", "n", "method", "mse_mean", "mse_se", "replicates", "runtime_s", "seed"]
    _emit(cfg, out, rows, header, {"plot_data": plot})
    _write_csv(_sidecar(out, ".plot.csv"), ["setting", "method", "n", "mse", "se"], plot)
    return rows


def _sidecar(out, suffix):
    out = Path(out)
    return out.with_name(out.stem + suffix)


# ---------------------------------------------------------------- fit / fission / cv


def _check_methods(methods, allowed):
    bad = [m for m in methods if m not in allowed]
    if bad:
        raise UsageError(f"unknown method(s) {bad}; valid: {', '.join(sorted(allowed))}")


def cmd_fit(cfg: RunConfig, out):
    if len(cfg.methods) != 1:
        raise UsageError("fit takes exactly one method")
    method = cfg.methods[0]
    _check_methods([method], FITTERS)
    data, header, raw = read_observations(cfg.input)
    res = fit(method, data, cfg.fit_config())
    rows = []
    for i, r in enumerate(raw):
        row = dict(r)
        row["mu_hat"] = float(res.estimates[i])
        row["post_var"] = None if res.variances is None else float(res.variances[i])
        rows.append(row)
    _write_csv(out, list(header) + ["mu_hat", "post_var"], rows)
    side = {
        "schema_version": SCHEMA_VERSION,
        "method": method,
        "final_loss": res.final_loss,
        "iterations_run": res.iterations_run,
        "config": asdict(cfg),
    }
    if res.prior is not None:
        side["prior"] = {"atoms": res.prior.atoms.tolist(), "weights": res.prior.weights.tolist()}
    _write_json(_sidecar(out, ".json"), side)
    return rows


def covariate_label(method, data: Observations):
    if method in COVARIATE_FREE:
        return "None"
    d = data.covariates.shape[1]
    if d == 0:
        return "sigma"
    return "(" + ", ".join(f"x{j + 1}" for j in range(d)) + ", sigma)"


def cmd_fission(cfg: RunConfig, out):
    _check_methods(cfg.methods, FITTERS)
    methods = list(dict.fromkeys(["npmle"] + list(cfg.methods)))
    data, _, _ = read_observations(cfg.input)
    rep = fission_evaluate(data, methods, cfg.replicates, cfg.seed, cfg.fit_config())
    rows = [
        {
            "covariates": covariate_label(m, data),
            "estimator": m,
            "ri_percent": 100.0 * rep.ri[m],
            "se_ri_percent": 100.0 * rep.se_ri[m],
            "fmse": rep.fmse[m],
        }
        for m in methods
    ]
    _emit(cfg, out, rows, ["covariates", "estimator", "ri_percent", "se_ri_percent", "fmse"],
          {"fmse_mle": rep.fmse_mle})
    return rows


def cmd_cv(cfg: RunConfig, out):
    if len(cfg.methods) != 1:
        raise UsageError("cv takes exactly one method")
    _check_methods(cfg.methods, FITTERS)
    if not cfg.grid:
        raise UsageError("cv needs a non-empty --grid")
    data, _, _ = read_observations(cfg.input)
    res = cv_sure(data, cfg.methods[0], cfg.grid, cfg.folds, cfg.fit_config())
    rows = []
    for c, cand in enumerate(res.candidates):
        for k in range(cfg.folds):
            rows.append({"candidate": json.dumps(cand, sort_keys=True), "fold": k, "cv_sure": float(res.scores[c, k])})
    _emit(cfg, out, rows, ["candidate", "fold", "cv_sure"],
          {"mean_scores": [float(s) for s in res.mean_scores], "best": res.best})
    return rows


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "fission": cmd_fission, "cv": cmd_cv}


# ---------------------------------------------------------------- argument parsing


def _csv_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def _parse_grid(items):
    grid = {}
    for item in items or []:
        name, _, values = item.partition("=")
        if not values:
            raise UsageError(f"--grid expects NAME=v1,v2 (got {item!r})")
        if name not in {f.name for f in fields(FitConfig)}:
            raise UsageError(f"--grid name {name!r} is not a fit option")
        parsed = []
        for v in _csv_list(values):
            try:
                parsed.append(json.loads(v))
            except json.JSONDecodeError:
                parsed.append(v)
        grid[name] = parsed
    return grid


def build_parser():
    p = argparse.ArgumentParser(prog="sure-eb", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="rerun from the config block of an earlier JSON output")
        s.add_argument("--out", required=True)
        s.add_argument("--format", choices=["json", "csv"], default="json")
        s.add_argument("--methods", "--method", dest="methods", type=_csv_list)
        s.add_argument("--k", dest="K", type=int, default=100)
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--iters", type=int, default=2000)
        s.add_argument("--lr", type=float, default=0.01)
        s.add_argument("--folds", type=int, default=5)
        s.add_argument("--replicates", type=int, default=1)
        if name == "simulate":
            s.add_argument("--setting", required=False)
            s.add_argument("--n", type=lambda t: [int(v) for v in _csv_list(t)], default=[1000])
            s.add_argument("--a-star", type=float, default=1.0)
            s.add_argument("--m-star", type=float, default=3.0)
            s.add_argument("--k-star", type=int, default=5)
            s.add_argument("--timings", action="store_true", help="record wall-clock runtimes (not reproducible)")
        else:
            s.add_argument("--input")
        if name == "cv":
            s.add_argument("--grid", action="append", help="NAME=v1,v2 (repeatable)")
    return p


def config_from_args(ns) -> RunConfig:
    if ns.config:
        try:
            blob = json.loads(Path(ns.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot load --config: {exc}") from None
        cfg = RunConfig.from_dict(blob.get("config", blob))
        if cfg.command != ns.command:
            raise UsageError(f"config is for {cfg.command!r}, not {ns.command!r}")
        return cfg
    cfg = RunConfig(command=ns.command, K=ns.K, seed=ns.seed, iters=ns.iters, lr=ns.lr,
                    folds=ns.folds, replicates=ns.replicates, format=ns.format)
    if ns.methods:
        cfg.methods = ns.methods
    if ns.command == "simulate":
        if not ns.setting:
            raise UsageError(f"--setting is required; valid: {', '.join(SETTINGS)}")
        cfg.setting, cfg.n, cfg.timings = ns.setting, ns.n, ns.timings
        cfg.a_star, cfg.m_star, cfg.k_star = ns.a_star, ns.m_star, ns.k_star
        if not ns.methods:
            cfg.methods = ["sure-pm", "npmle", "oracle"]
        _check_methods(cfg.methods, set(FITTERS) | {"oracle"})
    else:
        if not ns.input:
            raise UsageError("--input is required")
        cfg.input = ns.input
        if ns.command == "cv":
            cfg.grid = _parse_grid(ns.grid)
            if not ns.methods:
                cfg.methods = ["sure-pm"]
        elif ns.command == "fit" and not ns.methods:
            cfg.methods = ["sure-pm"]
    if ns.command != "simulate" and ns.command != "cv" and cfg.replicates < 2 and ns.command == "fission":
        raise UsageError("fission needs --replicates >= 2")
    return cfg


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = config_from_args(ns)
        COMMANDS[cfg.command](cfg, ns.out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
