"""Command-line experiment driver.

    bpce <subcommand> [--config FILE] [--output-dir DIR] [--set KEY=VALUE ...] [--workers N]

Subcommands: sample-env, tail-extinction, tail-max, tail-total, persistence,
verify. Exit status is 0 on success, 2 on configuration errors and 1 on a
failed run or a failed verification. All files are written at the end by a
single finalizer; nothing is left behind when a run fails.
"""
from __future__ import annotations

import argparse
import io
import json
import logging
import sys
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from . import __version__
from .analysis import Transform, fit_power_law, theoretical_exponents
from .config import SUBCOMMANDS, ExperimentConfig, load_config
from .env_gen import FgnSpec, env_to_bytes, sample_fgn
from .errors import BpceError, ConfigError
from .offspring import parse_family
from .sim import (
    TailEstimate,
    estimate_persistence,
    estimate_tail_extinction,
    estimate_tail_max,
    estimate_tail_total,
)

log = logging.getLogger("bpce")

SCHEMA = 1
CSV_COLUMNS = ("threshold", "p_hat", "std_err", "n_censored")

_TAIL_MODES = {
    "tail-extinction": ("extinction", Transform.LOG),
    "tail-max": ("max", Transform.LOGLOG),
    "tail-total": ("total", Transform.LOGLOG),
    "persistence": ("persistence", Transform.LOG),
}


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n").encode()


def tail_csv(est: TailEstimate, cfg: ExperimentConfig) -> bytes:
    buf = io.StringIO()
    buf.write(f"# bpce {__version__} tail table\n")
    buf.write(f"# schema = {SCHEMA}\n")
    buf.write(f"# estimate = {est.mode.value}\n")
    buf.write(f"# replicates = {est.replicates}\n")
    for key, value in cfg.items():
        buf.write(f"# config.{key} = {value}\n")
    buf.write(",".join(CSV_COLUMNS) + "\n")
    d = est.to_dict()
    for row in zip(d["thresholds"], d["p_hat"], d["std_err"], d["n_censored"]):
        buf.write(",".join(repr(v) for v in row) + "\n")
    return buf.getvalue().encode()


def read_tail_csv(path) -> Tuple[TailEstimate, Dict[str, str]]:
    """Parse a file written by ``tail_csv``; returns the table and its header."""
    meta: Dict[str, str] = {}
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            if value:
                meta[key.strip()] = value.strip()
        elif line and not line.startswith(CSV_COLUMNS[0]):
            rows.append(line.split(","))
    est = TailEstimate(
        thresholds=[float(r[0]) if "." in r[0] else int(r[0]) for r in rows],
        p_hat=[float(r[1]) for r in rows],
        std_err=[float(r[2]) for r in rows],
        n_censored=[int(r[3]) for r in rows],
        replicates=int(meta["replicates"]),
        mode=meta["estimate"],
    )
    return est, meta


def _fit_payload(est: TailEstimate, cfg: ExperimentConfig, transform: Transform) -> dict:
    theory = theoretical_exponents(cfg.hurst)
    predicted = {
        "extinction_time": -theory.extinction,
        "persistence": -theory.extinction,
        "max_population": -theory.max_pop,
        "total_population": -theory.total_pop,
    }[est.mode.value]
    payload = {
        "schema": SCHEMA,
        "kind": "power_law_fit",
        "config": cfg.as_dict(),
        "predicted_slope": predicted,
        "bias_acceptable": [bool(v) for v in est.bias_acceptable()],
    }
    try:
        payload["fit"] = fit_power_law(est, transform).to_dict()
    except BpceError as exc:
        payload["fit"] = None
        payload["fit_error"] = f"{type(exc).__name__}: {exc}"
    return payload


def _gnuplot(est: TailEstimate, fit: Optional[dict]) -> bytes:
    buf = io.StringIO()
    buf.write(f"# {est.mode.value}: threshold p_hat\n")
    if fit:
        buf.write(f"# fit slope = {fit['slope']!r} intercept = {fit['intercept']!r} ({fit['transform']})\n")
    for t, p in zip(est.thresholds, est.p_hat):
        buf.write(f"{t!r} {float(p)!r}\n")
    return buf.getvalue().encode()


def _svg(est: TailEstimate, fit: Optional[dict], transform: Transform) -> bytes:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    t = np.asarray(est.thresholds, dtype=float)
    x = np.log(t) if transform is Transform.LOGLOG else t
    fig, ax = plt.subplots(figsize=(5, 4))
    keep = est.p_hat > 0
    ax.errorbar(x[keep], est.p_hat[keep], yerr=est.std_err[keep], fmt="o", ms=3, label="estimate")
    if fit:
        lo, hi = fit["window"]
        xs = np.linspace(np.log(lo), np.log(hi), 50)
        tx = xs if transform is Transform.LOG else np.log(xs)
        px = np.exp(xs) if transform is Transform.LOG else xs
        ax.plot(px, np.exp(fit["intercept"] + fit["slope"] * tx), "-", label=f"slope {fit['slope']:.3f}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("log N" if transform is Transform.LOGLOG else "n")
    ax.set_ylabel("tail probability")
    ax.set_title(est.mode.value)
    ax.legend()
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()


def run_tail(cfg: ExperimentConfig, workers: int) -> Dict[str, bytes]:
    family = parse_family(cfg.family)
    if cfg.mode == "tail-extinction":
        est = estimate_tail_extinction(
            cfg.hurst, family, cfg.horizons, cfg.env_replicates, cfg.master_seed, workers=workers
        )
    elif cfg.mode == "tail-max":
        est = estimate_tail_max(
            cfg.hurst, family, cfg.thresholds, cfg.env_replicates, cfg.traj_per_env, cfg.master_seed, workers=workers
        )
    elif cfg.mode == "tail-total":
        est = estimate_tail_total(
            cfg.hurst, family, cfg.thresholds, cfg.env_replicates, cfg.traj_per_env, cfg.master_seed, workers=workers
        )
    else:
        est = estimate_persistence(
            cfg.hurst, cfg.lengths, cfg.level, cfg.env_replicates, cfg.master_seed, workers=workers
        )
    stem, transform = _TAIL_MODES[cfg.mode]
    fit = _fit_payload(est, cfg, transform)
    files = {
        f"{stem}.csv": tail_csv(est, cfg),
        f"{stem}.json": _json_bytes(
            {"schema": SCHEMA, "kind": "tail_estimate", "config": cfg.as_dict(), "estimate": est.to_dict()}
        ),
        f"{stem}_fit.json": _json_bytes(fit),
        f"{stem}_fit.dat": _gnuplot(est, fit["fit"]),
    }
    if cfg.plot:
        files[f"{stem}.svg"] = _svg(est, fit["fit"], transform)
    return files


def run_sample_env(cfg: ExperimentConfig) -> Dict[str, bytes]:
    env = sample_fgn(FgnSpec(cfg.hurst, cfg.length, cfg.master_seed))
    meta = {"schema": SCHEMA, "kind": "env_dump", "config": cfg.as_dict(), "length": env.length, "format": "BPCEENV1 u32 length u32 reserved, then <f8 increments"}
    return {"env.bin": env_to_bytes(env), "env.json": _json_bytes(meta)}


def run_verify(cfg: ExperimentConfig) -> Tuple[Dict[str, bytes], bool]:
    from .verify import run_all

    env_count = min(cfg.env_replicates, 200)
    results = run_all(cfg.hurst, cfg.master_seed, env_count=env_count, trajectories=cfg.trajectories)
    for r in results:
        log.info("%-22s %s", r.name, "PASS" if r.passed else "FAIL")
    ok = all(r.passed for r in results)
    report = {
        "schema": SCHEMA,
        "kind": "verify",
        "config": cfg.as_dict(),
        "passed": ok,
        "checks": [r.to_dict() for r in results],
    }
    return {"verify.json": _json_bytes(report)}, ok


def write_outputs(outdir: Path, files: Dict[str, bytes]) -> None:
    """Write every artifact or none of them."""
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    try:
        for name, data in files.items():
            path = outdir / name
            path.write_bytes(data)
            written.append(path)
    except BaseException:
        for path in written:
            path.unlink(missing_ok=True)
        raise


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bpce", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"bpce {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI-style config file")
        p.add_argument("--output-dir", help="override output_dir")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--workers", type=int, default=1, help="parallel worker processes (does not affect results)")
        p.add_argument("-q", "--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        overrides = {}
        for item in args.set:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            overrides[key.strip()] = value.strip()
        if args.output_dir:
            overrides["output_dir"] = args.output_dir
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg = load_config(args.command, args.config, overrides)
    except ConfigError as exc:
        print(f"bpce: config error: {exc}", file=sys.stderr)
        return 2

    ok = True
    try:
        if args.command == "sample-env":
            files = run_sample_env(cfg)
        elif args.command == "verify":
            files, ok = run_verify(cfg)
        else:
            files = run_tail(cfg, args.workers)
        write_outputs(Path(cfg.output_dir), files)
    except ConfigError as exc:
        print(f"bpce: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report and exit nonzero
        print(f"bpce: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for name in files:
        log.info("wrote %s", Path(cfg.output_dir) / name)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
