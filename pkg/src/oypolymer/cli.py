"""Command-line entry point.

Subcommands drive the verification suite, the scaling experiments, the
quenched path sampler, and environment generation.  Every run writes a
``manifest.json`` into the output directory recording the command, the
fully resolved configuration, the seed, and a sha256 checksum per output
file; re-running with the same configuration (the manifest itself is
accepted as a config file) reproduces the checksums exactly for any
worker count.

Exit codes: 0 success, 1 scientific failure (a verification check or
experiment acceptance window failed), 2 usage or configuration error.

Config files are INI-style::

    [run]
    seed = 0
    workers = 2

    [verify]
    tests = dufresne, mean, comparison
    theta = 1.0
    n = 4
    t = 2.0
    replicas = 400

    [experiment]
    theta = 1.0
    n_values = 16, 32, 64
    replicas = 500
    m_per_level = 50
    gamma = 0.5

    [sample]
    model = boundary
    n = 4
    m = 200
    t = 2.0
    theta = 1.0
    count = 100

    [env-gen]
    n = 4
    m = 200
    t = 2.0
    count = 3
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from configparser import ConfigParser
from pathlib import Path

from . import __version__
from ._parallel import CH_ENV, stream
from .environment import GridSpec, sample_boundary, sample_environment, save_environment
from .experiments import (
    ExperimentConfig,
    run_free_energy,
    run_freeZ_fluctuation,
    run_path_exponent,
    run_sigma_tail,
    run_variance_exponent,
    write_csv,
    write_json,
)
from .partition import backward
from .quenched import export_paths_csv, sample_path_boundary, sample_path_free
from .verify import (
    default_steps,
    run_comparison_suite,
    test_burke_independence,
    test_dufresne,
    test_mean_identity,
    test_reversal,
    test_variance_identity,
)

EXIT_OK = 0
EXIT_SCIENTIFIC = 1
EXIT_CONFIG = 2

VERIFY_TESTS = ("dufresne", "burke", "mean", "variance", "comparison", "reversal")


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration plumbing
# ---------------------------------------------------------------------------

def _load_config(path: str | None) -> dict[str, dict[str, str]]:
    """INI sections as string dicts; a manifest JSON is accepted too."""
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    if p.suffix == ".json":
        with open(p) as fh:
            manifest = json.load(fh)
        cfg = manifest.get("config")
        if not isinstance(cfg, dict):
            raise ConfigError(f"{path}: no 'config' object in manifest")
        return {sec: {k: str(v) for k, v in opts.items()}
                for sec, opts in cfg.items()}
    parser = ConfigParser()
    parser.read(p)
    return {sec: dict(parser.items(sec)) for sec in parser.sections()}


def _get(section: dict[str, str], key: str, cast, default):
    if key not in section:
        return default
    raw = section[key]
    try:
        if cast is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return cast(raw)
    except ValueError:
        raise ConfigError(f"bad value for '{key}': {raw!r}") from None


def _int_list(section: dict[str, str], key: str, default):
    if key not in section:
        return default
    try:
        return tuple(int(x) for x in section[key].replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"bad value for '{key}': {section[key]!r}") from None


def _resolve_workers(args, cfg) -> int:
    if args.workers is not None:
        return args.workers
    run = cfg.get("run", {})
    if "workers" in run:
        return _get(run, "workers", int, 1)
    env = os.environ.get("OYPOLYMER_WORKERS")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"bad OYPOLYMER_WORKERS value: {env!r}") from None
    return os.cpu_count() or 1


def _resolve_seed(args, cfg, section: dict[str, str]) -> int:
    if args.seed is not None:
        return args.seed
    if "seed" in section:
        return _get(section, "seed", int, 0)
    return _get(cfg.get("run", {}), "seed", int, 0)


def _resolve_doubling(args, section: dict[str, str], default: bool) -> bool:
    if args.resolution_doubling is not None:
        return args.resolution_doubling == "on"
    return _get(section, "resolution_doubling", bool, default)


def _experiment_config(args, cfg, default_n=(16, 32, 64, 128, 256),
                       default_replicas=2000, doubling_default=False,
                       ) -> ExperimentConfig:
    sec = cfg.get("experiment", {})
    theta = _get(sec, "theta", float, None)
    beta = _get(sec, "beta", float, None)
    tau = _get(sec, "tau", float, None)
    if theta is None and beta is None and tau is None:
        theta = 1.0
    try:
        return ExperimentConfig(
            n_values=_int_list(sec, "n_values", default_n),
            theta=theta, beta=beta, tau=tau,
            A=_get(sec, "a", float, _get(sec, "A", float, 0.0)),
            gamma=_get(sec, "gamma", float, 0.5),
            replicas=_get(sec, "replicas", int, default_replicas),
            m_per_level=_get(sec, "m_per_level", int, 50),
            seed=_resolve_seed(args, cfg, sec),
            resolution_doubling=_resolve_doubling(args, sec, doubling_default),
        )
    except ValueError as exc:
        raise ConfigError(f"[experiment] {exc}") from None


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: Path, command: str, config: dict, seed: int,
                    workers: int, outputs: list[Path], started: float) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "version": __version__,
        "seed": seed,
        "workers": workers,
        "started": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
        "ended": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "outputs": [{"path": p.name, "sha256": _sha256(p)} for p in outputs],
    }
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _echo_config(args, cfg, sections: tuple[str, ...]) -> dict:
    echo = {sec: dict(cfg.get(sec, {})) for sec in sections if cfg.get(sec)}
    run = echo.setdefault("run", {})
    if args.seed is not None:
        run["seed"] = str(args.seed)
    if args.resolution_doubling is not None:
        for sec in sections:
            if sec != "run":
                echo.setdefault(sec, {})["resolution_doubling"] = (
                    "on" if args.resolution_doubling == "on" else "off")
    return echo


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_verify(args, cfg, out_dir, workers) -> int:
    sec = cfg.get("verify", {})
    names = tuple(x for x in sec.get(
        "tests", ",".join(VERIFY_TESTS)).replace(",", " ").split())
    for name in names:
        if name not in VERIFY_TESTS:
            raise ConfigError(
                f"[verify] tests contains unknown name {name!r}; "
                f"known: {', '.join(VERIFY_TESTS)}")
    seed = _resolve_seed(args, cfg, sec)
    theta = _get(sec, "theta", float, 1.0)
    n = _get(sec, "n", int, 4)
    t = _get(sec, "t", float, 2.0)
    replicas = _get(sec, "replicas", int, 400)
    m = _get(sec, "m", int, None)
    doubling = _resolve_doubling(args, sec, True)
    grid_m = m if m is not None else default_steps(n, t)
    started = time.time()
    reports = []
    for name in names:
        if name == "dufresne":
            rep = test_dufresne(theta, replicas, GridSpec(1, t, grid_m),
                                seed=seed, workers=workers, doubling=doubling)
        elif name == "burke":
            rep = test_burke_independence(theta, replicas, GridSpec(n, t, grid_m),
                                          seed=seed, workers=workers)
        elif name == "mean":
            rep = test_mean_identity(theta, n, t, replicas, m=m, seed=seed,
                                     workers=workers, doubling=doubling)
        elif name == "variance":
            rep = test_variance_identity(theta, n, t, replicas, m=m, seed=seed,
                                         workers=workers, doubling=doubling)
        elif name == "comparison":
            count = _get(sec, "count", int, 100)
            rep = run_comparison_suite(theta, n, grid_m, t, count,
                                       seed=seed, workers=workers)
        else:
            rep = test_reversal(theta, n, t, replicas, m=m, seed=seed,
                                workers=workers, doubling=doubling)
        reports.append(rep)
        status = "PASS" if rep.passed else "FAIL"
        print(f"{status} {rep.name}: {rep.notes or ''}")
    out = out_dir / "verify_reports.json"
    write_json(out, [r.to_dict() for r in reports])
    _write_manifest(out_dir, "verify", _echo_config(args, cfg, ("run", "verify")),
                    seed, workers, [out], started)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_SCIENTIFIC


def _fit_outputs(out_dir, fits: dict, csv_name: str, json_name: str):
    rows = []
    for label, fit in fits.items():
        for n, stat, se in fit.points:
            rows.append({"model": label, "n": n, "statistic": stat,
                         "stderr": se})
    csv_path = out_dir / csv_name
    write_csv(csv_path, rows)
    json_path = out_dir / json_name
    write_json(json_path, {label: fit.to_dict() for label, fit in fits.items()})
    return [csv_path, json_path]


def _cmd_exponent(args, cfg, out_dir, workers) -> int:
    ecfg = _experiment_config(args, cfg)
    started = time.time()
    fit = run_variance_exponent(ecfg, workers=workers)
    outputs = _fit_outputs(out_dir, {"boundary": fit},
                           "variance_exponent.csv", "variance_exponent.json")
    _write_manifest(out_dir, "exponent",
                    _echo_config(args, cfg, ("run", "experiment")),
                    ecfg.seed, workers, outputs, started)
    flag = " (inconclusive)" if fit.inconclusive else ""
    print(f"variance exponent slope: {fit.slope:.4f} "
          f"+/- {fit.slope_stderr:.4f}{flag}")
    return EXIT_SCIENTIFIC if fit.inconclusive else EXIT_OK


def _cmd_path(args, cfg, out_dir, workers) -> int:
    ecfg = _experiment_config(args, cfg)
    started = time.time()
    fits = run_path_exponent(ecfg, workers=workers)
    outputs = _fit_outputs(out_dir, fits, "path_exponent.csv",
                           "path_exponent.json")
    _write_manifest(out_dir, "path",
                    _echo_config(args, cfg, ("run", "experiment")),
                    ecfg.seed, workers, outputs, started)
    bad = False
    for label, fit in fits.items():
        flag = " (inconclusive)" if fit.inconclusive else ""
        bad = bad or fit.inconclusive
        print(f"path exponent slope [{label}]: {fit.slope:.4f} "
              f"+/- {fit.slope_stderr:.4f}{flag}")
    return EXIT_SCIENTIFIC if bad else EXIT_OK


def _cmd_free_energy(args, cfg, out_dir, workers) -> int:
    ecfg = _experiment_config(args, cfg, default_n=(4, 16, 64),
                              default_replicas=100, doubling_default=True)
    started = time.time()
    rows = run_free_energy(ecfg, workers=workers)
    csv_path = out_dir / "free_energy.csv"
    write_csv(csv_path, rows)
    _write_manifest(out_dir, "free-energy",
                    _echo_config(args, cfg, ("run", "experiment")),
                    ecfg.seed, workers, [csv_path], started)
    errs = [r["abs_error"] for r in rows]
    for r in rows:
        print(f"n={r['n']}: per-level mean {r['mean_per_level']:.4f}, "
              f"limit {r['limit']:.4f}, |error| {r['abs_error']:.4f}")
    monotone = all(b < a for a, b in zip(errs, errs[1:]))
    return EXIT_OK if monotone else EXIT_SCIENTIFIC


def _cmd_fluctuation(args, cfg, out_dir, workers) -> int:
    ecfg = _experiment_config(args, cfg, default_n=(64, 256),
                              default_replicas=500, doubling_default=True)
    started = time.time()
    result = run_freeZ_fluctuation(ecfg, workers=workers)
    csv_path = out_dir / "fluctuation.csv"
    write_csv(csv_path, result["levels"])
    json_path = out_dir / "fluctuation.json"
    write_json(json_path, result)
    _write_manifest(out_dir, "fluctuation",
                    _echo_config(args, cfg, ("run", "experiment")),
                    ecfg.seed, workers, [csv_path, json_path], started)
    print(f"normalized collapse Kolmogorov distance "
          f"(n={result['ks_pair'][0]} vs {result['ks_pair'][1]}): "
          f"{result['ks_distance']:.4f}")
    return EXIT_OK


def _cmd_sample(args, cfg, out_dir, workers) -> int:
    sec = cfg.get("sample", {})
    model = sec.get("model", "boundary")
    if model not in ("free", "boundary"):
        raise ConfigError(f"[sample] model must be free or boundary, got {model!r}")
    n = _get(sec, "n", int, 4)
    m = _get(sec, "m", int, 200)
    t = _get(sec, "t", float, 2.0)
    theta = _get(sec, "theta", float, 1.0)
    count = _get(sec, "count", int, 100)
    seed = _resolve_seed(args, cfg, sec)
    started = time.time()
    grid = GridSpec(n, t, m)
    if _get(sec, "zero_noise", bool, False):
        import numpy as np

        from .environment import Environment
        env = Environment(grid, np.zeros((n, m)), np.zeros(m), seed, 0)
    else:
        env = sample_environment(grid, seed, stream(0, CH_ENV))
    bw = backward(env)
    if model == "free":
        samples = sample_path_free(env, bw, count=count, seed=seed, stream_id=7)
    else:
        w = sample_boundary(theta, n, seed, stream(0, 1))
        samples = sample_path_boundary(env, w, bw, count=count, seed=seed,
                                       stream_id=7)
    csv_path = out_dir / "paths.csv"
    export_paths_csv(samples, csv_path)
    _write_manifest(out_dir, "sample", _echo_config(args, cfg, ("run", "sample")),
                    seed, workers, [csv_path], started)
    print(f"wrote {count} {model}-model paths to {csv_path}")
    return EXIT_OK


def _cmd_env_gen(args, cfg, out_dir, workers) -> int:
    sec = cfg.get("env-gen", cfg.get("env_gen", {}))
    n = _get(sec, "n", int, 4)
    m = _get(sec, "m", int, 200)
    t = _get(sec, "t", float, 2.0)
    count = _get(sec, "count", int, 1)
    seed = _resolve_seed(args, cfg, sec)
    started = time.time()
    grid = GridSpec(n, t, m)
    outputs = []
    for rep in range(count):
        env = sample_environment(grid, seed, stream(rep, CH_ENV))
        path = out_dir / f"environment_{rep:04d}.bin"
        save_environment(env, path)
        outputs.append(path)
    _write_manifest(out_dir, "env-gen",
                    _echo_config(args, cfg, ("run", "env-gen")),
                    seed, workers, outputs, started)
    print(f"wrote {count} environment file(s) to {out_dir}")
    return EXIT_OK


_COMMANDS = {
    "verify": _cmd_verify,
    "exponent": _cmd_exponent,
    "path": _cmd_path,
    "free-energy": _cmd_free_energy,
    "fluctuation": _cmd_fluctuation,
    "sample": _cmd_sample,
    "env-gen": _cmd_env_gen,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="oypolymer",
        description="Simulation and verification toolkit for the "
                    "semi-discrete Brownian directed polymer.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None,
                       help="INI config file, or a manifest.json from a prior run")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--out-dir", default=".")
        p.add_argument("--resolution-doubling", choices=("on", "off"),
                       default=None)
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config)
        workers = _resolve_workers(args, cfg)
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](args, cfg, out_dir, workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
