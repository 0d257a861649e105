"""Command-line entry points.

Every run is described by one JSON config file; flags only override it.
Exit codes: 0 pass, 1 verdict failure, 2 config or I/O error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cumulant import reports_to_csv, run_suite
from .exceptions import MdelabError, ValidationError
from .harness import ExperimentConfig, build_A, run_local_law_experiment
from .mde import MdeOptions, VarianceProfile, solve_mde, solve_mde_curve
from .measures import AtomicMeasure, spectral_measure_of
from .scalar import density

EXIT_OK, EXIT_VERDICT, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


class ConfigError(Exception):
    pass


def _load_config(path):
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc


def _write(out: Path, name: str, text: str):
    (out / name).write_text(text, encoding="utf-8", newline="\n")


def _meta(out: Path, command: str, config: dict):
    meta = {
        "schema": 1,
        "command": command,
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "config": config,
    }
    _write(out, "meta.json", json.dumps(meta, indent=2, sort_keys=True))


def _load_matrix(path) -> np.ndarray:
    p = Path(path)
    try:
        if p.suffix == ".npy":
            return np.load(p)
        data = json.loads(p.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read matrix file {path}: {exc}") from exc
    X = np.asarray(data, dtype=float)
    return X[..., 0] + 1j * X[..., 1] if X.ndim == 3 else X


def _matrix_A(cfg: dict, base: Path) -> np.ndarray:
    if "A_file" in cfg:
        return _load_matrix(base / cfg["A_file"])
    if "A" in cfg:
        if "N" not in cfg:
            raise ValidationError("an inline A spec needs 'N'")
        if cfg["A"].get("rotate") and "seed" not in cfg:
            raise ConfigError("a rotated A needs a seed (config 'seed' or --seed)")
        return build_A(cfg["A"], int(cfg["N"]), int(cfg.get("seed", 0)))
    raise ValidationError("config needs 'A' or 'A_file'")


def _grid(spec) -> np.ndarray:
    if isinstance(spec, dict):
        return np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"]))
    return np.asarray(spec, dtype=float)


# --------------------------------------------------------------------------- commands


def cmd_density(cfg: dict, out: Path, base: Path, args) -> int:
    if "nu" in cfg:
        nu = AtomicMeasure.from_atoms(cfg["nu"]["atoms"])
    else:
        nu = spectral_measure_of(_matrix_A(cfg, base))
    E = _grid(cfg.get("E_grid", {"start": -3.0, "stop": 3.0, "num": 601}))
    if E.size == 0:
        raise ValidationError("empty energy grid")
    rho = density(nu, E, float(cfg.get("eta_eval", 1e-5)))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["E", "rho"])
    for e, r in zip(E, rho):
        w.writerow([repr(float(e)), repr(float(r))])
    _write(out, "density.csv", buf.getvalue())
    return EXIT_OK


def cmd_solve_mde(cfg: dict, out: Path, base: Path, args) -> int:
    A = _matrix_A(cfg, base)
    N = A.shape[0]
    if "profile_file" in cfg:
        try:
            pd = json.loads((base / cfg["profile_file"]).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read profile file: {exc}") from exc
        profile = VarianceProfile.from_dict(pd)
    else:
        pd = dict(cfg.get("profile", {"mode": "wigner"}))
        pd.setdefault("N", N)
        profile = VarianceProfile.from_dict(pd)
    if profile.N != N:
        raise ValidationError(f"profile has size {profile.N} but A has size {N}")
    opts = MdeOptions(**cfg.get("options", {}))
    rows, failed = [], False
    if "ladder" in cfg:
        E = float(cfg["ladder"]["E"])
        etas = [float(x) for x in cfg["ladder"]["etas"]]
        try:
            sols = solve_mde_curve(A, profile, E, etas, opts)
        except MdelabError as exc:
            sols, failed = [], True
            rows.append([repr(E), "", "", "", "", f"{type(exc).__name__}: {exc}"])
    else:
        sols = []
        for zs in cfg.get("z", []):
            z = complex(float(zs.get("E", 0.0)), float(zs["eta"]))
            try:
                sols.append(solve_mde(A, profile, z, opts))
            except MdelabError as exc:
                failed = True
                rows.append([repr(z.real), repr(z.imag), "", "", "", f"{type(exc).__name__}: {exc}"])
        if not cfg.get("z"):
            raise ValidationError("config needs a 'z' list or a 'ladder'")
    for k, sol in enumerate(sols):
        _write(out, f"solution_{k:03d}.json", sol.to_json())
        rows.append([repr(sol.z.E), repr(sol.z.eta), repr(sol.residual_norm), repr(sol.min_imag_eig),
                     sol.iterations, ""])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["E", "eta", "residual", "min_imag_eig", "iterations", "error"])
    w.writerows(rows)
    _write(out, "summary.csv", buf.getvalue())
    return EXIT_NUMERICAL if failed else EXIT_OK


def cmd_verify(cfg: dict, out: Path, base: Path, args) -> int:
    config = ExperimentConfig.from_dict(cfg)
    report = run_local_law_experiment(config, threads=args.threads)
    _write(out, "report.json", report.to_json())
    _write(out, "report.csv", report.to_csv())
    _write(out, "summary.csv", report.summary_csv())
    lines = [f"{'PASS' if v['pass'] else 'FAIL'} {v['name']} ({v['rule']}, {v.get('stat')}, "
             f"threshold {v.get('threshold')}): {v.get('value')}" for v in report.verdicts]
    for f in report.failures:
        lines.append(f"INCOMPLETE N={f['N']} trial={f['trial']} z_index={f['z_index']}: {f['error']}")
    _write(out, "verdicts.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))
    if not report.passed:
        return EXIT_VERDICT
    return EXIT_OK if report.complete else EXIT_NUMERICAL


def cmd_cumulant(cfg: dict, out: Path, base: Path, args) -> int:
    reports = run_suite(
        cfg.get("laws", ["gaussian", "rademacher", "skew", "exponential"]),
        cfg.get("functions", ["poly3", "exp", "resolvent"]),
        cfg.get("ells", [2, 3, 4]),
        int(cfg.get("N", 100)),
        float(cfg.get("tau", 0.1)),
    )
    _write(out, "cumulant.csv", reports_to_csv(reports))
    return EXIT_OK if all(r.passed for r in reports) else EXIT_VERDICT


COMMANDS = {
    "density": cmd_density,
    "solve-mde": cmd_solve_mde,
    "verify": cmd_verify,
    "cumulant": cmd_cumulant,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdelab", description="Matrix Dyson equation and local-law laboratory.")
    parser.add_argument("--version", action="version", version=f"mdelab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("density", "density of the free convolution of the semicircle with nu"),
        ("solve-mde", "solve the matrix Dyson equation at one or more spectral parameters"),
        ("verify", "run a Monte-Carlo local-law experiment"),
        ("cumulant", "check cumulant expansions on test laws and functions"),
    ]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", metavar="PATH", help="JSON config file")
        p.add_argument("--seed", type=int, metavar="U64", help="override the master seed")
        p.add_argument("--threads", type=int, metavar="K", default=None,
                       help="cap on parallel trials (default: available cores)")
        p.add_argument("--out", metavar="DIR", default=".", help="output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg["seed"] = args.seed
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if args.threads is None:
            args.threads = os.cpu_count() or 1
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        base = Path(args.config).resolve().parent if args.config else Path.cwd()
        code = COMMANDS[args.command](cfg, out, base, args)
        _meta(out, args.command, cfg)
        return code
    except (ConfigError, ValidationError, OSError, TypeError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"mdelab: error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except MdelabError as exc:
        print(f"mdelab: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
