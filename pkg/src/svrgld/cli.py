"""Experiment orchestration: model generation, runs, W1 sweeps, verification.

Every command is a pure function of (config file, root seed) up to
wall-clock metadata: the deterministic outputs (CSV tables, summary and
report JSON, model files) reproduce bitwise on re-runs, while timing lands
in a separate ``meta.json`` and the bookkeeping ``manifest.json``.

Only the standard library is imported at module load so that ``--threads``
(or the SVRGLD_THREADS environment variable) can cap the BLAS thread pools
before numpy comes up.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
import time
from pathlib import Path

DEFAULT_CONFIG: dict = {
    "seed": 0,
    "model": {
        "type": "quadratic",  # "quadratic" | "logistic" | "file"
        "d": 2,
        "n": 1000,
        "eigenvalues": None,  # default: 1..d
        "lambda": 0.1,
        "true_param": None,  # default: zeros
        "seed": None,  # default: root seed
        "file": None,
    },
    "run": {
        "eta": 0.01,
        "delta": 0.1,
        "m": 10,
        "batch": 1,
        "epochs": 20,
        "replicas": 200,
        "substeps": 1,
        "coupled": False,
        "record_inner": False,
        "which": "svrgld",  # "svrgld" | "sdde" | "both"
        "x0": None,  # default: zeros(d)
    },
    "sweep": {
        "eta_grid": [],
        "delta_grid": [],
        "mode": "product",  # "product" | "paired"
        "s_values": None,  # default: every recorded epoch
    },
    "output": {"dir": "out", "formats": ["csv", "json"]},
}


class CliError(Exception):
    pass


def _deep_update(base: dict, override: dict) -> dict:
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value
    return base


def _set_path(cfg: dict, dotted: str, raw: str) -> None:
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = dotted.split(".")
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            node[part] = {}
        node = node[part]
    node[parts[-1]] = value


def load_config(args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            _deep_update(cfg, json.load(fh))
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["output"]["dir"] = args.out
    if args.replicas is not None:
        cfg["run"]["replicas"] = args.replicas
    for expr in args.set or []:
        if "=" not in expr:
            raise CliError(f"--set expects key=value, got {expr!r}")
        key, raw = expr.split("=", 1)
        _set_path(cfg, key, raw)
    return cfg


# ---------------------------------------------------------------------------
# Output directory helpers
# ---------------------------------------------------------------------------


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write_exact(path: Path, data: bytes) -> None:
    """Append-only discipline: identical rewrites are no-ops, conflicting
    rewrites are refused."""
    if path.exists():
        old = path.read_bytes()
        if old == data:
            return
        raise CliError(
            f"refusing to overwrite {path} with different content; use a fresh --out directory"
        )
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


def _json_bytes(payload: dict) -> bytes:
    return (json.dumps(payload, sort_keys=True, indent=2) + "\n").encode("utf-8")


def _record(out_dir: Path, command: str, files: list[Path], elapsed: float) -> None:
    manifest_path = out_dir / "manifest.json"
    entries = []
    if manifest_path.exists():
        entries = json.loads(manifest_path.read_text(encoding="utf-8"))
    for f in files:
        entry = {
            "command": command,
            "file": f.name,
            "sha256": _sha256(f.read_bytes()),
        }
        if entry not in entries:
            entries.append(entry)
    manifest_path.write_text(
        json.dumps(entries, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    meta = {"command": command, "wall_time_s": elapsed, "unix_time": time.time()}
    (out_dir / "meta.json").write_text(
        json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


# ---------------------------------------------------------------------------
# Commands (numpy-dependent imports stay local)
# ---------------------------------------------------------------------------


def _build_model(cfg: dict):
    from . import models

    section = cfg["model"]
    seed = section["seed"] if section["seed"] is not None else cfg["seed"]
    kind = section["type"]
    if kind == "file":
        if not section.get("file"):
            raise CliError("model.type == 'file' requires model.file")
        return models.load_model(section["file"])
    d, n = int(section["d"]), int(section["n"])
    if kind == "quadratic":
        eig = section["eigenvalues"] or [float(j) for j in range(1, d + 1)]
        return models.generate_quadratic_model(d, n, eig, seed)
    if kind == "logistic":
        true_param = section["true_param"] if section["true_param"] is not None else [0.0] * d
        return models.generate_logistic_model(d, n, true_param, section["lambda"], seed)
    raise CliError(f"unknown model type {kind!r}")


def _x0(cfg: dict, d: int):
    import numpy as np

    raw = cfg["run"]["x0"]
    if raw is None:
        return np.zeros(d)
    arr = np.atleast_1d(np.asarray(raw, dtype=np.float64))
    if arr.shape == (1,) and d > 1:
        arr = np.full(d, arr[0])
    if arr.shape != (d,):
        raise CliError(f"run.x0 must have length {d}")
    return arr


def _run_configs(cfg: dict):
    from .algorithm import RunConfig
    from .sdde import SddeConfig

    r = cfg["run"]
    base = dict(
        eta=float(r["eta"]),
        delta=float(r["delta"]),
        m=int(r["m"]),
        batch=int(r["batch"]),
        epochs=int(r["epochs"]),
        replicas=int(r["replicas"]),
        seed=int(cfg["seed"]),
        record_inner=bool(r["record_inner"]),
    )
    return RunConfig(**base), SddeConfig(**base, substeps=int(r["substeps"]))


def cmd_gen_model(cfg: dict, out_dir: Path) -> list[Path]:
    import numpy as np

    from . import models
    from ._version import __version__

    model = _build_model(cfg)
    model_path = out_dir / "model.bin"
    out_dir.mkdir(parents=True, exist_ok=True)
    tmp = out_dir / ".model.tmp"
    models.save_model(model, tmp, mode="binary")
    _write_exact(model_path, tmp.read_bytes())
    tmp.unlink()
    provenance = {
        "generator_version": __version__,
        "type": type(model).__name__,
        "d": model.d,
        "n": model.n,
        "seed": model.seed,
        "sha256": _sha256(model_path.read_bytes()),
    }
    if isinstance(model, models.LogisticModel):
        provenance["label_mean"] = float(np.mean(model.labels))
        provenance["lambda"] = model.lam
    prov_path = out_dir / "model.json"
    _write_exact(prov_path, _json_bytes(provenance))
    return [model_path, prov_path]


def _run_ensembles(cfg: dict, which: str):
    from .algorithm import run_svrgld
    from .errors import InvalidConfigError
    from .sdde import run_sdde_em

    run_cfg, sdde_cfg = _run_configs(cfg)
    coupled = bool(cfg["run"]["coupled"])
    if coupled and which != "both":
        raise CliError("coupled mode requires running both components")
    if coupled and sdde_cfg.substeps != 1:
        raise InvalidConfigError("coupled mode requires substeps == 1")
    model = _build_model(cfg)
    x0 = _x0(cfg, model.d)
    ensembles = []
    if which in ("svrgld", "both"):
        ensembles.append(run_svrgld(model, run_cfg, x0))
    if which in ("sdde", "both"):
        ensembles.append(run_sdde_em(model, sdde_cfg, x0, coupled=coupled))
    return ensembles


def cmd_run(cfg: dict, out_dir: Path, which: str) -> list[Path]:
    from .paths import moment_table, write_paths_csv

    ensembles = _run_ensembles(cfg, which)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths_csv = out_dir / "paths.csv"
    tmp = out_dir / ".paths.tmp"
    write_paths_csv(tmp, ensembles)
    _write_exact(paths_csv, tmp.read_bytes())
    tmp.unlink()
    summary = {
        "config": cfg,
        "which": which,
        "coupling": {e.component: e.coupling for e in ensembles},
        "moments": moment_table(ensembles),
    }
    summary_path = out_dir / "summary.json"
    _write_exact(summary_path, _json_bytes(summary))
    return [paths_csv, summary_path]


def cmd_w1_sweep(cfg: dict, out_dir: Path) -> list[Path]:
    import math

    import numpy as np

    from .algorithm import run_svrgld
    from .metrics import EmpiricalMeasure, sliced_w1, w1_exact_1d
    from .paths import write_sweep_csv
    from .sdde import run_sdde_em

    sweep = cfg["sweep"]
    eta_grid = [float(v) for v in sweep["eta_grid"]]
    delta_grid = [float(v) for v in sweep["delta_grid"]]
    if not eta_grid or not delta_grid:
        raise CliError("sweep.eta_grid and sweep.delta_grid must be nonempty")
    if sweep["mode"] == "paired":
        if len(eta_grid) != len(delta_grid):
            raise CliError("paired sweep requires equal-length grids")
        cells = list(zip(eta_grid, delta_grid))
    else:
        cells = [(e, dl) for e in eta_grid for dl in delta_grid if e <= dl or dl == 0.0]
    model = _build_model(cfg)
    x0 = _x0(cfg, model.d)
    rows = []
    for cell_index, (eta, delta) in enumerate(cells):
        cell_cfg = copy.deepcopy(cfg)
        cell_cfg["run"]["eta"] = eta
        cell_cfg["run"]["delta"] = delta
        run_cfg, sdde_cfg = _run_configs(cell_cfg)
        alg = run_svrgld(model, run_cfg, x0)
        em = run_sdde_em(model, sdde_cfg, x0, coupled=False)
        s_values = sweep["s_values"] or list(range(run_cfg.epochs + 1))
        for s in s_values:
            a = EmpiricalMeasure.from_ensemble(alg, int(s))
            b = EmpiricalMeasure.from_ensemble(em, int(s))
            if model.d == 1:
                w1, stderr = w1_exact_1d(a, b), 0.0
            else:
                w1, stderr = sliced_w1(a, b, projections=128, seed=cfg["seed"] + cell_index)
            rows.append(
                {
                    "eta": eta,
                    "delta": delta,
                    "s": int(s),
                    "w1": w1,
                    "stderr": stderr,
                    "sqrt_eta_delta": math.sqrt(eta * delta),
                }
            )
    out_dir.mkdir(parents=True, exist_ok=True)
    sweep_csv = out_dir / "w1_sweep.csv"
    tmp = out_dir / ".sweep.tmp"
    write_sweep_csv(tmp, rows)
    _write_exact(sweep_csv, tmp.read_bytes())
    tmp.unlink()

    # convenience: fitted log-log slope at the last common epoch
    last_s = max(r["s"] for r in rows)
    pts = [(r["eta"] * r["delta"], r["w1"]) for r in rows if r["s"] == last_s and r["w1"] > 0]
    slope = None
    if len(pts) >= 2 and len({p[0] for p in pts}) >= 2:
        lx = np.log([p[0] for p in pts])
        ly = np.log([p[1] for p in pts])
        slope = float(np.polyfit(lx, ly, 1)[0])
    summary = {"config": cfg, "cells": len(cells), "slope_at_last_s": slope, "last_s": last_s}
    summary_path = out_dir / "w1_summary.json"
    _write_exact(summary_path, _json_bytes(summary))
    return [sweep_csv, summary_path]


def cmd_verify(cfg: dict, out_dir: Path) -> tuple[list[Path], bool]:
    from .verify import assumption_report

    model = _build_model(cfg)
    report = assumption_report(
        model,
        eta=float(cfg["run"]["eta"]),
        delta=float(cfg["run"]["delta"]),
        seed=int(cfg["seed"]),
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "verify.json"
    payload = report.to_dict()
    payload["config"] = cfg
    _write_exact(report_path, _json_bytes(payload))
    return [report_path], report.all_passed


def cmd_moments(cfg: dict, out_dir: Path, which: str) -> list[Path]:
    from .paths import write_moments_csv

    ensembles = _run_ensembles(cfg, which)
    out_dir.mkdir(parents=True, exist_ok=True)
    moments_csv = out_dir / "moments.csv"
    tmp = out_dir / ".moments.tmp"
    write_moments_csv(tmp, ensembles)
    _write_exact(moments_csv, tmp.read_bytes())
    tmp.unlink()
    return [moments_csv]


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="svrgld",
        description="Variance-reduced Langevin runs, delayed-diffusion twins, "
        "W1 sweeps, and assumption verification.",
    )
    parser.add_argument("--config", help="JSON experiment config", default=None)
    parser.add_argument("--seed", type=int, default=None, help="root 64-bit seed override")
    parser.add_argument("--out", default=None, help="output directory override")
    parser.add_argument("--replicas", type=int, default=None, help="replica count override")
    parser.add_argument("--threads", type=int, default=None, help="cap BLAS thread pools")
    parser.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override a dotted config key (repeatable), e.g. --set run.eta=0.01",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-model", help="generate and serialize the configured model")
    run_p = sub.add_parser("run", help="run the algorithm and/or its diffusion twin")
    run_p.add_argument("--which", choices=["svrgld", "sdde", "both"], default=None)
    sub.add_parser("w1-sweep", help="W1 distance table over an (eta, delta) grid")
    sub.add_parser("verify", help="assumption report; exit 0 iff all checks pass")
    mom_p = sub.add_parser("moments", help="per-epoch moment table")
    mom_p.add_argument("--which", choices=["svrgld", "sdde", "both"], default=None)
    return parser


def _apply_threads(argv: list[str]) -> None:
    threads = None
    for i, a in enumerate(argv):
        if a == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif a.startswith("--threads="):
            threads = a.split("=", 1)[1]
    threads = threads or os.environ.get("SVRGLD_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _apply_threads(argv)
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args)
        out_dir = Path(cfg["output"]["dir"])
        started = time.monotonic()
        ok = True
        if args.command == "gen-model":
            files = cmd_gen_model(cfg, out_dir)
        elif args.command == "run":
            which = args.which or cfg["run"]["which"]
            files = cmd_run(cfg, out_dir, which)
        elif args.command == "w1-sweep":
            files = cmd_w1_sweep(cfg, out_dir)
        elif args.command == "verify":
            files, ok = cmd_verify(cfg, out_dir)
        elif args.command == "moments":
            which = args.which or cfg["run"]["which"]
            files = cmd_moments(cfg, out_dir, which)
        else:  # pragma: no cover
            raise CliError(f"unknown command {args.command!r}")
        config_path = out_dir / "config.json"
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_exact(config_path, _json_bytes(cfg))
        _record(out_dir, args.command, files + [config_path], time.monotonic() - started)
        for f in files:
            print(f"wrote {f}")
        if not ok:
            print("verification FAILED (see verify.json)", file=sys.stderr)
            return 2
        return 0
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # surface package errors with context, no tracebacks
        from .errors import SvrgldError

        if isinstance(exc, SvrgldError):
            print(f"error: {exc}", file=sys.stderr)
            return 2
        raise


if __name__ == "__main__":
    sys.exit(main())
