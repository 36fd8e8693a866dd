"""Containers for epoch-boundary path ensembles and their CSV/JSON export.

CSV files start with a schema comment line, then a header row; floats are
written with 17 significant digits so that round-tripping is lossless.
JSON is emitted with sorted keys for byte-stable output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError

PATHS_SCHEMA = "svrgld.paths.v1"
MOMENTS_SCHEMA = "svrgld.moments.v1"
SWEEP_SCHEMA = "svrgld.w1sweep.v1"

FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class EpochPath:
    """One replica's epoch-boundary states (and optionally the inner steps)."""

    states: np.ndarray  # (S+1, d)
    inner: np.ndarray | None = None  # (S, m, d)


@dataclass(frozen=True)
class PathEnsemble:
    """Epoch-boundary states for a whole replica ensemble.

    ``coupling`` is a token identifying the Gaussian stream layout that drove
    the run; two ensembles sharing the token were driven by identical
    Gaussian increments replica-by-replica.
    """

    component: str  # "svrgld" | "sdde"
    states: np.ndarray  # (R, S+1, d)
    seed: int
    coupling: str
    inner: np.ndarray | None = None  # (R, S, m, d)

    @property
    def replicas(self) -> int:
        return self.states.shape[0]

    @property
    def epochs(self) -> int:
        return self.states.shape[1] - 1

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    def path(self, r: int) -> EpochPath:
        return EpochPath(
            states=self.states[r],
            inner=None if self.inner is None else self.inner[r],
        )

    def epoch_states(self, s: int) -> np.ndarray:
        """All replica states at epoch s, shape (R, d)."""
        if not 0 <= s <= self.epochs:
            raise InvalidInputError(f"epoch {s} outside recorded range 0..{self.epochs}")
        return self.states[:, s, :]


@dataclass(frozen=True)
class JacobianEnsemble:
    """Time series of the initial-condition derivative flow per replica."""

    times: np.ndarray  # (T,)
    grads: np.ndarray  # (R, T, d)
    direction: np.ndarray  # (d,)
    seed: int

    @property
    def replicas(self) -> int:
        return self.grads.shape[0]

    def eighth_moment(self) -> np.ndarray:
        """Empirical E|grad|^8 at each recorded time, shape (T,)."""
        norms2 = np.sum(self.grads**2, axis=2)
        return np.mean(norms2**4, axis=0)


def _write_csv(path: Path, schema: str, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# schema={schema}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return FLOAT_FMT % float(v)


def write_paths_csv(path: str | Path, ensembles: list[PathEnsemble]) -> None:
    """Rows (component, replica, s, x_1..x_d) for one or more ensembles."""
    if not ensembles:
        raise InvalidInputError("nothing to export")
    d = ensembles[0].dim
    header = ["component", "replica", "s"] + [f"x_{j + 1}" for j in range(d)]

    def rows():
        for ens in ensembles:
            if ens.dim != d:
                raise InvalidInputError("ensembles disagree on dimension")
            for r in range(ens.replicas):
                for s in range(ens.epochs + 1):
                    yield [ens.component, str(r), str(s)] + [
                        _fmt(v) for v in ens.states[r, s]
                    ]

    _write_csv(Path(path), PATHS_SCHEMA, header, rows())


def moment_table(ensembles: list[PathEnsemble]) -> list[dict]:
    """Per-epoch moment estimates E|x|^2 and E|x|^4 over replicas."""
    out = []
    for ens in ensembles:
        norms2 = np.sum(ens.states**2, axis=2)  # (R, S+1)
        m2 = np.mean(norms2, axis=0)
        m4 = np.mean(norms2**2, axis=0)
        for s in range(ens.epochs + 1):
            out.append(
                {"component": ens.component, "s": s, "m2": float(m2[s]), "m4": float(m4[s])}
            )
    return out


def write_moments_csv(path: str | Path, ensembles: list[PathEnsemble]) -> None:
    rows = (
        [row["component"], str(row["s"]), _fmt(row["m2"]), _fmt(row["m4"])]
        for row in moment_table(ensembles)
    )
    _write_csv(Path(path), MOMENTS_SCHEMA, ["component", "s", "m2", "m4"], rows)


def write_sweep_csv(path: str | Path, rows: list[dict]) -> None:
    header = ["eta", "delta", "s", "w1", "stderr", "sqrt_eta_delta"]
    fmt_rows = (
        [_fmt(r["eta"]), _fmt(r["delta"]), str(r["s"]), _fmt(r["w1"]), _fmt(r["stderr"]), _fmt(r["sqrt_eta_delta"])]
        for r in rows
    )
    _write_csv(Path(path), SWEEP_SCHEMA, header, fmt_rows)


def write_json(path: str | Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
