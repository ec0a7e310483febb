"""Plain-text tables for datasets, samples, summaries and run manifests.

Every table is tab-separated with one header line.  Floats are written with
17 significant digits so a write/read cycle is exact.

``covariates.tsv``  one row per lattice cell, columns ``core.TABLE_COLUMNS``
``events.tsv``      ``game possession interval sender receiver``
``truth.tsv``       ``parameter_path value``
``samples.tsv``     ``iteration parameter_path value``
``summary.tsv``     ``key value``
``manifest.json``   see :class:`RunManifest`
"""

from __future__ import annotations

import contextlib
import csv
import hashlib
import json
import os
import shutil
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import N_COVARIATES, TABLE_COLUMNS, CellTable, ModelInputError, PassEvent
from .sampler import ChainResult, Truth, parameter_paths

FLOAT_FORMAT = "%.17g"
EVENT_COLUMNS = ("game", "possession", "interval", "sender", "receiver")


class TableFormatError(ModelInputError):
    """A table on disk does not have the expected layout."""


def _fmt_float(x: float) -> str:
    return FLOAT_FORMAT % x


def _check_header(path: Path, line: str, expected) -> None:
    got = tuple(line.rstrip("\n").split("\t"))
    if got != tuple(expected):
        raise TableFormatError(f"{path}: expected header {list(expected)}, got {line.split()}")


# -- cells and events ------------------------------------------------------

def write_cells(cells: CellTable, path) -> None:
    A = cells.to_array()
    ints = A[:, :4].astype(np.int64)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(TABLE_COLUMNS) + "\n")
        for key, rest in zip(ints.tolist(), A[:, 4:].tolist()):
            fh.write("\t".join(map(str, key)) + "\t" + "\t".join(map(_fmt_float, rest)) + "\n")


def read_cells(path) -> CellTable:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        _check_header(path, fh.readline(), TABLE_COLUMNS)
        body = fh.read()
    if not body.strip():
        return CellTable.from_array(np.empty((0, len(TABLE_COLUMNS))))
    try:
        A = np.loadtxt(body.splitlines(), delimiter="\t", ndmin=2)
    except ValueError as exc:
        raise TableFormatError(f"{path}: {exc}") from exc
    if A.shape[1] != len(TABLE_COLUMNS):
        raise TableFormatError(f"{path}: rows have {A.shape[1]} columns, expected {len(TABLE_COLUMNS)}")
    return CellTable.from_array(A)


def write_events(events, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(EVENT_COLUMNS) + "\n")
        for e in sorted(events, key=lambda e: e.cell_key):
            fh.write(f"{e.game}\t{e.possession}\t{e.interval_index}\t{e.sender}\t{e.receiver}\n")


def read_events(path) -> list[PassEvent]:
    path = Path(path)
    out = []
    with open(path, encoding="utf-8") as fh:
        _check_header(path, fh.readline(), EVENT_COLUMNS)
        for n, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                out.append(PassEvent(*map(int, line.split("\t"))))
            except (TypeError, ValueError) as exc:
                raise TableFormatError(f"{path}:{n}: {exc}") from exc
    return out


# -- parameters ------------------------------------------------------------

def truth_rows(truth: Truth, players=None, games=None):
    """``(path, value)`` rows for every off-diagonal dyad and every factor entry."""
    n = truth.beta.shape[0]
    players = np.arange(n) if players is None else np.asarray(players)
    games = np.arange(truth.U.shape[0]) if games is None else np.asarray(games)
    for a in range(n):
        for b in range(n):
            if a != b:
                for k in range(N_COVARIATES):
                    yield f"beta/{players[a]}/{players[b]}/{k}", float(truth.beta[a, b, k])
    for name, arr in (("U", truth.U), ("V", truth.V)):
        for g in range(len(games)):
            for p in range(n):
                for r in range(arr.shape[2]):
                    yield f"{name}/{games[g]}/{players[p]}/{r}", float(arr[g, p, r])


def write_truth(truth: Truth, path, players=None, games=None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("parameter_path\tvalue\n")
        for p, v in truth_rows(truth, players, games):
            fh.write(f"{p}\t{_fmt_float(v)}\n")


def write_samples(result: ChainResult, path) -> None:
    its = [str(int(i)) for i in result.iterations]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("iteration\tparameter_path\tvalue\n")
        for p, x in parameter_paths(result):
            fh.writelines(f"{it}\t{p}\t{_fmt_float(v)}\n" for it, v in zip(its, x.tolist()))


@dataclass(eq=False)
class Draws:
    """Parameter draws read back from a samples or truth table.

    Shapes follow :class:`~latentpass.sampler.ChainResult`.
    """

    players: np.ndarray
    games: np.ndarray
    dyads: np.ndarray
    iterations: np.ndarray
    beta: np.ndarray
    U: np.ndarray
    V: np.ndarray
    has_factors: bool

    def inner_products(self) -> np.ndarray:
        return np.einsum("sgir,sgjr->sgij", self.U, self.V)

    @classmethod
    def from_result(cls, result: ChainResult) -> "Draws":
        return cls(result.players, result.games, result.dyads, result.iterations,
                   result.beta, result.U, result.V, result.has_factors)


def _parse_path(path: str):
    parts = path.split("/")
    if len(parts) != 4 or parts[0] not in ("beta", "U", "V"):
        raise TableFormatError(f"unknown parameter path {path!r}")
    try:
        return parts[0], int(parts[1]), int(parts[2]), int(parts[3])
    except ValueError as exc:
        raise TableFormatError(f"unknown parameter path {path!r}") from exc


def read_draws(path) -> Draws:
    """Read ``samples.tsv`` (many iterations) or ``truth.tsv`` (one draw)."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header == ["iteration", "parameter_path", "value"]:
            rows = [(int(it), p, float(v)) for it, p, v in reader]
        elif header == ["parameter_path", "value"]:
            rows = [(0, p, float(v)) for p, v in reader]
        else:
            raise TableFormatError(f"{path}: not a samples or truth table (header {header})")
    if not rows:
        raise TableFormatError(f"{path}: no parameter rows")
    iterations = np.array(sorted({r[0] for r in rows}))
    slot = {it: s for s, it in enumerate(iterations.tolist())}
    parsed = [(_parse_path(p), slot[it], v) for it, p, v in rows]

    dyads = sorted({(a, b) for (kind, a, b, _), _, _ in parsed if kind == "beta"})
    factor = [(kind, g, p, r) for (kind, g, p, r), _, _ in parsed if kind != "beta"]
    players = np.array(sorted({i for d in dyads for i in d} | {p for _, _, p, _ in factor}), dtype=np.int64)
    games = np.array(sorted({g for _, g, _, _ in factor}), dtype=np.int64)
    R = max((r for *_, r in factor), default=-1) + 1
    S, D = len(iterations), len(dyads)
    dyad_row = {d: k for k, d in enumerate(dyads)}
    p_row = {int(p): k for k, p in enumerate(players)}
    g_row = {int(g): k for k, g in enumerate(games)}

    beta = np.full((S, D, N_COVARIATES), np.nan)
    U = np.zeros((S, len(games), len(players), max(R, 1)))
    V = np.zeros_like(U)
    for (kind, a, b, k), s, v in parsed:
        if kind == "beta":
            beta[s, dyad_row[(a, b)], k] = v
        else:
            (U if kind == "U" else V)[s, g_row[a], p_row[b], k] = v
    if np.isnan(beta).any():
        raise TableFormatError(f"{path}: some beta coordinates are missing for some iterations")
    return Draws(players, games, np.array(dyads, dtype=np.int64).reshape(-1, 2), iterations,
                 beta, U, V, R > 0)


# -- summaries -------------------------------------------------------------

def write_key_values(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("key\tvalue\n")
        for k, v in rows:
            fh.write(f"{k}\t{_fmt_float(v) if isinstance(v, float) else v}\n")


def read_key_values(path) -> dict[str, str]:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        _check_header(path, fh.readline(), ("key", "value"))
        return dict(line.rstrip("\n").split("\t", 1) for line in fh if line.strip())


# -- manifests and atomic output ------------------------------------------

def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    inputs: dict = field(default_factory=dict)       # path -> sha256
    artifacts: dict = field(default_factory=dict)    # relative path -> sha256
    timings: dict = field(default_factory=dict)      # stage -> seconds

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    def to_json(self) -> str:
        body = asdict(self)
        body["config_hash"] = self.config_hash
        return json.dumps(body, indent=2, sort_keys=True) + "\n"

    @classmethod
    def read(cls, path) -> "RunManifest":
        body = json.loads(Path(path).read_text(encoding="utf-8"))
        body.pop("config_hash", None)
        return cls(**body)


MANIFEST_NAME = "manifest.json"


@contextlib.contextmanager
def staged_directory(out, force: bool = False):
    """Yield a scratch directory that replaces ``out`` only if the block succeeds."""
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not force:
        raise FileExistsError(f"{out} exists and is not empty (use --force to replace it)")
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if out.exists():
        shutil.rmtree(out)
    os.replace(tmp, out)


def finish_manifest(directory: Path, manifest: RunManifest) -> None:
    """Record digests of every file under ``directory`` and write the manifest."""
    for p in sorted(directory.rglob("*")):
        if p.is_file() and p.name != MANIFEST_NAME:
            manifest.artifacts[p.relative_to(directory).as_posix()] = file_digest(p)
    (directory / MANIFEST_NAME).write_text(manifest.to_json(), encoding="utf-8")
