"""``latentpass`` command line.

Exit codes: 0 success, 2 bad usage, 1 runtime failure.  Commands that write a
directory build it in a scratch location and move it into place only when
they finish, alongside a ``manifest.json``.  Set ``LATENTPASS_LOG_LEVEL``
(e.g. ``DEBUG``) to change log verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io as tables
from .core import CellTable, ModelInputError, PositionClass, label_cells
from .estimator import loglik_report
from .sampler import MODELS, ChainConfig, run_chain, summarize
from .spatial import PassLocation, build_player_fields, write_field
from .synthetic import SyntheticSpec, generate, temporal_split

logger = logging.getLogger("latentpass")

LOG_ENV = "LATENTPASS_LOG_LEVEL"
LOCATION_COLUMNS = ("game", "sender", "receiver", "receiver_position",
                    "sender_x", "sender_y", "receiver_x", "receiver_y")


class UsageError(Exception):
    pass


# -- argument types --------------------------------------------------------

def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _non_negative_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def _fraction(text):
    value = float(text)
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError(f"must lie strictly between 0 and 1, got {text}")
    return value


def _positive_float(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


# -- dataset helpers -------------------------------------------------------

def load_dataset(directory) -> tuple[CellTable, np.ndarray]:
    directory = Path(directory)
    for name in ("covariates.tsv", "events.tsv"):
        if not (directory / name).is_file():
            raise ModelInputError(f"{directory} has no {name}")
    cells = tables.read_cells(directory / "covariates.tsv")
    events = tables.read_events(directory / "events.tsv")
    return cells, label_cells(events, cells)


def select_split(cells, y, split: str, fraction: float):
    if split == "all":
        return cells, y
    mask = temporal_split(cells, fraction)
    if split == "test":
        mask = ~mask
    return cells.subset(mask), y[mask]


def _dataset_inputs(directory: Path) -> dict:
    return {str(p): tables.file_digest(p) for p in sorted(directory.glob("*.tsv"))}


def _chain_flags(p):
    p.add_argument("--model", choices=MODELS, default="latent")
    p.add_argument("--R", type=_positive_int, default=2, help="latent dimension")
    p.add_argument("--iters", type=_positive_int, default=5000)
    p.add_argument("--burnin", type=_non_negative_int, default=1000)
    p.add_argument("--thin", type=_positive_int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split-fraction", type=_fraction, default=0.9,
                   help="per-game share of intervals used for training")


def _chain_config(args, model=None, seed=None) -> ChainConfig:
    try:
        return ChainConfig(args.iters, args.burnin, args.thin, args.R,
                           args.seed if seed is None else seed, model or args.model)
    except ModelInputError as exc:
        raise UsageError(str(exc)) from exc


# -- commands --------------------------------------------------------------

def cmd_simulate(args) -> int:
    try:
        spec = SyntheticSpec(args.games, args.players, args.obs, args.R, args.seed,
                             args.interval_length)
    except ModelInputError as exc:
        raise UsageError(str(exc)) from exc
    t0 = time.perf_counter()
    data = generate(spec)
    with tables.staged_directory(args.out, args.force) as tmp:
        tables.write_cells(data.cells, tmp / "covariates.tsv")
        tables.write_events(data.events, tmp / "events.tsv")
        tables.write_truth(data.truth, tmp / "truth.tsv")
        meta = [("intervals", data.meta["intervals"]), ("cells", data.meta["cells"]),
                ("events", data.meta["events"])]
        meta += [(f"intervals/game/{g}", n) for g, n in enumerate(data.meta["intervals_per_game"])]
        tables.write_key_values(meta, tmp / "meta.tsv")
        config = {k: getattr(args, k) for k in ("games", "players", "obs", "R", "interval_length")}
        tables.finish_manifest(tmp, tables.RunManifest(
            "simulate", config, args.seed, timings={"generate": time.perf_counter() - t0}))
    print(f"wrote {data.meta['intervals']} intervals, {data.meta['events']} passes to {args.out}")
    return 0


def _game_files(directory: Path):
    found = {}
    for kind in ("tracking", "playbyplay", "boxscore"):
        matches = sorted(directory.glob(f"{kind}.*"))
        if len(matches) != 1:
            raise ModelInputError(f"{directory}: expected one {kind}.* file, found {len(matches)}")
        found[kind] = matches[0]
    return found


def _write_locations(locations, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(LOCATION_COLUMNS) + "\n")
        for p in locations:
            fh.write("\t".join([str(p.game), str(p.sender), str(p.receiver), p.receiver_position.value,
                                *(tables.FLOAT_FORMAT % v for v in (*p.sender_xy, *p.receiver_xy))]) + "\n")


def read_locations(path) -> list[PassLocation]:
    out = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if tuple(header) != LOCATION_COLUMNS:
            raise tables.TableFormatError(f"{path}: unexpected header {header}")
        for line in fh:
            if not line.strip():
                continue
            g, s, r, pos, sx, sy, rx, ry = line.rstrip("\n").split("\t")
            out.append(PassLocation(int(g), int(s), int(r), PositionClass(pos),
                                    (float(sx), float(sy)), (float(rx), float(ry))))
    return out


def cmd_ingest(args) -> int:
    from .ingest import ingest_games, load_game

    t0 = time.perf_counter()
    inputs, games = {}, []
    for d in map(Path, args.game_dirs):
        files = _game_files(d)
        inputs.update({str(p): tables.file_digest(p) for p in files.values()})
        games.append(load_game(files["tracking"], files["playbyplay"], files["boxscore"]))

    def fields_from(locations):
        fields = {}
        for player in sorted({p.sender for p in locations}):
            fields[player] = build_player_fields(locations, player, lam=args.smoothing)
        return fields

    result = ingest_games(games, build_fields=None if args.no_fields else fields_from)
    with tables.staged_directory(args.out, args.force) as tmp:
        tables.write_cells(CellTable.from_records(result.covariates), tmp / "covariates.tsv")
        tables.write_events(result.events, tmp / "events.tsv")
        _write_locations(result.pass_locations, tmp / "pass_locations.tsv")
        with open(tmp / "possessions.tsv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("game\tstart\tend\toffense\toutcome\texcluded\tcomplete\n")
            for p in result.possessions:
                fh.write(f"{p.game}\t{p.start!r}\t{p.end!r}\t{p.offense or 'NA'}\t"
                         f"{p.outcome.value if p.outcome else 'NA'}\t{int(p.excluded)}\t{int(p.complete)}\n")
        tables.write_key_values(sorted((str(k), v.value) for k, v in result.positions.items()),
                                tmp / "positions.tsv")
        tables.write_key_values(sorted(result.diagnostics.counts.items()), tmp / "diagnostics.tsv")
        tables.finish_manifest(tmp, tables.RunManifest(
            "ingest", {"no_fields": args.no_fields, "smoothing": args.smoothing}, None, inputs,
            timings={"ingest": time.perf_counter() - t0}))
    print(f"{len(result.possessions)} possessions, {len(result.covariates)} cells, "
          f"{len(result.events)} passes; diagnostics: {dict(result.diagnostics.counts)}")
    return 0


def _fit_one(config: ChainConfig, cells, y):
    result = run_chain(config, cells, y)
    return result, summarize(result) if len(result.iterations) >= 2 else None


def _write_fit(directory: Path, result, summary):
    tables.write_samples(result, directory / "samples.tsv")
    rows = summary.to_table() if summary is not None else [
        ("acceptance_rate", result.acceptance_rate), ("n_samples", float(len(result.iterations)))]
    tables.write_key_values(rows, directory / "summary.tsv")


def cmd_fit(args) -> int:
    data_dir = Path(args.data)
    cells, y = load_dataset(data_dir)
    cells, y = select_split(cells, y, "all" if args.no_split else "train", args.split_fraction)
    configs = [_chain_config(args, seed=args.seed + k) for k in range(args.chains)]
    t0 = time.perf_counter()
    if args.chains == 1:
        fits = [_fit_one(configs[0], cells, y)]
    else:
        with ProcessPoolExecutor(max_workers=min(args.chains, os.cpu_count() or 1)) as pool:
            fits = list(pool.map(_fit_one, configs, [cells] * len(configs), [y] * len(configs)))
    elapsed = time.perf_counter() - t0
    with tables.staged_directory(args.out, args.force) as tmp:
        if len(fits) == 1:
            _write_fit(tmp, *fits[0])
        else:
            for k, fit in enumerate(fits):
                (tmp / f"chain{k}").mkdir()
                _write_fit(tmp / f"chain{k}", *fit)
        config = {k: getattr(args, k) for k in ("model", "R", "iters", "burnin", "thin", "chains",
                                                "split_fraction", "no_split")}
        tables.finish_manifest(tmp, tables.RunManifest(
            "fit", config, args.seed, _dataset_inputs(data_dir), timings={"chains": elapsed}))
    for k, (result, _) in enumerate(fits):
        print(f"chain {k}: {len(result.iterations)} retained samples, "
              f"MH acceptance {result.acceptance_rate:.3f}")
    return 0


def cmd_evaluate(args) -> int:
    cells, y = load_dataset(args.data)
    cells, y = select_split(cells, y, args.split, args.split_fraction)
    if not len(cells):
        raise ModelInputError(f"the {args.split} split is empty")
    report = loglik_report(tables.read_draws(args.samples), cells, y)
    print(f"split\t{args.split}")
    print(f"cells\t{report.n_cells}")
    print(f"posterior_mean_loglik\t{report.posterior_mean:.6f}")
    print(f"loglik\t{report}")
    return 0


def cmd_compare(args) -> int:
    cells, y = load_dataset(args.data)
    train_mask = temporal_split(cells, args.split_fraction)
    parts = {"train": (cells.subset(train_mask), y[train_mask]),
             "test": (cells.subset(~train_mask), y[~train_mask])}
    print("model\ttraining\theld_out")
    for model in MODELS:
        result = run_chain(_chain_config(args, model=model), *parts["train"])
        reports = [loglik_report(result, *parts[s]) for s in ("train", "test")]
        print(f"{model}\t{reports[0]}\t{reports[1]}")
    return 0


def cmd_export_factors(args) -> int:
    draws = tables.read_draws(args.samples)
    if not draws.has_factors:
        raise ModelInputError("these samples carry no latent factors (covariates model)")
    hits = np.flatnonzero(draws.games == args.game)
    if not len(hits):
        raise ModelInputError(f"game {args.game} not in samples (games: {draws.games.tolist()})")
    g = int(hits[0])
    R = draws.U.shape[-1]
    lines = ["\t".join(["player_id", "role"] + [f"dim{r + 1}" for r in range(R)])]
    for role, arr in (("sender", draws.U), ("receiver", draws.V)):
        means = arr[:, g].mean(axis=0)
        for p, player in enumerate(draws.players):
            lines.append("\t".join([str(player), role] + [tables.FLOAT_FORMAT % v for v in means[p]]))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_spatial(args) -> int:
    data_dir = Path(args.data)
    locations = read_locations(data_dir / "pass_locations.tsv")
    if not any(p.sender == args.player for p in locations):
        raise ModelInputError(f"player {args.player} made no recorded passes")
    t0 = time.perf_counter()
    fields = build_player_fields(locations, args.player, lam=args.smoothing)
    with tables.staged_directory(args.out, args.force) as tmp:
        with open(tmp / "xi.tsv", "w", encoding="utf-8", newline="\n") as fh:
            write_field(fields.xi, fh, player=args.player, kind="sender")
        for pos, f in sorted(fields.xi_tilde.items(), key=lambda kv: kv[0].value):
            with open(tmp / f"xi_tilde_{pos.value}.tsv", "w", encoding="utf-8", newline="\n") as fh:
                write_field(f, fh, player=args.player, kind="receiver", position=pos)
        tables.finish_manifest(tmp, tables.RunManifest(
            "spatial", {"player": args.player, "smoothing": args.smoothing}, None,
            {str(data_dir / "pass_locations.tsv"): tables.file_digest(data_dir / "pass_locations.tsv")},
            timings={"fields": time.perf_counter() - t0}))
    print(f"sender field lambda {fields.xi.lam:g}; receiver fields: "
          + ", ".join(f"{p.value} lambda {f.lam:g}" for p, f in sorted(fields.xi_tilde.items(),
                                                                     key=lambda kv: kv[0].value)))
    return 0


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latentpass", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset with known parameters")
    p.add_argument("--games", type=_positive_int, default=2)
    p.add_argument("--players", type=_positive_int, default=8)
    p.add_argument("--obs", type=_positive_int, default=10_000, help="intervals in total")
    p.add_argument("--R", type=_positive_int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--interval-length", type=_positive_float, default=0.2, help="seconds")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true", help="replace a non-empty output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ingest", help="turn tracking, play-by-play and box-score files into a dataset")
    p.add_argument("game_dirs", nargs="+",
                   help="directories holding tracking.*, playbyplay.* and boxscore.* for one game")
    p.add_argument("--no-fields", action="store_true",
                   help="use the uniform spatial field instead of fitting one per passer")
    p.add_argument("--smoothing", type=float, default=None, help="fixed lambda (default: GCV)")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fit", help="run the sampler on a dataset's training split")
    p.add_argument("data")
    _chain_flags(p)
    p.add_argument("--chains", type=_positive_int, default=1,
                   help="independent chains with seeds seed, seed+1, ... run in parallel")
    p.add_argument("--no-split", action="store_true", help="fit on every interval")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate", help="log-likelihood of a split under samples or truth")
    p.add_argument("--samples", required=True, help="samples.tsv or truth.tsv")
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--split-fraction", type=_fraction, default=0.9)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="fit both models and report training and held-out log-likelihood")
    p.add_argument("data")
    _chain_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("export-factors", help="posterior-mean sender and receiver factors of one game")
    p.add_argument("--samples", required=True)
    p.add_argument("--game", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_factors)

    p = sub.add_parser("spatial", help="fit and write one player's spatial fields")
    p.add_argument("data", help="directory written by ingest")
    p.add_argument("--player", type=int, required=True)
    p.add_argument("--smoothing", type=float, default=None, help="fixed lambda (default: GCV)")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_spatial)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get(LOG_ENV, "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (ModelInputError, ArithmeticError, OSError) as exc:
        print(f"latentpass: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
