"""Command-line entry point: ``uad {train,detect,pmf,threshold,scenario,reproduce}``.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numerical failure during training.
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .detector import DetectorModel, ModelFormatError, UnsupportedVersionError, detect, load_model, save_model
from .evaluation import ReproduceConfig, reproduce
from .io import (ConfigError, DataError, atomic_write, dump_kv, matrix_to_csv, parse_kv,
                 read_matrix_csv, short)
from .scenarios import DcGridModel, AttackSpec, gaussian_batches, grid_batches, load_grid_config, sample_states, measure
from .uniformity import coincidence_pmf, threshold
from .wigan import DegenerateInputError, TrainConfig, TrainingDiverged, train

log = logging.getLogger("uad")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


def default_seed() -> int:
    raw = os.environ.get("UAD_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise CliError(EXIT_USAGE, f"UAD_SEED must be an integer, got {raw!r}") from None


# --- train -------------------------------------------------------------------

DETECTOR_KEYS = {"alphabet_M": int, "sample_N": int, "fp_level": float, "epsilon": float}


def _coerce(field: dataclasses.Field, raw: str):
    if field.name in ("hidden", "critic_hidden"):
        return tuple(int(t) for t in raw.replace(",", " ").split())
    return type(field.default)(raw)


def resolve_train_config(path: str | None, overrides: dict) -> tuple[TrainConfig, dict]:
    """Merge config file values and CLI overrides; returns train + detector settings."""
    values: dict = {}
    if path:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise CliError(EXIT_USAGE, f"cannot read config {path}: {e.strerror}") from e
        try:
            values.update(parse_kv(text, path))
        except ConfigError as e:
            raise CliError(EXIT_USAGE, str(e)) from e
    values.update({k: v for k, v in overrides.items() if v is not None})

    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    train_kw, det = {}, {"alphabet_M": 200, "sample_N": 50, "fp_level": 0.05, "epsilon": 0.0}
    for key, raw in values.items():
        try:
            if key in fields:
                train_kw[key] = raw if not isinstance(raw, str) else _coerce(fields[key], raw)
            elif key in DETECTOR_KEYS:
                det[key] = DETECTOR_KEYS[key](raw)
            else:
                raise CliError(EXIT_USAGE, f"unknown config key {key!r}")
        except ValueError as e:
            raise CliError(EXIT_USAGE, f"bad value for {key!r}: {raw!r}") from e
    train_kw.setdefault("seed", default_seed())
    train_kw.setdefault("validation_M", det["alphabet_M"])
    train_kw.setdefault("validation_N", det["sample_N"])
    try:
        cfg = TrainConfig(**train_kw)
        threshold(det["alphabet_M"], det["sample_N"], det["fp_level"])
    except ValueError as e:
        raise CliError(EXIT_USAGE, f"invalid configuration: {e}") from e
    return cfg, det


def cmd_train(args) -> int:
    cfg, det = resolve_train_config(args.config, {
        "seed": args.seed, "total_generator_iters": args.iters, "alphabet_M": args.M,
        "sample_N": args.N, "fp_level": args.alpha, "epsilon": args.epsilon,
    })
    try:
        data = read_matrix_csv(args.data)
    except DataError as e:
        raise CliError(EXIT_DATA, str(e)) from e
    try:
        gen, trace = train(data, cfg)
    except DegenerateInputError as e:
        raise CliError(EXIT_DATA, f"degenerate input: {e}") from e
    except TrainingDiverged as e:
        raise CliError(EXIT_NUMERIC, str(e)) from e
    model = DetectorModel(gen, det["alphabet_M"], det["sample_N"], det["fp_level"],
                          det["epsilon"], seed=cfg.seed, config_hash=cfg.fingerprint())
    out = Path(args.out)
    trace_path = Path(args.trace) if args.trace else out.with_suffix(".trace.csv")
    buf = io.StringIO()
    trace.to_csv(buf)
    resolved = {**dataclasses.asdict(cfg), **det}
    save_model(model, out)
    atomic_write(trace_path, buf.getvalue())
    atomic_write(out.with_suffix(".config"), dump_kv(resolved))
    print(f"wrote {out} (best iteration {trace.best_iteration}, "
          f"validation K1 {trace.best_val_k1:.3f}, threshold {model.threshold_T})")
    return 0


# --- detect ------------------------------------------------------------------

def cmd_detect(args) -> int:
    try:
        model = load_model(args.model)
    except OSError as e:
        raise CliError(EXIT_DATA, f"cannot read model {args.model}: {e.strerror}") from e
    except UnsupportedVersionError as e:
        raise CliError(EXIT_DATA, str(e)) from e
    except ModelFormatError as e:
        raise CliError(EXIT_DATA, str(e)) from e
    try:
        rows = read_matrix_csv(args.batches, expect_cols=model.input_dim)
    except DataError as e:
        raise CliError(EXIT_DATA, str(e)) from e
    N = model.sample_N
    if len(rows) % N:
        raise CliError(EXIT_DATA, f"{args.batches}: {len(rows)} rows is not a multiple of N={N}")
    lines = ["batch_id,k1,threshold,decision"]
    for b in range(len(rows) // N):
        v = detect(model, rows[b * N:(b + 1) * N])
        lines.append(f"{b},{v.k1},{v.threshold},{v.decision}")
    text = "\n".join(lines) + "\n"
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


# --- pmf / threshold -----------------------------------------------------------

def _check_mn(M: int, N: int) -> None:
    if M < 1 or N < 1:
        raise CliError(EXIT_USAGE, "M and N must be positive")


def cmd_pmf(args) -> int:
    _check_mn(args.M, args.N)
    pmf = coincidence_pmf(args.M, args.N)
    sys.stdout.write("k,probability\n")
    for k, p in enumerate(pmf.probs):
        sys.stdout.write(f"{k},{float(p):.17g}\n")
    return 0


def cmd_threshold(args) -> int:
    _check_mn(args.M, args.N)
    try:
        t = threshold(args.M, args.N, args.alpha)
    except ValueError as e:
        raise CliError(EXIT_USAGE, str(e)) from e
    print(t)
    return 0


# --- scenario ------------------------------------------------------------------

def _grid_from(path: str | None) -> tuple[DcGridModel, AttackSpec]:
    if not path:
        return DcGridModel(), AttackSpec()
    try:
        return load_grid_config(Path(path).read_text(), path)
    except OSError as e:
        raise CliError(EXIT_USAGE, f"cannot read {path}: {e.strerror}") from e
    except ConfigError as e:
        raise CliError(EXIT_USAGE, str(e)) from e


def _header(prefix: str, d: int) -> list[str]:
    return [f"{prefix}{i}" for i in range(d)]


def cmd_scenario(args) -> int:
    seed = default_seed() if args.seed is None else args.seed
    B, N = args.batches, args.N
    if B < 1 or N < 1 or args.train_samples < 1:
        raise CliError(EXIT_USAGE, "batches, N and train-samples must be positive")
    ss_train, ss0, ss1 = np.random.SeedSequence(seed).spawn(3)
    files: dict[str, str] = {}
    resolved = {"kind": args.kind, "seed": seed, "batches": B, "N": N,
                "train_samples": args.train_samples}
    if args.kind in ("case1", "case2"):
        case = int(args.kind[-1])
        train_z = np.random.default_rng(ss_train).standard_normal((args.train_samples, 1))
        z0, _ = gaussian_batches(case, B, N, np.random.default_rng(ss0), anomalous=False)
        z1, par = gaussian_batches(case, B, N, np.random.default_rng(ss1), anomalous=True,
                                   nuisance=args.nuisance)
        name = "mu" if case == 1 else "sigma"
        files["train.csv"] = matrix_to_csv(train_z, ["z0"])
        files["h0.csv"] = matrix_to_csv(z0.reshape(-1, 1), ["z0"])
        files["h1.csv"] = matrix_to_csv(z1.reshape(-1, 1), ["z0"])
        files["h1_params.csv"] = f"batch_id,{name}\n" + "".join(
            f"{i},{short(v)}\n" for i, v in enumerate(par))
        resolved["nuisance"] = "none" if args.nuisance is None else args.nuisance
    else:
        grid, attack = _grid_from(args.config)
        r_train = np.random.default_rng(ss_train)
        train_z = measure(grid, sample_states(grid, args.train_samples, r_train), rng=r_train)
        clean = grid_batches(grid, B, N, np.random.default_rng(ss0)).reshape(-1, grid.n_meas)
        attacked = clean + attack.vector(grid)
        hdr = _header("z", grid.n_meas)
        files["train.csv"] = matrix_to_csv(train_z, hdr)
        files["clean.csv"] = matrix_to_csv(clean, hdr)
        files["attacked.csv"] = matrix_to_csv(attacked, hdr)
        files["attack_vector.csv"] = matrix_to_csv(attack.vector(grid)[None, :], hdr)
        resolved["config"] = args.config or "default"
    out = Path(args.out)
    for name, text in files.items():
        atomic_write(out / name, text)
    atomic_write(out / "config.resolved", dump_kv(resolved))
    print(f"wrote {len(files)} files to {out}")
    return 0


# --- reproduce -------------------------------------------------------------------

def cmd_reproduce(args) -> int:
    scenario = {"1": "case1", "2": "case2", "grid": "grid"}[args.case]
    cfg = ReproduceConfig(
        scenario=scenario,
        seed=default_seed() if args.seed is None else args.seed,
        batches_per_class=args.batches,
        batch_N=args.N,
        alphabet_M=args.M,
        fp_level=args.alpha,
        train_samples=args.train_samples,
        train_iters=args.iters,
        nuisance=args.nuisance,
        learned=not args.no_learned,
    )
    try:
        threshold(cfg.alphabet_M, cfg.batch_N, cfg.fp_level)
        result = reproduce(cfg, args.out)
    except TrainingDiverged as e:
        raise CliError(EXIT_NUMERIC, str(e)) from e
    except DegenerateInputError as e:
        raise CliError(EXIT_DATA, str(e)) from e
    except ValueError as e:
        raise CliError(EXIT_USAGE, str(e)) from e
    for name, curve in result.items():
        print(f"{name}: auc={curve.auc:.4f}")
    return 0


# --- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uad", description="Universal anomaly detection via an "
                                "adversarially trained inverse generator and a coincidence test.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train an inverse generator on anomaly-free data")
    t.add_argument("data", help="CSV of training observations, one per row")
    t.add_argument("--config", help="key = value file with training/detector settings")
    t.add_argument("--out", required=True, help="model path (.uadm)")
    t.add_argument("--trace", help="training trace CSV (default: <out>.trace.csv)")
    t.add_argument("--seed", type=int, help="random seed (default: $UAD_SEED or 0)")
    t.add_argument("--iters", type=int, help="generator iterations")
    t.add_argument("--M", type=int, help="quantization levels (default 200)")
    t.add_argument("--N", type=int, help="test batch size (default 50)")
    t.add_argument("--alpha", type=float, help="false-positive level (default 0.05)")
    t.add_argument("--epsilon", type=float, help="declared detection resolution (metadata)")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("detect", help="run a model over consecutive N-row batches")
    d.add_argument("model", help="model file (.uadm)")
    d.add_argument("batches", help="CSV of observations; every N rows form one batch")
    d.add_argument("--out", help="verdict CSV path (default: stdout)")
    d.set_defaults(func=cmd_detect)

    m = sub.add_parser("pmf", help="exact null distribution of K1 as CSV")
    m.add_argument("--M", type=int, required=True, help="alphabet size")
    m.add_argument("--N", type=int, required=True, help="sample size")
    m.set_defaults(func=cmd_pmf)

    th = sub.add_parser("threshold", help="largest K1 threshold with false-positive rate <= alpha")
    th.add_argument("--M", type=int, required=True, help="alphabet size")
    th.add_argument("--N", type=int, required=True, help="sample size")
    th.add_argument("--alpha", type=float, required=True, help="false-positive level in (0, 1)")
    th.set_defaults(func=cmd_threshold)

    s = sub.add_parser("scenario", help="generate experiment datasets as CSV")
    s.add_argument("kind", choices=["case1", "case2", "grid"], help="scenario family")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--config", help="grid scenario config (scalars + [H] CSV block)")
    s.add_argument("--seed", type=int, help="random seed (default: $UAD_SEED or 0)")
    s.add_argument("--batches", type=int, default=2000, help="batches per class")
    s.add_argument("--N", type=int, default=50, help="observations per batch")
    s.add_argument("--train-samples", type=int, default=10000, help="clean training rows")
    s.add_argument("--nuisance", type=float,
                   help="pin |mu| (case1) or sigma (case2) instead of drawing per batch")
    s.set_defaults(func=cmd_scenario)

    r = sub.add_parser("reproduce", help="run an experiment end to end and write ROC CSVs")
    r.add_argument("case", choices=["1", "2", "grid"], help="experiment")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--seed", type=int, help="random seed (default: $UAD_SEED or 0)")
    r.add_argument("--batches", type=int, default=2000, help="batches per class")
    r.add_argument("--N", type=int, default=50, help="observations per batch")
    r.add_argument("--M", type=int, default=200, help="quantization levels")
    r.add_argument("--alpha", type=float, default=0.05, help="false-positive level")
    r.add_argument("--train-samples", type=int, default=10000, help="clean training rows")
    r.add_argument("--iters", type=int, default=2000, help="generator iterations")
    r.add_argument("--nuisance", type=float,
                   help="pin |mu| (case 1) or sigma (case 2) instead of drawing per batch")
    r.add_argument("--no-learned", action="store_true",
                   help="skip training; score only the analytic-CDF oracle (and J test)")
    r.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as e:
        print(f"uad {args.command}: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
