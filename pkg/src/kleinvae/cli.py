"""Command line entry point: ``kleinvae <subcommand> ...``.

Machine-readable results go to stdout (or ``--out``), human summaries to
stderr.  Every run that writes a file also writes the resolved config
beside it (``<out>.config.json``, or ``config.json`` in an output
directory); runs that only print emit the config record on stderr.

Exit codes::

    0  success
    2  usage error (bad or missing flags, incompatible inputs)
    3  malformed or missing input file
    4  capacity exceeded (complex too large for the PH engine)
    5  value outside the domain of an operation
    6  training diverged

``KLEIN_THREADS`` caps the threads of the BLAS/OpenMP pools and the number
of worker processes ``ph`` uses to compute several fields at once.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .covering import CoveringMap, DomainError, verify_covering
from .data import (FormatError, dump_array, gen_klein_circles, parse_array, sample_filter_cloud,
                   save_filters)
from .density import GridSpec, WrappedDensity, kl_gaussian_analytic, kl_numeric_base, random_gaussian
from .tda import (BACKEND, CapacityError, DiagramFormatError, bottleneck, klein_signature, load_diagrams,
                  maxmin_subsample, rips_ph_points)
from .vae import (CheckpointError, DivergenceError, LatentSpec, TrainConfig, build_model, latent_variance,
                  load_checkpoint, reconstruct, save_checkpoint, train)

CONFIG_VERSION = 1

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_CAPACITY = 4
EXIT_DOMAIN = 5
EXIT_DIVERGED = 6


class UsageError(Exception):
    pass


def _info(msg: str) -> None:
    print(msg, file=sys.stderr)


def _config_record(args, **extra) -> dict:
    fields = {k: v for k, v in vars(args).items() if k != "func"}
    return {"version": CONFIG_VERSION, "package_version": __version__, **fields, **extra}


def _write_config(record: dict, out: str | None) -> None:
    text = json.dumps(record, indent=2, default=str)
    if out:
        Path(str(out) + ".config.json").write_text(text + "\n")
    else:
        _info("config: " + json.dumps(record, default=str))


def _emit_json(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=None if out is None else 2, default=float)
    if out:
        Path(out).write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")
        sys.stdout.flush()


def _read_input(path: str | None) -> bytes:
    if path is None or path == "-":
        if sys.stdin.isatty():
            raise UsageError("no --in given and nothing piped on stdin")
        return sys.stdin.buffer.read()
    try:
        return Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise FormatError(f"input file not found: {path}", 0) from exc


def _cloud(blob: bytes) -> np.ndarray:
    arr = parse_array(blob)
    return arr.reshape(len(arr), -1).astype(np.float64)


def _fields(text: str) -> list[int]:
    try:
        out = [int(f) for f in text.split(",") if f.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --field {text!r}") from exc
    if not out or any(f not in (2, 3, 5, 7) for f in out):
        raise UsageError("--field takes primes from {2, 3, 5, 7}, comma separated")
    return out


def _dims(text: str) -> list[int]:
    try:
        return [int(d) for d in text.split(",") if d.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --dims {text!r}") from exc


# ------------------------------------------------------------------ commands

def cmd_gen_circles(args) -> int:
    t0 = time.perf_counter()
    images = gen_klein_circles(args.n, args.size, args.radius, args.seed)
    blob = dump_array(images)
    if args.out:
        Path(args.out).write_bytes(blob)
    else:
        sys.stdout.buffer.write(blob)
        sys.stdout.flush()
    _write_config(_config_record(args), args.out)
    _info(f"{args.n} Klein-circle images {args.size}x{args.size}, r={args.radius}, "
          f"{time.perf_counter() - t0:.1f}s")
    return EXIT_OK


def cmd_gen_filters(args) -> int:
    cloud = sample_filter_cloud(args.n, args.seed)
    if args.out:
        save_filters(cloud, args.out)
    else:
        sys.stdout.buffer.write(dump_array(cloud.filters.reshape(-1, 3, 3)))
        sys.stdout.flush()
    _write_config(_config_record(args), args.out)
    _info(f"{args.n} Gabor-Klein 3x3 filters")
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    try:
        return TrainConfig.from_preset(args.preset, seed=args.seed, epochs=args.epochs, lr=args.lr,
                                       kl_weight=args.kl_weight, batch_size=args.batch_size)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_train(args) -> int:
    images = parse_array(_read_input(args.data))
    try:
        latent = LatentSpec.parse(args.latent)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    config = _train_config(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(latent, n_pixels=images[0].size, preset=args.preset, seed=args.seed,
                        kl_weight=config.kl_weight)
    record = _config_record(args, train=config.to_dict(), model=model.descriptor(), n_images=len(images))
    (out / "config.json").write_text(json.dumps(record, indent=2, default=str) + "\n")

    def progress(rec):
        if rec["epoch"] % max(1, config.epochs // 20) == 0 or rec["epoch"] == config.epochs - 1:
            _info(f"epoch {rec['epoch']:4d}  elbo {rec['elbo']:10.3f}  kl {rec['kl']:10.3f}  lr {rec['lr']:.2e}")

    try:
        result = train(model, images, config, log_path=out / "train.jsonl", on_epoch=progress)
    except DivergenceError:
        save_checkpoint(model, out / "model.kvae")
        raise
    save_checkpoint(model, out / "model.kvae")
    summary = {
        "checkpoint": str(out / "model.kvae"),
        "log": str(out / "train.jsonl"),
        "epochs": len(result.log),
        "initial_elbo": result.log[0]["elbo"],
        "final_elbo": result.log[-1]["elbo"],
        "latent_var": result.log[-1]["latent_var"],
        "lr_reductions": result.lr_reductions,
        "surrogate_checks": result.surrogate_checks,
        "surrogate_violations": result.surrogate_violations,
    }
    _emit_json(summary, None)
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    try:
        model = load_checkpoint(args.model)
    except FileNotFoundError as exc:
        raise FormatError(f"model file not found: {args.model}", 0) from exc
    images = parse_array(_read_input(args.data))
    if args.n is not None:
        images = images[:args.n]
    if images[0].size != model.n_pixels:
        raise UsageError(f"model expects {model.n_pixels} pixels, data has {images[0].size}")
    recon = reconstruct(model, images.astype(np.float64)).astype(np.float32)
    blob = dump_array(recon)
    if args.out:
        Path(args.out).write_bytes(blob)
    else:
        sys.stdout.buffer.write(blob)
        sys.stdout.flush()
    _write_config(_config_record(args), args.out)
    err = float(np.mean(np.abs(recon - images)))
    _info(f"reconstructed {len(images)} images, mean |error| {err:.4f}, "
          f"latent variance {latent_variance(model, images):.4g}")
    return EXIT_OK


def _worker_count() -> int:
    cap = os.environ.get("KLEIN_THREADS")
    return int(cap) if cap else (os.cpu_count() or 1)


def _ph_job(X, job):
    return rips_ph_points(X, **job)


def cmd_ph(args) -> int:
    fields = _fields(args.field)
    X = _cloud(_read_input(args.inp))
    chosen = None
    if args.subsample is not None and args.subsample < len(X):
        if args.seed is None:
            raise UsageError("--subsample needs --seed")
        chosen = maxmin_subsample(X, args.subsample, seed=args.seed)
        X = X[chosen]
    t0 = time.perf_counter()
    jobs = [dict(max_dim=args.maxdim, threshold=args.threshold, field_char=p) for p in fields]
    workers = min(len(fields), _worker_count())
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            diagrams = list(pool.map(_ph_job, [X] * len(jobs), jobs))
    else:
        diagrams = [_ph_job(X, job) for job in jobs]
    for p, dgm in zip(fields, diagrams):
        counts = {d: len(dgm.bars(d)) for d in range(args.maxdim + 1)}
        _info(f"Z{p}: {len(X)} points, bars per dim {counts}")
    _info(f"{len(fields)} field(s) in {time.perf_counter() - t0:.1f}s, {workers} worker(s), {BACKEND} kernel")
    payload = diagrams[0].to_dict() if len(diagrams) == 1 else {"diagrams": [d.to_dict() for d in diagrams]}
    _emit_json(payload, args.out)
    if args.csv:
        Path(args.csv).write_text("".join(d.to_csv() if i == 0 else d.to_csv().split("\n", 1)[1]
                                          for i, d in enumerate(diagrams)))
    _write_config(_config_record(args, n_points=len(X), backend=BACKEND), args.out or args.csv)
    return EXIT_OK


def _load_dgms(path: str):
    text = _read_input(path).decode("utf-8", errors="replace")
    return load_diagrams(text)


def _pick(dgms, field: int | None):
    if field is None:
        if len({d.field_char for d in dgms}) > 1:
            raise UsageError("diagram file holds several fields; choose one with --field")
        return dgms[0]
    for d in dgms:
        if d.field_char == field:
            return d
    raise UsageError(f"no diagram over Z{field} in input")


def cmd_bottleneck(args) -> int:
    if args.a == "-" and args.b == "-":
        raise UsageError("at most one of --a/--b can read stdin")
    field = int(args.field) if args.field else None
    a = _pick(_load_dgms(args.a), field)
    b = _pick(_load_dgms(args.b), field)
    if a.field_char != b.field_char:
        raise UsageError(f"diagrams are over different fields (Z{a.field_char} vs Z{b.field_char})")
    dims = _dims(args.dims)
    per_dim = {str(d): bottleneck(a, b, d) for d in dims}
    l2 = float(np.sqrt(sum(v * v for v in per_dim.values())))
    _emit_json({"field": a.field_char, "per_dim": per_dim, "l2": l2}, args.out)
    _info("bottleneck " + ", ".join(f"H{d}={v:.6g}" for d, v in per_dim.items()) + f"; l2 {l2:.6g}")
    return EXIT_OK


def cmd_klein_check(args) -> int:
    dgms = _load_dgms(args.inp)
    by_field = {d.field_char: d for d in dgms}
    missing = [p for p in (2, 3) if p not in by_field]
    if missing:
        raise UsageError("klein-check needs diagrams over both Z2 and Z3 "
                         f"(missing Z{', Z'.join(map(str, missing))}); run `ph --field 2,3`")
    res = klein_signature(by_field[2], by_field[3], args.gap_factor)
    _emit_json({**res.to_dict(), "gap_factor": args.gap_factor}, args.out)
    _info(f"verdict {res.verdict}: long (H1, H2) bars Z2 {res.counts[2]}, Z3 {res.counts[3]}")
    return EXIT_OK


_MAPS = {"klein": CoveringMap.klein, "torus": CoveringMap.torus, "circle": CoveringMap.circle}


def cmd_verify_kl(args) -> int:
    cmap = _MAPS[args.map]()
    grid = GridSpec(args.grid, cmap)
    rng = np.random.default_rng(args.seed)
    fh = open(args.out, "w") if args.out else sys.stdout
    violations = 0
    worst = np.inf
    try:
        for i in range(args.pairs):
            q = random_gaussian(rng, cmap)
            p = random_gaussian(rng, cmap)
            analytic = kl_gaussian_analytic(q, p)
            numeric = kl_numeric_base(WrappedDensity(q, cmap), WrappedDensity(p, cmap), grid)
            gap = analytic - numeric
            violations += gap < -args.tol
            worst = min(worst, gap)
            fh.write(json.dumps({"pair": i, "analytic": analytic, "numeric": numeric, "gap": gap}) + "\n")
        fh.write(json.dumps({"violations": int(violations), "pairs": args.pairs, "min_gap": float(worst)}) + "\n")
    finally:
        if args.out:
            fh.close()
    _write_config(_config_record(args), args.out)
    _info(f"{args.pairs} pairs on the {args.map} grid {args.grid}^2: {violations} violations, "
          f"min gap {worst:.3e}")
    return EXIT_OK


def cmd_verify_covering(args) -> int:
    reports = [verify_covering(_MAPS[m](), args.n, args.seed) for m in args.maps.split(",")]
    ok = all(r["idempotence_error"] == 0.0 and r["roundtrip_error"] <= 1e-12 and r["det_error"] <= 1e-12
             and r["box_area_error"] <= 1e-12
             and r["preimages_per_cell"] == [_MAPS[r["kind"]]().sheets_per_cell] * 2 for r in reports)
    _emit_json({"ok": ok, "maps": reports}, args.out)
    _write_config(_config_record(args), args.out)
    _info("covering checks " + ("passed" if ok else "FAILED"))
    return EXIT_OK if ok else EXIT_DOMAIN


def cmd_ablate(args) -> int:
    from .ablation import run_ablation

    latents = args.latents.split(",")
    for name in latents:
        try:
            LatentSpec.parse(name)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    images = parse_array(_read_input(args.data)).astype(np.float64)
    if args.heldout:
        heldout = parse_array(_read_input(args.heldout)).astype(np.float64)
    else:
        heldout = images[-args.n_eval:]
        images = images[:-args.n_eval]
    heldout = heldout[:args.n_eval]
    config = _train_config(args)
    report = run_ablation(images, heldout, config, latents, preset=args.preset,
                          max_dim=args.maxdim, progress=_info)
    _emit_json(report.to_dict(), args.out)
    _write_config(_config_record(args, train=config.to_dict()), args.out)
    return EXIT_OK


# ------------------------------------------------------------------ parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="kleinvae", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-circles", help="render Klein-circle images (KIMG)")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--size", type=int, default=30)
    s.add_argument("--radius", type=float, default=0.3)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_gen_circles)

    s = sub.add_parser("gen-filters", help="sample Gabor-Klein 3x3 filters (KIMG)")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_gen_filters)

    def train_flags(s):
        s.add_argument("--preset", choices=("ablation", "demo"), default="ablation")
        s.add_argument("--data", required=True)
        s.add_argument("--seed", type=int, required=True)
        s.add_argument("--epochs", type=int)
        s.add_argument("--lr", type=float)
        s.add_argument("--kl-weight", type=float)
        s.add_argument("--batch-size", type=int)

    s = sub.add_parser("train", help="train a VAE; writes model.kvae, train.jsonl, config.json")
    train_flags(s)
    s.add_argument("--latent", required=True, help="klein, torus or euc2/euc3/euc4")
    s.add_argument("--out-dir", default=".")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("reconstruct", help="decode the posterior means of images")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--n", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("ph", help="Rips persistence diagram(s) of a KIMG point cloud")
    s.add_argument("--in", dest="inp")
    s.add_argument("--field", default="2,3", help="comma separated primes (default 2,3)")
    s.add_argument("--maxdim", type=int, default=2, choices=(0, 1, 2))
    s.add_argument("--threshold", type=float)
    s.add_argument("--subsample", type=int, help="greedy max-min landmarks to keep")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--csv")
    s.set_defaults(func=cmd_ph)

    s = sub.add_parser("bottleneck", help="bottleneck distance between two diagrams")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--dims", default="0,1,2")
    s.add_argument("--field", help="field to compare when the files hold several")
    s.add_argument("--out")
    s.set_defaults(func=cmd_bottleneck)

    s = sub.add_parser("klein-check", help="Klein-bottle verdict from Z2 and Z3 diagrams")
    s.add_argument("--in", dest="inp")
    s.add_argument("--gap-factor", type=float, default=3.0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_klein_check)

    s = sub.add_parser("verify-kl", help="numerical base KL vs analytic cover KL on random pairs")
    s.add_argument("--pairs", type=int, default=100)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--grid", type=int, default=200)
    s.add_argument("--map", choices=tuple(_MAPS), default="klein")
    s.add_argument("--tol", type=float, default=1e-3)
    s.add_argument("--out")
    s.set_defaults(func=cmd_verify_kl)

    s = sub.add_parser("verify-covering", help="randomised checks of the covering maps")
    s.add_argument("--n", type=int, default=10_000)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--maps", default="circle,torus,klein")
    s.add_argument("--out")
    s.set_defaults(func=cmd_verify_covering)

    s = sub.add_parser("ablate", help="train every latent kind under one config and compare topology")
    train_flags(s)
    s.add_argument("--latents", default="euc2,euc3,euc4,torus,klein")
    s.add_argument("--heldout", help="held-out images (default: last --n-eval of --data)")
    s.add_argument("--n-eval", type=int, default=300)
    s.add_argument("--maxdim", type=int, default=2, choices=(0, 1, 2))
    s.add_argument("--out")
    s.set_defaults(func=cmd_ablate)
    return ap


def _thread_limit():
    value = os.environ.get("KLEIN_THREADS")
    if not value:
        return None
    try:
        n = int(value)
    except ValueError as exc:
        raise UsageError(f"KLEIN_THREADS must be an integer, got {value!r}") from exc
    if n < 1:
        raise UsageError("KLEIN_THREADS must be at least 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        limiter = _thread_limit()
        try:
            return args.func(args)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except UsageError as exc:
        _info(f"kleinvae: usage error: {exc}")
        return EXIT_USAGE
    except (FormatError, DiagramFormatError, CheckpointError) as exc:
        _info(f"kleinvae: malformed input: {exc}")
        return EXIT_FORMAT
    except CapacityError as exc:
        _info(f"kleinvae: capacity exceeded: {exc}")
        return EXIT_CAPACITY
    except DivergenceError as exc:
        _info(f"kleinvae: training diverged: {exc}")
        return EXIT_DIVERGED
    except (DomainError, ValueError) as exc:
        _info(f"kleinvae: domain error: {exc}")
        return EXIT_DOMAIN
    except BrokenPipeError:
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
