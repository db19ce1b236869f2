"""Command-line interface: ``hemp train | compress | decompress | eval | diagnose``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import codec
from .datasets import DatasetError, Splits, load_mnist, synth_splits
from .diagnostics import (
    bound_violations,
    entropy_by_order,
    gradient_check,
    random_config,
    stationary_check,
)
from .lloyd import fit_store_codebooks, quantize_store, reconstruct_store
from .mlp import DivergenceError, MlpSpec, init_params, spec_from_shapes
from .regularizer import RegConfig
from .rng import rng_for
from .trainer import (
    TrainConfig,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
    write_metrics_csv,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

log = logging.getLogger("hemp")


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _non_negative(text: str) -> float:
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {text}")
    return value


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", choices=["mnist", "synth"], default="mnist")
    p.add_argument("--data-dir", help="MNIST IDX directory (default: $HEMP_DATA_DIR or ./data)")
    p.add_argument("--n-train", type=_positive_int, default=2000)
    p.add_argument("--n-test", type=_positive_int, default=1000)
    p.add_argument("--seed", type=int, default=0)


def _add_runtime_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threads", type=_positive_int, default=1, help="BLAS worker threads")
    p.add_argument("--deterministic", action="store_true", help="force single-threaded reductions")
    p.add_argument("--config", type=Path, help="file of 'key = value' lines; flags take precedence")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hemp", description="Entropy-regularized training and compression of small MLPs")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train with the entropy regularizer, write model.hemp and metrics.csv")
    _add_data_flags(t)
    t.add_argument("--arch", default="784x32x10")
    t.add_argument("--levels", type=_positive_int, default=3)
    t.add_argument("--order", type=_positive_int, default=2)
    t.add_argument("--lambda-h", type=_non_negative, default=1.0)
    t.add_argument("--lambda-e", type=_non_negative, default=0.1)
    t.add_argument("--lr", type=float, default=1e-2)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--batch", type=_positive_int, default=100)
    t.add_argument("--epochs", type=_positive_int, default=30)
    t.add_argument("--refit-every", type=_positive_int, default=1)
    t.add_argument("--insensitivity-scope", choices=["layer", "global"], default="layer")
    t.add_argument("--no-reweight", action="store_true", help="disable insensitivity re-weighting")
    t.add_argument("--out-dir", type=Path, default=Path("."))
    _add_runtime_flags(t)

    c = sub.add_parser("compress", help="quantize a continuous checkpoint into a .hemp container")
    c.add_argument("checkpoint", type=Path)
    c.add_argument("-o", "--output", type=Path, default=Path("model.hemp"))
    c.add_argument("--levels", type=_positive_int, help="refit codebooks with this many levels")
    c.add_argument("--order", type=_positive_int, help="context order + 1 (default: checkpoint order)")
    _add_runtime_flags(c)

    d = sub.add_parser("decompress", help="restore quantized weights from a .hemp container")
    d.add_argument("model", type=Path)
    d.add_argument("-o", "--output", type=Path, default=Path("quantized.npz"))
    d.add_argument("--raw", type=Path, help="also write one byte per index for external compressors")
    _add_runtime_flags(d)

    e = sub.add_parser("eval", help="top-1 accuracy and file size of a model")
    e.add_argument("model", type=Path, help=".hemp container or .npz checkpoint")
    _add_data_flags(e)
    _add_runtime_flags(e)

    g = sub.add_parser("diagnose", help="gradient / stationary-point / bound / entropy checks")
    g.add_argument("--model", type=Path, help=".npz checkpoint; default is random configurations")
    g.add_argument("--configs", type=_positive_int, default=50)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--output", type=Path, default=Path("diagnose.csv"))
    _add_runtime_flags(g)
    return parser


def _read_config(path: Path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None) is None:
        return args
    # Re-parse with config values as defaults so explicit flags still win.
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in _read_config(args.config).items():
        if key not in known or key in ("config", "help"):
            sub.error(f"unknown config key {key!r}")
        action = known[key]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        else:
            try:
                defaults[key] = action.type(raw) if action.type else raw
            except (argparse.ArgumentTypeError, ValueError) as exc:
                sub.error(f"config {key}: {exc}")
            if action.choices and defaults[key] not in action.choices:
                sub.error(f"config {key}: {raw!r} not in {sorted(action.choices)}")
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _splits(args, spec: MlpSpec | None = None) -> Splits:
    if args.dataset == "synth":
        dim = spec.layer_widths[0] if spec else 16
        classes = spec.layer_widths[-1] if spec else 10
        per_class = max(1, args.n_train // classes)
        return synth_splits(classes, per_class, dim, args.seed)
    return load_mnist(args.data_dir, args.n_train, args.n_test, args.seed)


def cmd_train(args) -> int:
    spec = MlpSpec.parse(args.arch)
    if args.levels < 2:
        raise UsageError("--levels must be >= 2")
    if not 0 <= args.momentum < 1:
        raise UsageError("--momentum must lie in [0, 1)")
    if args.lr <= 0:
        raise UsageError("--lr must be positive")
    reg = RegConfig(
        lambda_h=args.lambda_h,
        lambda_e=args.lambda_e,
        order=args.order,
        insensitivity_scope=args.insensitivity_scope,
        reweight=not args.no_reweight,
    )
    cfg = TrainConfig(
        lr=args.lr, momentum=args.momentum, batch_size=args.batch, epochs=args.epochs,
        seed=args.seed, levels=args.levels, reg=reg, refit_every=args.refit_every,
    )
    splits = _splits(args, spec)
    if splits.train.features.shape[1] != spec.layer_widths[0]:
        raise UsageError(f"--arch input width {spec.layer_widths[0]} != data dimension {splits.train.features.shape[1]}")
    result = train(spec, splits, cfg)

    args.out_dir.mkdir(parents=True, exist_ok=True)
    blob = result.container()
    (args.out_dir / "model.hemp").write_bytes(blob)
    write_metrics_csv(result.history, args.out_dir / "metrics.csv")
    save_checkpoint(args.out_dir / "checkpoint.npz", result)
    last = result.history[-1]
    print(f"wrote {args.out_dir / 'model.hemp'} ({len(blob)} bytes) and {args.out_dir / 'metrics.csv'}")
    print(f"top-1 continuous {last.acc_w:.4f} quantized {last.acc_wq:.4f}; "
          f"H_{cfg.reg.order} proxy {last.h_proxy:.4f} true {last.h_true:.4f} bits/tuple")
    return EXIT_OK


def cmd_compress(args) -> int:
    spec, store, codebooks, order = load_checkpoint(args.checkpoint)
    if args.levels:
        if args.levels < 2:
            raise UsageError("--levels must be >= 2")
        codebooks = fit_store_codebooks(store, args.levels)
    order = args.order or order
    idx = quantize_store(store, codebooks)
    blob = codec.encode(idx, codebooks, order, [l.name for l in store.layers], [l.shape for l in store.layers])
    args.output.write_bytes(blob)
    print(f"wrote {args.output} ({len(blob)} bytes)")
    return EXIT_OK


def _load_model(path: Path) -> tuple[MlpSpec, np.ndarray, int | None]:
    """Flat parameter vector (quantized for .hemp) and the file size for containers."""
    data = path.read_bytes()
    if data[:4] == codec.MAGIC:
        model = codec.decode(data)
        spec = spec_from_shapes(model.shapes)
        return spec, reconstruct_store(model.indices, model.codebooks), len(data)
    spec, store, _, _ = load_checkpoint(path)
    return spec, store.flat.copy(), None


def cmd_decompress(args) -> int:
    data = args.model.read_bytes()
    model = codec.decode(data)
    spec = spec_from_shapes(model.shapes)
    store = init_params(spec, 0)
    store.flat[:] = reconstruct_store(model.indices, model.codebooks)
    arrays = {f"w/{l.name}": l.array() for l in store.layers}
    arrays.update({f"cb/{l.name}": cb.levels for l, cb in zip(store.layers, model.codebooks)})
    arrays["meta/arch"] = np.array(spec.arch)
    arrays["meta/order"] = np.array(model.order)
    np.savez(args.output, **arrays)
    print(f"wrote {args.output}")
    if args.raw:
        raw, offsets = codec.export_raw_indices(model.indices, model.codebooks)
        args.raw.write_bytes(raw)
        print(f"wrote {args.raw} ({len(raw)} bytes; layer offsets {offsets})")
    return EXIT_OK


def cmd_eval(args) -> int:
    spec, flat, size = _load_model(args.model)
    splits = _splits(args, spec)
    acc, loss = evaluate(spec, flat, splits.test)
    size = size if size is not None else args.model.stat().st_size
    print(f"top1={acc:.4f} loss={loss:.4f} bytes={size}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    rows: list[list] = []
    if args.model:
        spec, store, codebooks, order = load_checkpoint(args.model)
        configs = [(store, codebooks, order)]
    else:
        rng = rng_for(args.seed, "diagnose")
        configs = [random_config(rng) for _ in range(args.configs)]

    worst = 0.0
    for k, (store, cbs, order) in enumerate(configs):
        if store.total_count <= 4096:
            chk = gradient_check(store, cbs, order)
            worst = max(worst, chk.max_rel_error)
            rows.append(["gradient", k, order, chk.n_levels, chk.n_params, chk.checked, f"{chk.max_rel_error:.3e}"])

    violations, stationary_fail = 0, 0
    for k, (store, cbs, _) in enumerate(configs):
        bad, ratio = bound_violations(store, cbs)
        violations += bad
        rows.append(["bound", k, 1, cbs[0].level_count, store.total_count, bad, f"{ratio:.6f}"])
        st = stationary_check(store, cbs, 0)
        if st.stationary is not None and abs(st.gradient_there) > 1e-9:
            stationary_fail += 1
        rows.append(["stationary", k, 1, cbs[0].level_count, store.total_count,
                     "" if st.stationary is None else f"{st.stationary:.9g}",
                     "" if st.gradient_there is None else f"{st.gradient_there:.3e}"])

    subadditive = True
    for k, (store, cbs, _) in enumerate(configs):
        ent = entropy_by_order(store, cbs)
        by_n = {n: (hp, ht) for n, hp, ht in ent}
        for n, hp, ht in ent:
            rows.append(["entropy", k, n, cbs[0].level_count, store.total_count, f"{hp:.6f}", f"{ht:.6f}"])
        if 1 in by_n and 2 in by_n and by_n[2][1] > 2 * by_n[1][1] + 1e-9:
            subadditive = False

    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["check", "config", "order", "levels", "params", "a", "b"])
        w.writerows(rows)
    print(f"gradient check: max relative error {worst:.3e} over {len(configs)} configs")
    print(f"bound check: {violations} violations")
    print(f"stationary check: {stationary_fail} failures")
    print(f"entropy: H2 <= 2*H1 {'holds' if subadditive else 'VIOLATED'}")
    print(f"wrote {args.output}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "compress": cmd_compress,
    "decompress": cmd_decompress,
    "eval": cmd_eval,
    "diagnose": cmd_diagnose,
}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"hemp: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        threadpool_limits = None
    threads = 1 if args.deterministic else args.threads
    try:
        if threadpool_limits is not None:
            with threadpool_limits(limits=threads):
                return COMMANDS[args.command](args)
        return COMMANDS[args.command](args)
    except (UsageError, ValueError) as exc:
        print(f"hemp: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"hemp: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DatasetError, codec.CodecError, FileNotFoundError, OSError) as exc:
        print(f"hemp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
