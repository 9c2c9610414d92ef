"""Command-line entry point: generate, train, eval, gradcheck, klcompare, export-embeddings.

Exit codes: 0 success, 1 runtime or data failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import evalkit
from . import fogsynth as fs
from . import gradsuite
from . import model as fm
from .errors import ConfigError, ParameterError
from .model import COMPONENTS
from .trainer import TrainConfig, train

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("fognet")


class UsageError(Exception):
    """Bad flag value; maps to exit code 2."""


class DataError(Exception):
    """Missing or malformed input file; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonneg_float(text: str) -> float:
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {text}")
    return v


def _parse_ablation(text: str) -> frozenset:
    tokens = {t.upper() for t in _csv_list(text)}
    bad = tokens - COMPONENTS
    if bad:
        raise UsageError(f"invalid --ablate token(s) {sorted(t.lower() for t in bad)}; choose from fas,me,csa")
    return COMPONENTS - tokens


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out-dir", type=Path, default=None, help="root for every file written")

    p = _Parser(prog="fognet", description="Fog-robust two-stream action recognition at desk scale.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", parents=[common], help="synthesize a paired clean/foggy dataset")
    g.add_argument("--classes", type=_positive_int, default=len(fs.DEFAULT_CLASSES))
    g.add_argument("--clips-per-class", type=int, default=40)
    g.add_argument("--frames", type=int, default=8)
    g.add_argument("--size", type=int, default=32)
    g.add_argument("--intensities", type=_csv_list, default=list(fs.INTENSITIES))
    g.add_argument("--views", type=int, default=fs.NUM_VIEWS, help="number of camera views, 1..4")
    g.add_argument("--split-ratio", type=float, default=0.8)
    g.add_argument("--out", type=Path, required=True)

    t = sub.add_parser("train", parents=[common], help="train a model from a manifest")
    t.add_argument("--manifest", type=Path, required=True)
    t.add_argument("--epochs", type=_positive_int, default=30)
    t.add_argument("--batch", type=_positive_int, default=16)
    t.add_argument("--lr", type=_nonneg_float, default=5e-5)
    t.add_argument("--warmup-epochs", type=int, default=5)
    t.add_argument("--lambda", dest="lam", type=_nonneg_float, default=0.4)
    t.add_argument("--beta", type=_nonneg_float, default=0.1)
    t.add_argument("--weight-decay", type=_nonneg_float, default=0.01)
    t.add_argument("--ablate", default="", help="comma list of components to disable: fas,me,csa")
    t.add_argument("--dim", type=_positive_int, default=32)
    t.add_argument("--encoder", choices=fm.ENCODER_KINDS, default="learnable")
    t.add_argument("--train-input", choices=("paired", "clean"), default="paired",
                   help="'clean' feeds the clean stream into both slots")
    t.add_argument("--intensities", type=_csv_list, default=None, help="keep only these fog levels")
    t.add_argument("--replicate", type=_positive_int, default=1, help="repeat the training split N times")
    t.add_argument("--out", type=Path, required=True)

    e = sub.add_parser("eval", parents=[common], help="foggy-only evaluation of a checkpoint")
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--manifest", type=Path, required=True)
    e.add_argument("--split", choices=("train", "test", "all"), default="test")
    e.add_argument("--topk", type=_int_list, default=[1, 5])
    e.add_argument("--stream", choices=("foggy", "clean"), default="foggy")
    e.add_argument("--intensities", type=_csv_list, default=None)
    e.add_argument("--confusion", type=Path, default=None)

    c = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    c.add_argument("--tolerance", type=float, default=1e-4)

    k = sub.add_parser("klcompare", parents=[common], help="pixel-histogram KL between two datasets")
    k.add_argument("--a", type=Path, required=True)
    k.add_argument("--b", type=Path, required=True)
    k.add_argument("--stream", choices=("foggy", "clean"), default="foggy")
    k.add_argument("--stream-b", choices=("foggy", "clean"), default=None, help="stream for --b (default: --stream)")
    k.add_argument("--bins", type=_positive_int, default=evalkit.DEFAULT_BINS)
    k.add_argument("--samples-per-class", type=_positive_int, default=2)

    x = sub.add_parser("export-embeddings", parents=[common], help="write pooled foggy embeddings to CSV")
    x.add_argument("--checkpoint", type=Path, required=True)
    x.add_argument("--manifest", type=Path, required=True)
    x.add_argument("--split", choices=("train", "test", "all"), default="all")
    x.add_argument("--out", type=Path, required=True)
    return p


def _under(out_dir: Path | None, path: Path | None) -> Path | None:
    if path is None or out_dir is None or path.is_absolute():
        return path
    return out_dir / path


def _load(manifest: Path):
    if not manifest.is_file():
        raise DataError(f"manifest not found: {manifest}")
    try:
        samples = fs.read_manifest(manifest)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot read manifest {manifest}: {exc}") from exc
    if not samples:
        raise DataError(f"manifest is empty: {manifest}")
    return samples


def _load_ckpt(path: Path):
    if not (path / "meta.json").is_file():
        raise DataError(f"checkpoint not found: {path}")
    try:
        return fm.load_checkpoint(path)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc


def _select(samples, split: str, intensities=None):
    out = [s for s in samples if split == "all" or s.split == split]
    if intensities:
        out = [s for s in out if s.intensity in set(intensities)]
    if not out:
        raise DataError(f"no samples for split={split!r} intensities={intensities}")
    return out


def _class_names(samples) -> list[str]:
    names: dict[int, str] = {}
    for s in samples:
        names.setdefault(s.label, s.label_name or str(s.label))
    return [names.get(c, str(c)) for c in range(max(names) + 1)]


def cmd_generate(args) -> int:
    if not 1 <= args.classes <= len(fs.DEFAULT_CLASSES):
        raise UsageError(f"--classes must lie in [1, {len(fs.DEFAULT_CLASSES)}]")
    if args.clips_per_class < 2:
        raise UsageError("--clips-per-class must be >= 2")
    if not 1 <= args.views <= fs.NUM_VIEWS:
        raise UsageError(f"--views must lie in [1, {fs.NUM_VIEWS}]")
    if not 0.0 < args.split_ratio < 1.0:
        raise UsageError("--split-ratio must lie in (0, 1)")
    if args.frames < 2 or args.size < 8:
        raise UsageError("--frames must be >= 2 and --size >= 8")
    bad = set(args.intensities) - set(fs.FOG_PRESETS)
    if bad or not args.intensities:
        raise UsageError(f"--intensities must be drawn from {','.join(fs.FOG_PRESETS)}")
    try:
        samples = fs.generate_dataset(
            classes=fs.DEFAULT_CLASSES[: args.classes],
            clips_per_class=args.clips_per_class,
            intensities=args.intensities,
            views=range(args.views),
            split_ratio=args.split_ratio,
            seed=args.seed,
            T=args.frames,
            H=args.size,
            W=args.size,
        )
    except ParameterError as exc:
        raise UsageError(str(exc)) from exc
    path = fs.write_manifest(samples, _under(args.out_dir, args.out))
    n_train = sum(s.split == "train" for s in samples)
    print(f"wrote {len(samples)} paired samples ({n_train} train, {len(samples) - n_train} test) to {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    components = _parse_ablation(args.ablate)
    try:
        cfg = TrainConfig(
            epochs=args.epochs,
            batch_size=args.batch,
            peak_lr=args.lr,
            warmup_epochs=args.warmup_epochs,
            weight_decay=args.weight_decay,
            lam=args.lam,
            beta=args.beta,
            seed=args.seed,
            components=components,
            dim=args.dim,
            encoder=args.encoder,
        )
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    samples = _load(args.manifest)
    names = _class_names(samples)
    train_set = _select(samples, "train", args.intensities)
    test_set = [s for s in samples if s.split == "test"]
    if args.train_input == "clean":
        train_set = fs.clean_only(train_set)
    train_set = train_set * args.replicate
    out = _under(args.out_dir, args.out)
    t0 = time.perf_counter()
    try:
        result = train(train_set, cfg, test_set, num_classes=len(names), class_names=names, out_dir=out)
    except ConfigError as exc:
        raise DataError(str(exc)) from exc
    last = result.log[-1]
    print(json.dumps({
        "epochs": cfg.epochs,
        "components": sorted(cfg.components),
        "final_loss": last["l_all"],
        "train_top1": last["train_top1"],
        "test_top1": last["test_top1"],
        "seconds": round(time.perf_counter() - t0, 1),
        "checkpoint": str(out / "final"),
    }, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    params = _load_ckpt(args.checkpoint)
    for k in args.topk:
        if not 1 <= k <= params.C:
            raise UsageError(f"--topk value {k} outside [1, {params.C}]")
    samples = _select(_load(args.manifest), args.split, args.intensities)
    result = evalkit.evaluate(params, samples, args.topk, args.stream)
    if args.confusion is not None:
        path = _under(args.out_dir, args.confusion)
        path.parent.mkdir(parents=True, exist_ok=True)
        evalkit.write_confusion_csv(result["confusion"], path, params.class_names)
    print(evalkit.dump_report(result["report"]))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    t0 = time.perf_counter()
    results = gradsuite.run_gradient_suite(seed=args.seed, tol=args.tolerance)
    print(gradsuite.format_table(results, args.tolerance))
    print(f"elapsed {time.perf_counter() - t0:.1f}s")
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


def cmd_klcompare(args) -> int:
    a, b = _load(args.a), _load(args.b)
    stream_b = args.stream_b or args.stream
    ha = evalkit.dataset_histogram(a, args.stream, args.bins, args.samples_per_class, args.seed)
    hb = evalkit.dataset_histogram(b, stream_b, args.bins, args.samples_per_class, args.seed)
    print(f"KL(A||B) = {evalkit.kl_divergence(ha, hb):.6f}")
    print(f"KL(B||A) = {evalkit.kl_divergence(hb, ha):.6f}")
    return EXIT_OK


def cmd_export_embeddings(args) -> int:
    params = _load_ckpt(args.checkpoint)
    samples = _select(_load(args.manifest), args.split)
    out = _under(args.out_dir, args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    evalkit.export_embeddings(params, samples, out)
    print(f"wrote {len(samples)} embeddings to {out}")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "klcompare": cmd_klcompare,
    "export-embeddings": cmd_export_embeddings,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ArithmeticError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
