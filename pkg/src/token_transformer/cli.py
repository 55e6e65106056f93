"""Command-line entry point (``tt``).

Exit codes: 0 success, 1 contract or configuration error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time

import numpy as np

from .analysis import count_flops, count_params
from .attention import ForwardContext, export_attention
from .checkpoint import load_checkpoint, save_checkpoint
from .config import resolve
from .data import folder_dataset, load_image, synth_dataset
from .errors import ContractError, TTError
from .gradcheck import SUITE, run_suite
from .model import ablation_variant, ablation_variants, build
from .tensor import no_grad
from .train import evaluate, train

log = logging.getLogger("token_transformer")

GRADCHECK_TOL = 1e-4


def _emit_kv(rows: list, fmt: str, out) -> None:
    """Two-column output: aligned text or ``key,value`` CSV."""
    if fmt == "csv":
        out.write("key,value\n")
        out.writelines(f"{k},{v}\n" for k, v in rows)
    else:
        width = max(len(k) for k, _ in rows)
        out.writelines(f"{k:<{width}}  {v}\n" for k, v in rows)


def cmd_params(args, out) -> int:
    cfg = resolve(args.config)
    report = count_params(cfg)
    out.write(report.to_csv() if args.format == "csv" else report.to_text())
    return 0


def cmd_flops(args, out) -> int:
    cfg = resolve(args.config)
    report = count_flops(cfg, args.input, args.batch)
    out.write(report.to_csv() if args.format == "csv" else report.to_text())
    return 0


def cmd_forward(args, out) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    image = load_image(args.image, model.cfg.input_size)
    with no_grad():
        logits = model(image[None]).data[0].astype(np.float64)
    probs = np.exp(logits - logits.max())
    probs /= probs.sum()
    if args.format == "csv":
        out.write("class,logit,prob\n")
        out.writelines(f"{k},{logits[k]:.9g},{probs[k]:.9g}\n" for k in range(len(logits)))
    else:
        out.write(f"predicted class: {int(logits.argmax())}\n")
        for k in np.argsort(-logits)[: args.top]:
            out.write(f"  class {k:>4d}  logit {logits[k]: .5f}  p {probs[k]:.4f}\n")
    return 0


def _load_dataset(args, input_size: int):
    if args.data == "synth":
        return synth_dataset(args.samples, args.classes, input_size, args.seed)
    return folder_dataset(args.data, input_size)


def cmd_train(args, out) -> int:
    cfg = resolve(args.config)
    ds = _load_dataset(args, cfg.input_size)
    if ds.num_classes != cfg.num_classes:
        cfg = cfg.with_(num_classes=ds.num_classes).validate()
        log.info("classifier head resized to %d classes", ds.num_classes)
    model = build(cfg, seed=args.seed)
    start = time.perf_counter()
    history = train(model, ds, steps=args.steps, lr=args.lr, weight_decay=args.weight_decay,
                    batch_size=args.batch_size, seed=args.seed, log_path=args.log, checkpoint_path=args.out)
    loss, acc = evaluate(model, ds)
    rows = [("steps", len(history)), ("final_batch_loss", f"{history[-1].loss:.6f}"),
            ("train_loss", f"{loss:.6f}"), ("train_acc", f"{acc:.6f}"),
            ("seconds", f"{time.perf_counter() - start:.1f}")]
    if args.out:
        rows.append(("checkpoint", args.out))
    _emit_kv(rows, args.format, out)
    return 0


def cmd_gradcheck(args, out) -> int:
    modules = args.module or None
    results = run_suite(modules, seed=args.seed)
    worst = max(r.max_rel_error for r in results)
    if args.format == "csv":
        out.write("check,max_rel_error,probes\n")
        out.writelines(f"{r.name},{r.max_rel_error:.3e},{r.probes}\n" for r in results)
        out.write(f"max,{worst:.3e},{sum(r.probes for r in results)}\n")
    else:
        width = max(len(r.name) for r in results)
        for r in results:
            flag = "ok" if r.passed(GRADCHECK_TOL) else "FAIL"
            out.write(f"{r.name:<{width}}  {r.max_rel_error:.3e}  ({r.probes} probes)  {flag}\n")
        out.write(f"max relative error: {worst:.3e} (tolerance {GRADCHECK_TOL:g})\n")
    return 0 if worst < GRADCHECK_TOL else 1


def cmd_ablate(args, out) -> int:
    base = resolve(args.base)
    if args.variant == "list":
        names = list(ablation_variants(base))
        out.writelines(f"{n}\n" for n in names)
        return 0
    cfg = ablation_variant(base, args.variant)
    rows = [("variant", args.variant), ("long_range", cfg.long_range), ("use_fim", cfg.use_fim),
            ("ffn_cls", cfg.ffn_cls), ("ffn_embed", cfg.ffn_embed),
            ("params", count_params(cfg).total_params), ("flops", count_flops(cfg).total_flops)]
    if args.train_steps:
        ds = synth_dataset(args.samples, args.classes, cfg.input_size, args.seed)
        cfg = cfg.with_(num_classes=ds.num_classes)
        model = build(cfg, seed=args.seed)
        train(model, ds, steps=args.train_steps, lr=args.lr, batch_size=args.batch_size, seed=args.seed)
        loss, acc = evaluate(model, ds)
        rows += [("train_steps", args.train_steps), ("train_loss", f"{loss:.6f}"), ("train_acc", f"{acc:.6f}")]
    _emit_kv(rows, args.format, out)
    return 0


def cmd_dump_attn(args, out) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    cfg = model.cfg
    if cfg.long_range != "cls":
        raise ContractError("dump-attn needs a model with CLS attention (long_range='cls')")
    stage = args.stage % len(cfg.stages)
    block = args.block % cfg.stages[stage].depth
    image = load_image(args.image, cfg.input_size)
    ctx = ForwardContext(diagnostics=True, capture_at=(stage, block))
    with no_grad():
        model(image[None], ctx)
    paths = export_attention(ctx.maps, args.out)
    if args.format == "csv":
        out.write("file\n")
    out.writelines(f"{p}\n" for p in paths)
    return 0


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentParser(add_help=False)
    fmt.add_argument("--format", choices=("text", "csv"), default="text", help="output format")
    fmt.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="tt", description="Token Transformer reference tools")
    sp = p.add_subparsers(dest="command", required=True)

    c = sp.add_parser("params", parents=[fmt], help="exact parameter count per layer")
    c.add_argument("config", help="preset name (tt-t, tt-s, tt-b, tt-nano) or JSON config path")
    c.set_defaults(func=cmd_params)

    c = sp.add_parser("flops", parents=[fmt], help="analytic FLOPs per layer")
    c.add_argument("config")
    c.add_argument("--input", type=int, default=None, help="input side length (default: config's)")
    c.add_argument("--batch", type=int, default=1)
    c.set_defaults(func=cmd_flops)

    c = sp.add_parser("forward", parents=[fmt], help="classify one PGM/PPM image")
    c.add_argument("checkpoint")
    c.add_argument("image")
    c.add_argument("--top", type=int, default=5)
    c.set_defaults(func=cmd_forward)

    c = sp.add_parser("train", parents=[fmt], help="toy training run")
    c.add_argument("config")
    c.add_argument("--data", default="synth", help="'synth' or a folder of class sub-directories")
    c.add_argument("--steps", type=int, default=200)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--lr", type=float, default=1e-3)
    c.add_argument("--weight-decay", type=float, default=0.05)
    c.add_argument("--batch-size", type=int, default=64)
    c.add_argument("--samples", type=int, default=512, help="synthetic dataset size")
    c.add_argument("--classes", type=int, default=3, help="synthetic dataset classes")
    c.add_argument("--log", default=None, help="metrics CSV path (step,loss,acc,lr)")
    c.add_argument("--out", default=None, help="checkpoint path")
    c.set_defaults(func=cmd_train)

    c = sp.add_parser("gradcheck", parents=[fmt], help="finite-difference gradient suite")
    c.add_argument("--module", action="append", choices=list(SUITE), help="restrict to a group (repeatable)")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)

    c = sp.add_parser("ablate", parents=[fmt], help="describe (and optionally train) an ablation variant")
    c.add_argument("variant", help="e.g. shift+no-fim+ffn/scffn, or 'list'")
    c.add_argument("--base", default="tt-nano")
    c.add_argument("--train-steps", type=int, default=0)
    c.add_argument("--lr", type=float, default=1e-3)
    c.add_argument("--batch-size", type=int, default=64)
    c.add_argument("--samples", type=int, default=512)
    c.add_argument("--classes", type=int, default=3)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_ablate)

    c = sp.add_parser("dump-attn", parents=[fmt], help="export CLS attention maps for one image")
    c.add_argument("checkpoint")
    c.add_argument("image")
    c.add_argument("--out", required=True, help="output directory")
    c.add_argument("--stage", type=int, default=-1)
    c.add_argument("--block", type=int, default=-1)
    c.set_defaults(func=cmd_dump_attn)
    return p


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, out)
    except TTError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
