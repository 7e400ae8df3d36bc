"""Command-line interface: ``para <command> ...``.

Exit codes: 0 success, 1 verification failure or runtime failure (e.g. a
diverged training run), 2 usage or input errors. Errors are reported as a JSON
object on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from para.adapter import LoraAdapter, ParaAdapter, effective_q, param_count_lora, param_count_para, reduce_weight
from para.bundle import AdapterBundle, load_bundle, read_manifest, save_bundle
from para.combine import combine_lora_form, combine_lora_then_para, combine_para_then_lora, merge_para_sequential
from para.data import RunConfig, load_targets_csv
from para.errors import DivergedLoss, ParaError
from para.linalg import numerical_rank
from para.metrics import stability_probe
from para.model import ToyModel
from para.train import TrainConfig, finalize_adapters, train_para
from para.verify import SUITES, run_all

log = logging.getLogger("para")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _emit_error("UsageError", message)
        sys.exit(EXIT_USAGE)


def _emit_error(kind, message):
    print(json.dumps({"error": kind, "message": str(message)}), file=sys.stderr)


def _dump(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def _load_model(path) -> ToyModel:
    bundle = load_bundle(path)
    if bundle.kind != "base_model":
        raise UsageError(f"{path} holds a {bundle.kind} bundle, expected base_model")
    return bundle.to_model()


def _load_kind(path, kind) -> AdapterBundle:
    bundle = load_bundle(path)
    if bundle.kind != kind:
        raise UsageError(f"{path} holds a {bundle.kind} bundle, expected {kind}")
    return bundle


def _q_for(adapter: ParaAdapter, w0) -> np.ndarray:
    if adapter.d != w0.shape[0]:
        raise UsageError(f"{adapter.layer_name}: adapter has {adapter.d} rows, layer outputs {w0.shape[0]}")
    base_rank = adapter.base_rank if adapter.base_rank is not None else numerical_rank(w0)
    return effective_q(adapter, base_rank)


def _parse_gamma(text) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"invalid gamma {text!r}") from exc


def cmd_train(args) -> int:
    overrides = {
        "rank": args.rank,
        "gamma": args.gamma,
        "steps": args.steps,
        "learning_rate": args.lr,
        "ridge_eps": args.eps,
        "seed": args.seed,
        "layer_filter": args.layers,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    paths, base_cfg = {}, {}
    if args.config:
        run = RunConfig.load(args.config)
        paths = {"model": run.model, "targets": run.targets, "out": run.out}
        base_cfg = vars(run.train)
    for key in ("model", "targets", "out"):
        if getattr(args, key):
            paths[key] = Path(getattr(args, key))
    missing = [f"--{key}" for key in ("model", "targets", "out") if key not in paths]
    if missing:
        raise UsageError(f"missing {', '.join(missing)} (or pass --config)")
    cfg = TrainConfig(**{**base_cfg, **overrides})
    model_path, targets_path, out = paths["model"], paths["targets"], paths["out"]

    model = _load_model(model_path)
    targets = load_targets_csv(targets_path)
    trained, report = train_para(model, targets, cfg)
    final = finalize_adapters(trained)
    save_bundle(final, out)
    report_path = out.with_suffix(".report.json")
    report_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    _dump({
        "out": str(out),
        "report": str(report_path),
        "final_loss": report.loss_history[-1],
        "base_loss": report.base_loss,
        "final_effective_ranks": report.final_effective_ranks,
    })
    return EXIT_OK


def reduce_model(model: ToyModel, bundle: AdapterBundle) -> tuple[ToyModel, dict]:
    """Apply every non-identity adapter in ``bundle``; returns the model and ranks removed."""
    new, removed = {}, {}
    for a in sorted(bundle.entries, key=lambda e: e.layer_name):
        layer = model.layer(a.layer_name)
        q = _q_for(a, layer.w0)
        removed[a.layer_name] = q.shape[1]
        if q.shape[1]:
            new[a.layer_name] = reduce_weight(layer.w0, q)
    return model.with_weights(new), removed


def cmd_reduce(args) -> int:
    model = _load_model(args.model)
    adapter = _load_kind(args.adapter, "para")
    reduced, removed = reduce_model(model, adapter)
    save_bundle(AdapterBundle.from_model(reduced), args.out)
    _dump({"out": args.out, "rank_removed": removed})
    return EXIT_OK


def cmd_merge(args) -> int:
    base = _load_model(args.base)
    a = _load_kind(args.a, "para")
    b = _load_kind(args.b, "para")
    names = sorted(set(a.names()) | set(b.names()))
    new, removed = {}, {}
    for name in names:
        w0 = base.layer(name).w0
        empty = np.zeros((w0.shape[0], 0))
        q1 = _q_for(a.get(name), w0) if name in a.names() else empty
        q2 = _q_for(b.get(name), w0) if name in b.names() else empty
        combined = merge_para_sequential(w0, q1, q2)
        new[name] = combined.w
        removed[name] = combined.effective_rank_removed
    save_bundle(AdapterBundle.from_model(base.with_weights(new)), args.out)
    _dump({"out": args.out, "method": "sequential", "effective_rank_removed": removed})
    return EXIT_OK


def cmd_combine_lora(args) -> int:
    base = _load_model(args.base)
    para = _load_kind(args.para, "para")
    lora = _load_kind(args.lora, "lora")
    names = sorted(set(para.names()) | set(lora.names()))
    new, removed = {}, {}
    for name in names:
        w0 = base.layer(name).w0
        q = _q_for(para.get(name), w0) if name in para.names() else np.zeros((w0.shape[0], 0))
        if name in lora.names():
            la = lora.get(name)
            alpha = la.alpha if args.alpha is None else args.alpha
            la = LoraAdapter(la.layer_name, la.b_up, la.a_down, alpha)
        else:
            la = LoraAdapter(name, np.zeros((w0.shape[0], 1)), np.zeros((1, w0.shape[1])), 0.0)
        if args.order == "para-first":
            combined = combine_para_then_lora(w0, q, la)
        elif args.order == "lora-first":
            combined = combine_lora_then_para(w0, q, la)
        else:
            combined = combine_lora_form(w0, q, la, args.alpha1, args.alpha2)
        new[name] = combined.w
        removed[name] = combined.effective_rank_removed
    save_bundle(AdapterBundle.from_model(base.with_weights(new)), args.out)
    _dump({"out": args.out, "order": args.order, "effective_rank_removed": removed})
    return EXIT_OK


def cmd_verify(args) -> int:
    summary = run_all(args.trials, args.seed, skip=tuple(args.skip or ()))
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK if summary["all_passed"] else EXIT_FAILED


def cmd_diversity(args) -> int:
    model = _load_model(args.model)
    bundle = _load_kind(args.adapter, "para") if args.adapter else None
    if args.input:
        x = np.array([float(v) for v in args.input.split(",")])
    else:
        x = np.random.default_rng(args.seed).standard_normal(model.in_dim)
    report = stability_probe(model, bundle, x, args.samples, args.noise, args.seed)
    print(json.dumps(report.to_dict(), sort_keys=True))
    return EXIT_OK


def _layer_counts(kind, entry, base: ToyModel | None):
    if kind == "para":
        d, r = entry.d, entry.requested_rank
        k = entry.in_features
        if k is None and entry.conv_shape is not None:
            k = entry.conv_shape.in_features
        if k is None and base is not None:
            k = base.layer(entry.layer_name).shape[1]
        name = entry.layer_name
    elif kind == "lora":
        d, r, k = entry.b_up.shape[0], entry.rank, entry.a_down.shape[1]
        name = entry.layer_name
    else:
        return {"name": entry.name, "shape": list(entry.shape)}
    row = {"name": name, "d": d, "k": k, "rank": r, "para_params": param_count_para(d, r)}
    if k is not None:
        lora_params = param_count_lora(d, k, r)
        row.update(
            lora_params=lora_params,
            para_over_lora=row["para_params"] / lora_params,
            lora_over_para=lora_params / row["para_params"],
        )
    return row


def cmd_inspect(args) -> int:
    data = Path(args.file).read_bytes()
    manifest, _ = read_manifest(data)
    bundle = load_bundle(args.file)
    base = _load_model(args.base) if args.base else None
    layers = [_layer_counts(bundle.kind, e, base) for e in bundle.entries]
    totals = {}
    if bundle.kind in ("para", "lora") and all("lora_params" in row for row in layers):
        para_total = sum(row["para_params"] for row in layers)
        lora_total = sum(row["lora_params"] for row in layers)
        totals = {
            "para_params": para_total,
            "lora_params": lora_total,
            "para_over_lora": para_total / lora_total,
            "lora_over_para": lora_total / para_total,
        }
    _dump({"file": args.file, "manifest": manifest, "layers": layers, "totals": totals})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="para", description="Parameter rank reduction adapters on toy models.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train PaRa adapters against target pairs")
    t.add_argument("--config", help="JSON run config; flags override its values")
    t.add_argument("--model")
    t.add_argument("--targets")
    t.add_argument("--out")
    t.add_argument("--rank", type=int)
    t.add_argument("--gamma", type=_parse_gamma)
    t.add_argument("--steps", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--eps", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--layers", help="glob over layer names (default '*')")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("reduce", help="apply a PaRa bundle to a model")
    r.add_argument("--model", required=True)
    r.add_argument("--adapter", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_reduce)

    m = sub.add_parser("merge", help="compose two PaRa bundles sequentially on a base model")
    m.add_argument("--a", required=True)
    m.add_argument("--b", required=True)
    m.add_argument("--base", required=True)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_merge)

    c = sub.add_parser("combine-lora", help="combine a PaRa bundle with a LoRA bundle")
    c.add_argument("--para", required=True)
    c.add_argument("--lora", required=True)
    c.add_argument("--base", required=True)
    c.add_argument("--order", choices=("para-first", "lora-first", "lora-form"), default="para-first")
    c.add_argument("--alpha", type=float, help="LoRA scale (default: value stored in the bundle)")
    c.add_argument("--alpha1", type=float, default=1.0)
    c.add_argument("--alpha2", type=float, default=1.0)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_combine_lora)

    v = sub.add_parser("verify", help="run the randomized identity checks")
    v.add_argument("--trials", type=int, default=500)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--skip", action="append", choices=sorted(SUITES), help="suite to skip (repeatable)")
    v.set_defaults(func=cmd_verify)

    d = sub.add_parser("diversity", help="pairwise-SSIM stability probe")
    d.add_argument("--model", required=True)
    d.add_argument("--adapter")
    d.add_argument("--samples", type=int, default=16)
    d.add_argument("--noise", type=float, default=1.0)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--input", help="comma-separated base input (default: seeded Gaussian)")
    d.set_defaults(func=cmd_diversity)

    i = sub.add_parser("inspect", help="dump a bundle manifest and parameter counts")
    i.add_argument("file")
    i.add_argument("--base", help="base model, to resolve k for parameter counts")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except DivergedLoss as exc:
        _emit_error(type(exc).__name__, exc)
        return EXIT_FAILED
    except (UsageError, ParaError, ValueError, KeyError, OSError) as exc:
        _emit_error(type(exc).__name__, exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
