"""Command-line interface.

Subcommands: synth, keygen, protect, train, evaluate, quality, attack,
run, compare.  Report-producing commands render PNG figures next to
their JSON/CSV outputs unless --no-figures is given.  PKIT_THREADS caps
clip-level parallelism.  For `run`, option precedence is
flags > spec file > built-in defaults.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import audio_io, blur, learner, pipeline, plots, quality
from .keyring import MasterKey, ProtectionConfig, derive_all, export_keyring, import_keyring


def _add_synth(sub):
    p = sub.add_parser("synth", help="generate a synthetic tone dataset")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--duration", type=float, default=1.0)
    p.add_argument("--rate", type=int, default=8000)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)

    def cmd(args):
        train, test = audio_io.synth_dataset(
            args.classes, args.per_class, args.duration, args.rate, args.seed, args.out
        )
        print(f"wrote {len(train)} train / {len(test)} test clips to {args.out}")

    p.set_defaults(func=cmd)


def _add_keygen(sub):
    p = sub.add_parser("keygen", help="create a keyring file")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--b", type=float, required=True, help="blur factor (tap upper bound)")
    p.add_argument("--k", type=int, default=80)
    p.add_argument("--p", type=int, default=240)
    p.add_argument("--min-len", type=int, default=0)
    p.add_argument("--mode", choices=("positional", "full_sample"), default="positional")
    p.add_argument("--master-hex", default=None, help="64 hex chars; random if omitted")
    p.add_argument("--out", required=True)

    def cmd(args):
        master = (
            MasterKey.from_hex(args.master_hex)
            if args.master_hex
            else MasterKey.generate()
        )
        cfg = ProtectionConfig(
            args.classes, b=args.b, k=args.k, p=args.p, min_len=args.min_len, mode=args.mode
        )
        export_keyring(master, cfg, args.out)
        print(f"keyring written to {args.out} (fingerprint {master.fingerprint()})")

    p.set_defaults(func=cmd)


def _add_protect(sub):
    p = sub.add_parser("protect", help="apply class-keyed blurs to a dataset")
    p.add_argument("--manifest", required=True, help="train manifest JSON")
    p.add_argument("--keyring", required=True)
    p.add_argument("--mode", choices=("positional", "full"), default=None,
                   help="override the keyring's blur mode")
    p.add_argument("--out", required=True)
    p.add_argument("--pollute-test", action="store_true",
                   help="also blur the sibling test split")
    p.add_argument("--normalize-taps", action="store_true",
                   help="rescale each class's taps to sum to 1")

    def cmd(args):
        master, cfg = import_keyring(args.keyring)
        if args.mode is not None:
            mode = "positional" if args.mode == "positional" else "full_sample"
            cfg = ProtectionConfig(
                cfg.class_count, b=cfg.b, k=cfg.k, p=cfg.p, min_len=cfg.min_len, mode=mode
            )
        train = audio_io.load_manifest(args.manifest)
        sibling = Path(args.manifest).parent / "test.json"
        test = audio_io.load_manifest(sibling) if sibling.exists() else None
        new_train, new_test = blur.protect_dataset(
            train, test, master, cfg, args.out,
            pollute_test=args.pollute_test, normalize_taps=args.normalize_taps,
        )
        msg = f"protected {len(new_train)} train clips"
        if new_test is not None:
            state = "blurred" if args.pollute_test else "untouched"
            msg += f", test split {state} ({len(new_test)} clips)"
        print(msg + f" -> {args.out}")

    p.set_defaults(func=cmd)


def _add_train(sub):
    p = sub.add_parser("train", help="train a toy classifier on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", choices=("conv", "mlp"), default="conv")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-figures", action="store_true")

    def cmd(args):
        manifest = audio_io.load_manifest(args.manifest)
        cfg = learner.TrainConfig(args.epochs, args.batch_size, args.lr, args.seed)
        model, history = learner.train(args.model, manifest, cfg)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        learner.save_checkpoint(model, out / "checkpoint.tnn")
        learner.save_history(history, out / "history.csv")
        if not args.no_figures:
            plots.training_curve(history, out / "training_curve.png",
                                 title=f"{args.model} on {Path(args.manifest).name}")
        last = history[-1]
        print(f"final epoch: loss={last.loss:.4f} train_acc={last.accuracy:.4f}")
        print(f"checkpoint and history in {out}")

    p.set_defaults(func=cmd)


def _add_evaluate(sub):
    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None, help="optional output directory")
    p.add_argument("--no-figures", action="store_true")

    def cmd(args):
        model = learner.load_checkpoint(args.checkpoint)
        manifest = audio_io.load_manifest(args.manifest)
        accuracy, confusion = learner.evaluate(model, manifest)
        print(f"accuracy: {accuracy:.4f} over {len(manifest)} clips")
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            with open(out / "evaluation.json", "w", encoding="utf-8") as fh:
                json.dump({"accuracy": accuracy, "clips": len(manifest)}, fh, indent=2)
                fh.write("\n")
            with open(out / "confusion.csv", "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow([""] + [f"pred_{i}" for i in range(model.class_count)])
                for i, row in enumerate(confusion):
                    writer.writerow([f"true_{i}"] + list(map(int, row)))
            if not args.no_figures:
                plots.confusion_heatmap(confusion, out / "confusion_matrix.png")

    p.set_defaults(func=cmd)


def _add_quality(sub):
    p = sub.add_parser("quality", help="compare a protected split to its original")
    p.add_argument("--clean-manifest", required=True)
    p.add_argument("--protected-manifest", required=True)
    p.add_argument("--log", default=None, help="protection log (for clamp counts)")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--no-figures", action="store_true")

    def cmd(args):
        clean = audio_io.load_manifest(args.clean_manifest)
        protected = audio_io.load_manifest(args.protected_manifest)
        report = quality.dataset_quality_report(
            clean, protected, protection_log=Path(args.log) if args.log else None
        )
        quality.save_quality_report(report, args.out)
        if not args.no_figures:
            fig_dir = Path(args.out).parent
            plots.snr_histogram(
                list(report["snr_per_clip"].values()), fig_dir / "snr_hist.png"
            )
        snr = report["snr"]
        print(f"frechet_mfcc={report['frechet_mfcc']:.6g}  "
              f"snr median={snr['median']:.2f} dB  report -> {args.out}")

    p.set_defaults(func=cmd)


def _add_attack(sub):
    p = sub.add_parser("attack", help="simulate an attack on a protected scheme")
    p.add_argument("--kind", choices=("mixed", "known-noise", "random-blur"), required=True)
    p.add_argument("--manifest", required=True, help="manifest of clips to transform")
    p.add_argument("--keyring", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--amplitude", type=float, default=None,
                   help="noise amplitude (required for known-noise)")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--permutation", default=None,
                   help="comma-separated class map for mixed (default cyclic)")

    def cmd(args):
        master, cfg = import_keyring(args.keyring)
        manifest = audio_io.load_manifest(args.manifest)
        if args.kind == "mixed":
            n = cfg.class_count
            perm = (
                [int(x) for x in args.permutation.split(",")]
                if args.permutation
                else [(c + 1) % n for c in range(n)]
            )
            result = blur.apply_mixed_keys(manifest, master, cfg, perm, args.out)
        elif args.kind == "known-noise":
            if args.amplitude is None:
                p.error("--amplitude is required for --kind known-noise")
            positions = {pr.class_id: pr.position for pr in derive_all(master, cfg)}
            result = blur.attack_known_location_noise(
                manifest, positions, cfg.p, args.amplitude, args.seed, args.out
            )
        else:
            result = blur.attack_random_blur(manifest, cfg, args.seed, args.out)
        print(f"attacked dataset ({args.kind}): {len(result)} clips -> {args.out}")

    p.set_defaults(func=cmd)


def _add_run(sub):
    p = sub.add_parser("run", help="run a full experiment from a spec file")
    p.add_argument("--spec", default=None, help="TOML or JSON experiment spec")
    p.add_argument("--out", required=True)
    p.add_argument("--kind", default=None, choices=pipeline.EXPERIMENT_KINDS)
    p.add_argument("--model", default=None, choices=("conv", "mlp"))
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--b", type=float, default=None)
    p.add_argument("--seed", type=int, default=None, help="training seed")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted spec override, e.g. dataset.per_class=40")
    p.add_argument("--no-store-key", action="store_true",
                   help="do not persist the master key in the run directory")
    p.add_argument("--no-figures", action="store_true")

    def cmd(args):
        doc = {}
        if args.spec:
            doc = pipeline.load_spec(args.spec).to_dict()
        for assignment in args.set:
            _apply_override(doc, assignment)
        for key, value in (
            ("kind", args.kind),
            ("train.model", args.model),
            ("train.epochs", args.epochs),
            ("protection.b", args.b),
            ("train.seed", args.seed),
        ):
            if value is not None:
                _set_dotted(doc, key, value)
        if "kind" not in doc:
            p.error("experiment kind missing: pass --kind or a spec file")
        spec = pipeline.ExperimentSpec.from_dict(doc)
        summary = pipeline.run_experiment(
            spec, args.out, store_key=not args.no_store_key,
            figures=not args.no_figures,
        )
        printable = {k: v for k, v in summary.items() if k != "config"}
        print(json.dumps(printable, indent=2, sort_keys=True))
        print(f"run directory: {args.out}")

    p.set_defaults(func=cmd)


def _set_dotted(doc: dict, key: str, value):
    node = doc
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def _apply_override(doc: dict, assignment: str):
    if "=" not in assignment:
        raise SystemExit(f"bad --set {assignment!r}; expected KEY=VALUE")
    key, value = assignment.split("=", 1)
    try:
        value = json.loads(value)
    except json.JSONDecodeError:
        pass  # keep as string
    _set_dotted(doc, key, value)


def _add_compare(sub):
    p = sub.add_parser("compare", help="diff two run directories")
    p.add_argument("run_a")
    p.add_argument("run_b")
    p.add_argument("--csv", default=None, help="also write the table as CSV")

    def cmd(args):
        diff = pipeline.compare_runs(args.run_a, args.run_b)
        print(pipeline.format_comparison(diff))
        if args.csv:
            with open(args.csv, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["metric", "run_a", "run_b", "delta"])
                for key, row in diff["metrics"].items():
                    writer.writerow([key, row["a"], row["b"], row["delta"]])

    p.set_defaults(func=cmd)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pkit",
        description="Keyed positional-blur protection for labeled audio datasets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for add in (_add_synth, _add_keygen, _add_protect, _add_train, _add_evaluate,
                _add_quality, _add_attack, _add_run, _add_compare):
        add(sub)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except Exception as exc:  # surface clean one-line errors to the shell
        if isinstance(exc, SystemExit):
            raise
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
