"""``jsqa`` command line.

Configuration is layered: built-in defaults, then a flat ``key = value`` file
(``--config``), then ``JSQA_*_ROOT`` environment variables for data roots, then
explicit flags. The fully resolved settings are written next to every output.

Exit codes: 0 ok, 1 usage/config error, 2 data error, 3 training/runtime error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, JsqaError

log = logging.getLogger("jsqa")

ENV_ROOTS = {
    "clean_root": "JSQA_CLEAN_ROOT",
    "noise_root": "JSQA_NOISE_ROOT",
    "audio_root": "JSQA_MOS_ROOT",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _read_config_file(path) -> dict[str, str]:
    text = Path(path).read_text()
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    try:
        cp.read_string("[jsqa]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"bad config file {path}: {exc}") from exc
    return {k.replace("-", "_"): v for k, v in cp["jsqa"].items()}


def _coerce(action: argparse.Action, value: str):
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction, argparse.BooleanOptionalAction)):
        v = value.strip().lower()
        if v in {"1", "true", "yes", "on"}:
            return True
        if v in {"0", "false", "no", "off"}:
            return False
        raise ConfigError(f"{action.dest}: expected a boolean, got {value!r}")
    conv = action.type or str
    try:
        if action.nargs not in (None, "?"):
            return [conv(v) for v in value.split()]
        return conv(value)
    except ValueError as exc:
        raise ConfigError(f"{action.dest}: {exc}") from exc


def _apply_layers(sub: argparse.ArgumentParser, file_values: dict[str, str]) -> None:
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in file_values.items():
        if key in actions and key != "config":
            defaults[key] = _coerce(actions[key], value)
    for dest, env in ENV_ROOTS.items():
        if dest in actions and os.environ.get(env):
            defaults[dest] = os.environ[env]
    sub.set_defaults(**defaults)


def _write_run_config(args, where: Path) -> None:
    where.parent.mkdir(parents=True, exist_ok=True)
    resolved = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k not in {"func"}}
    where.write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")


def _run_config_path(out: Path, command: str) -> Path:
    base = out if out.suffix == "" else out.parent
    return base / f"run_config.{command}.json"


def _require(args, *names):
    for n in names:
        if getattr(args, n, None) in (None, ""):
            raise ConfigError(f"--{n.replace('_', '-')} is required (flag, config file, or environment)")


def _encoder_config(args):
    from .model import EncoderConfig, alternating_strides, block_schedule

    if getattr(args, "num_layers", None) is not None:
        n = args.num_layers
        width = args.width or 64
        if n == 0:
            return EncoderConfig(num_layers=0, channel_schedule=(), stride_schedule=())
        return EncoderConfig(num_layers=n, channel_schedule=block_schedule(width, blocks=-(-n // 4))[:n],
                             stride_schedule=alternating_strides(n))
    if args.encoder == "narrow":
        return EncoderConfig.narrow()
    if args.encoder == "toy":
        return EncoderConfig.toy(args.width or 4)
    if args.width:
        return EncoderConfig(channel_schedule=block_schedule(args.width))
    return EncoderConfig()


def _load_corpora(args):
    from .corpus import Corpus

    _require(args, "clean_root", "noise_root")
    return Corpus.scan(args.clean_root), Corpus.scan(args.noise_root)


def _load_mos(args):
    from .audio import load_audio, normalize_clip
    from .corpus import read_mos_table

    _require(args, "mos_table")
    root = Path(args.audio_root) if args.audio_root else Path(args.mos_table).parent
    table = read_mos_table(args.mos_table)
    return [(s.path, normalize_clip(load_audio(root / s.path)), s.mos) for s in table]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_pairs(args) -> int:
    from .pairgen import PairGenConfig, build_manifest, cache_pairs_to_wav, delta_snr_summary

    cfg = PairGenConfig(tuple(args.snr_range), args.window_width, args.pairs, args.crop_len, args.seed)
    clean, noise = _load_corpora(args)
    manifest = build_manifest(clean, noise, cfg)
    out = Path(args.out)
    manifest.write(out)
    _write_run_config(args, _run_config_path(out, "gen-pairs"))
    if args.realize_dir:
        cache_pairs_to_wav(manifest, clean, noise, args.realize_dir, args.workers)
    s = delta_snr_summary(manifest)
    print(f"pairs={s['pairs']} delta_snr_mean={s['mean']:.4f} delta_snr_min={s['min']:.4f} "
          f"delta_snr_max={s['max']:.4f} manifest={out}")
    return 0


def cmd_train_svm(args) -> int:
    from .jnd import read_feature_file, train_svm

    _require(args, "features")
    feats, labels = read_feature_file(args.features, args.kind)
    model = train_svm(feats, labels, C=args.C, seed=args.seed, epochs=args.epochs)
    out = Path(args.out)
    model.save(out)
    _write_run_config(args, _run_config_path(out, "train-svm"))
    note = " degenerate=1" if model.degenerate else ""
    print(f"train_accuracy={model.train_accuracy:.4f} n={len(feats)} kind={model.feature_kind}{note} model={out}")
    return 0


def cmd_validate_jnd(args) -> int:
    from .jnd import CommandPesqScorer, SvmModel, validate_manifest
    from .pairgen import PairManifest

    _require(args, "svm", "manifest")
    model = SvmModel.load(args.svm)
    scorer = CommandPesqScorer(args.pesq_cmd) if args.pesq_cmd else None
    if "pesq" in model.feature_kind and scorer is None:
        raise ConfigError(f"SVM uses {model.feature_kind!r} features; pass --pesq-cmd")
    manifest = PairManifest.read(args.manifest)
    clean, noise = _load_corpora(args)
    report = validate_manifest(model, manifest, clean, noise, scorer, args.workers)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write(out)
    _write_run_config(args, _run_config_path(out, "validate-jnd"))
    print(report.summary_line())
    return 0


def cmd_pretrain(args) -> int:
    from .checkpoint import load_checkpoint, save_checkpoint
    from .pairgen import PairManifest
    from .training import CurveLog, PretrainConfig, pretrain

    _require(args, "manifest")
    cfg = PretrainConfig(batch_pairs=args.batch_pairs, learning_rate=args.lr, epochs=args.epochs,
                         max_steps=args.steps, projection_enabled=args.projection_head,
                         temperature=args.temperature, seed=args.seed,
                         checkpoint_every=args.checkpoint_every, workers=args.workers)
    manifest = PairManifest.read(args.manifest)
    clean, noise = _load_corpora(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    resume = load_checkpoint(args.resume) if args.resume else None
    ckpt, curve = pretrain(cfg, manifest, clean, noise, _encoder_config(args), resume, out_dir)
    curve_path = out_dir / "curve.tsv"
    if resume is not None and curve_path.exists():
        full = CurveLog.read(curve_path)
        full.records = [r for r in full.records if r.step <= resume.step]
        full.extend(curve)
        curve = full
    save_checkpoint(ckpt, out_dir / "pretrain.ckpt")
    curve.write(curve_path)
    _write_run_config(args, out_dir / "run_config.pretrain.json")
    last = curve.records[-1].loss if curve.records else float("nan")
    print(f"steps={ckpt.step} epochs={ckpt.epoch} final_loss={last:.6f} checkpoint={out_dir / 'pretrain.ckpt'}")
    return 0


def cmd_finetune(args) -> int:
    from .checkpoint import load_checkpoint, save_checkpoint
    from .corpus import MosSample, write_mos_table
    from .training import CurveLog, FinetuneConfig, finetune, select_checkpoint_epoch, split_dataset

    cfg = FinetuneConfig(batch_size=args.batch_size, learning_rate=args.lr, epochs=args.epochs,
                         max_steps=args.steps, freeze_encoder=args.freeze_encoder,
                         crop_len=args.crop_len, seed=args.seed)
    ckpt = None
    if args.checkpoint:
        src = Path(args.checkpoint)
        if src.is_dir():
            epoch = select_checkpoint_epoch(CurveLog.read(src / "curve.tsv"))
            src = src / f"pretrain_epoch{epoch:04d}.ckpt"
            if not src.exists():
                raise DataError(f"selected epoch {epoch} has no saved checkpoint ({src.name})")
            log.info("selected pretraining checkpoint %s", src)
        ckpt = load_checkpoint(src)
    elif not args.scratch:
        raise ConfigError("pass --checkpoint, or --scratch to train without pretraining")
    samples = _load_mos(args)
    train, val, test = split_dataset(samples, args.split, args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", train), ("val", val), ("test", test)):
        write_mos_table([MosSample(k, m) for k, _, m in sorted(part, key=lambda t: t[0])], out_dir / f"split_{name}.tsv")
    new_ckpt, curve = finetune(cfg, train, ckpt, _encoder_config(args))
    save_checkpoint(new_ckpt, out_dir / "finetune.ckpt")
    curve.write(out_dir / "curve.tsv")
    _write_run_config(args, out_dir / "run_config.finetune.json")
    last = curve.records[-1].loss if curve.records else float("nan")
    print(f"steps={new_ckpt.step} train={len(train)} val={len(val)} test={len(test)} final_mse={last:.6f} "
          f"checkpoint={out_dir / 'finetune.ckpt'}")
    return 0


def cmd_evaluate(args) -> int:
    from .checkpoint import load_checkpoint
    from .metrics import evaluate_model
    from .training import predict_mos

    samples = _load_mos(args)
    if args.stub == "perfect":
        by_clip = {id(c): m for _, c, m in samples}
        predict = lambda clip: by_clip[id(clip)]  # noqa: E731
        ckpt_id = "stub:perfect"
    elif args.stub == "constant":
        predict = lambda clip: 3.0  # noqa: E731
        ckpt_id = "stub:constant"
    else:
        _require(args, "checkpoint")
        model = load_checkpoint(args.checkpoint).build_model()
        predict = lambda clip: predict_mos(model, clip)  # noqa: E731
        ckpt_id = str(args.checkpoint)
    report = evaluate_model(predict, samples, args.dataset_id or str(args.mos_table), ckpt_id)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write(out)
    _write_run_config(args, _run_config_path(out, "evaluate"))
    fmt = lambda v: "undefined" if v is None else f"{v:.4f}"  # noqa: E731
    print("PCC\tSRCC\tRMSE\tMAE")
    print("\t".join(fmt(getattr(report, k)) for k in ("pcc", "srcc", "rmse", "mae")))
    print(report.summary_line())
    for k, msg in report.errors.items():
        print(f"warning: {k.upper()} {msg}", file=sys.stderr)
    return 0


def cmd_export_figures(args) -> int:
    from .pairgen import PairManifest
    from .training import CurveLog, smooth

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if not args.manifest and not args.curve:
        raise ConfigError("nothing to export: pass --manifest and/or --curve")
    if args.manifest:
        manifest = PairManifest.read(args.manifest)
        width = manifest.config.window_width_db
        d = manifest.abs_delta_snr()
        counts, edges = np.histogram(d, bins=args.bins, range=(0.0, width))
        density = counts / max(1, d.size) / (edges[1] - edges[0])
        lines = ["bin_lo\tbin_hi\tcount\tdensity"]
        lines += [f"{lo:.6f}\t{hi:.6f}\t{c}\t{p:.6f}" for lo, hi, c, p in zip(edges[:-1], edges[1:], counts, density)]
        path = out_dir / "delta_snr_hist.tsv"
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
        print(f"delta_snr_mean={d.mean():.4f} pairs={d.size}")
    curves = []
    if args.curve:
        labels = args.label or []
        if labels and len(labels) != len(args.curve):
            raise ConfigError("--label must be given once per --curve")
        for i, p in enumerate(args.curve):
            curves.append((labels[i] if labels else Path(p).parent.name or f"run{i}", CurveLog.read(p)))
        n = max(len(c) for _, c in curves)
        steps = {}
        for _, c in curves:
            for r in c.records:
                steps.setdefault(r.step, None)
        header = ["step"] + [name for name, _ in curves]
        if args.smooth > 1:
            header += [f"{name}_smooth{args.smooth}" for name, _ in curves]
        cols = []
        for _, c in curves:
            cols.append({r.step: r.loss for r in c.records})
        smoothed = []
        for _, c in curves:
            s = smooth(c.losses, args.smooth) if args.smooth > 1 else np.array([])
            offset = len(c) - len(s)
            smoothed.append({c.records[offset + i].step: v for i, v in enumerate(s)})
        lines = ["\t".join(header)]
        for step in sorted(steps):
            row = [str(step)] + [repr(col[step]) if step in col else "" for col in cols]
            if args.smooth > 1:
                row += [repr(float(sm[step])) if step in sm else "" for sm in smoothed]
            lines.append("\t".join(row))
        path = out_dir / "curves.tsv"
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
        print(f"curves={len(curves)} records={n}")
    if args.render:
        _render(out_dir, args, curves)
    _write_run_config(args, out_dir / "run_config.export-figures.json")
    for p in written:
        print(f"wrote {p}")
    return 0


def _render(out_dir: Path, args, curves) -> None:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:  # pragma: no cover
        raise ConfigError("--render needs matplotlib") from exc
    from .pairgen import PairManifest

    if args.manifest:
        d = PairManifest.read(args.manifest).abs_delta_snr()
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.hist(d, bins=args.bins, range=(0, 6))
        ax.set_xlabel("|ΔSNR| (dB)")
        ax.set_ylabel("pairs")
        fig.tight_layout()
        fig.savefig(out_dir / "delta_snr_hist.png", dpi=120)
        plt.close(fig)
    if curves:
        from .training import smooth

        fig, ax = plt.subplots(figsize=(5, 3))
        for name, c in curves:
            ax.plot([r.step for r in c.records], c.losses, alpha=0.3)
            s = smooth(c.losses, args.smooth)
            ax.plot([r.step for r in c.records][len(c) - len(s):], s, label=name)
        ax.set_xlabel("step")
        ax.set_ylabel("contrastive loss")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out_dir / "curves.png", dpi=120)
        plt.close(fig)


def cmd_inspect(args) -> int:
    from .checkpoint import load_checkpoint
    from .model import ModelConfig, count_parameters, init_params, layer_table

    if args.checkpoint:
        model = load_checkpoint(args.checkpoint).build_model()
        enc = model.cfg.encoder
    else:
        enc = _encoder_config(args)
        if enc.num_layers == 0:
            raise ConfigError("encoder has no layers; nothing to inspect")
        model = init_params(ModelConfig.for_encoder(enc, args.projection_head), seed=0)
    print(f"{'layer':>5} {'in':>5} {'out':>5} {'stride':>6} {'frames':>7} {'params':>10}")
    for row in layer_table(enc, args.input_len):
        print(f"{row['layer']:>5} {row['in']:>5} {row['out']:>5} {row['stride']:>6} {row['frames']:>7} {row['params']:>10}")
    enc_n = count_parameters(model.encoder)
    proj_n = count_parameters(model.projection) if model.projection is not None else 0
    reg_n = count_parameters(model.regressor)
    print(f"embedding_dim={enc.embedding_dim} contrastive_dim={enc.half_dim if model.projection is None else model.cfg.projection.layer_dims[-1]}")
    print(f"receptive_field={enc.receptive_field()} samples ({enc.receptive_field() / 16000:.3f} s at 16 kHz)")
    print(f"params encoder={enc_n} projection={proj_n} regressor={reg_n} total={enc_n + proj_n + reg_n}")
    devs = enc.reference_deviations()
    if devs:
        print("note: differs from the reference architecture (~26M parameters reported): " + "; ".join(devs))
    return 0


def cmd_make_toy_data(args) -> int:
    from .synth import write_toy_corpora, write_toy_mos_set

    out = Path(args.out_dir)
    clean, noise = write_toy_corpora(out, args.clean, args.noise, args.seed, args.clean_seconds)
    table = write_toy_mos_set(out / "mos", args.mos, args.seed)
    print(f"clean={clean} noise={noise} mos_table={table}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_encoder_flags(p) -> None:
    p.add_argument("--encoder", choices=["default", "narrow", "toy"], default="default",
                   help="encoder preset (default: 64-512 channels)")
    p.add_argument("--width", type=int, default=None, help="channels in the first block (doubles every 4 layers)")
    p.add_argument("--num-layers", type=int, default=None, help=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="jsqa", description="JND-pair contrastive pretraining and MOS prediction")
    parser.add_argument("--log-level", default="WARNING")
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def sub(name, func, help_):
        p = subs.add_parser(name, help=help_)
        p.add_argument("--config", default=None, help="flat key = value file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--workers", type=int, default=1)
        p.set_defaults(func=func)
        return p

    p = sub("gen-pairs", cmd_gen_pairs, "build a JND pair manifest")
    p.add_argument("--clean-root")
    p.add_argument("--noise-root")
    p.add_argument("--pairs", type=int, default=8)
    p.add_argument("--snr-range", type=float, nargs=2, default=[-3.0, 9.0], metavar=("LO", "HI"))
    p.add_argument("--window-width", type=float, default=6.0)
    p.add_argument("--crop-len", type=int, default=32000)
    p.add_argument("--out", default="pairs.jsonl")
    p.add_argument("--realize-dir", default=None, help="also write every pair as WAV here")

    p = sub("train-svm", cmd_train_svm, "fit the JND classifier on a labelled feature file")
    p.add_argument("--features")
    p.add_argument("--kind", choices=["pesq", "si_sdr", "both"], default=None)
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--out", default="svm.json")

    p = sub("validate-jnd", cmd_validate_jnd, "check generated pairs with a trained SVM")
    p.add_argument("--svm")
    p.add_argument("--manifest")
    p.add_argument("--clean-root")
    p.add_argument("--noise-root")
    p.add_argument("--pesq-cmd", default=None, help="command template with {ref} and {deg}")
    p.add_argument("--out", default="jnd_report.tsv")

    p = sub("pretrain", cmd_pretrain, "contrastive pretraining on a pair manifest")
    p.add_argument("--manifest")
    p.add_argument("--clean-root")
    p.add_argument("--noise-root")
    p.add_argument("--out-dir", default="pretrain_out")
    p.add_argument("--epochs", type=int, default=45)
    p.add_argument("--steps", type=int, default=None, help="stop after this many optimiser steps")
    p.add_argument("--batch-pairs", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--projection-head", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--checkpoint-every", type=int, default=1, help="save every N epochs (0: final only)")
    p.add_argument("--resume", default=None)
    _add_encoder_flags(p)

    p = sub("finetune", cmd_finetune, "fine-tune for MOS prediction")
    p.add_argument("--checkpoint", default=None, help="pretraining checkpoint, or a pretrain output dir to auto-select")
    p.add_argument("--scratch", action="store_true", help="no pretraining")
    p.add_argument("--mos-table")
    p.add_argument("--audio-root", default=None)
    p.add_argument("--split", type=float, nargs=3, default=[0.8, 0.1, 0.1])
    p.add_argument("--out-dir", default="finetune_out")
    p.add_argument("--epochs", type=int, default=250)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--crop-len", type=int, default=32000)
    p.add_argument("--freeze-encoder", action="store_true")
    _add_encoder_flags(p)

    p = sub("evaluate", cmd_evaluate, "PCC / SRCC / RMSE / MAE on a labelled set")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--mos-table")
    p.add_argument("--audio-root", default=None)
    p.add_argument("--dataset-id", default=None)
    p.add_argument("--stub", choices=["perfect", "constant"], default=None, help="replace the model with a stub predictor")
    p.add_argument("--out", default="eval_report.json")

    p = sub("export-figures", cmd_export_figures, "write histogram / learning-curve data")
    p.add_argument("--manifest", default=None)
    p.add_argument("--curve", action="append", default=None)
    p.add_argument("--label", action="append", default=None)
    p.add_argument("--bins", type=int, default=30)
    p.add_argument("--smooth", type=int, default=20)
    p.add_argument("--render", action="store_true", help="also draw PNGs (needs matplotlib)")
    p.add_argument("--out-dir", default="figures")

    p = sub("inspect", cmd_inspect, "layer table, parameter count, receptive field")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--projection-head", action=argparse.BooleanOptionalAction, default=False)
    p.add_argument("--input-len", type=int, default=32000)
    _add_encoder_flags(p)

    p = sub("make-toy-data", cmd_make_toy_data, "write small synthetic corpora and a MOS table")
    p.add_argument("--out-dir", default="toy_data")
    p.add_argument("--clean", type=int, default=16)
    p.add_argument("--noise", type=int, default=5)
    p.add_argument("--mos", type=int, default=24)
    p.add_argument("--clean-seconds", type=float, default=1.5)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        pre, _ = parser.parse_known_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    sub = parser._subparsers._group_actions[0].choices[pre.command]
    try:
        _apply_layers(sub, _read_config_file(pre.config) if pre.config else {})
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:
            return int(exc.code or 0)
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except JsqaError as exc:
        print(f"jsqa {pre.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"jsqa {pre.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.exception("unexpected failure")
        print(f"jsqa {pre.command}: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
