"""Command-line front end.

Every run writes ``manifest.txt`` into ``--out-dir``: one ``key=value``
line per resolved option plus the command, seed and package version.
Passing that file back through ``--config`` replays the run; flags given
on the command line still win.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .ablation import ABLATION_HEADER, rows_csv, run_ablation
from .codec import MODES, STATS_HEADER, compress
from .evaluation import GT_METRICS, METRICS, EvalItem, calibrate_alpha, evaluate, inject_noise
from .imageio import JndMap, load_bundle, load_image, save_bundle, save_image
from .model import PRIORS, HmJndNet, ModelConfig
from .params import TensorFormatError, read_tensor, write_tensor
from .synth import synth_bundle
from .train import TrainConfig, train

log = logging.getLogger("hmjnd")
COMMANDS = ("synth", "train", "predict", "evaluate", "inject", "compress", "ablate")
GLOBAL_KEYS = ("config", "seed", "out_dir", "command", "version", "verbose")


class UsageError(Exception):
    pass


def read_config(path) -> dict[str, str]:
    """``key=value`` lines; blank lines and ``#`` comments are skipped."""
    items = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        items[key.strip()] = value.strip()
    return items


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 32x32, got {text!r}") from None
    return w, h


def _modalities(text: str) -> tuple[str, ...]:
    mods = tuple(m for m in text.split(",") if m and m != "none")
    bad = set(mods) - set(PRIORS)
    if bad:
        raise argparse.ArgumentTypeError(f"unknown modalities {sorted(bad)}")
    return mods


def _flag(text) -> bool:
    if isinstance(text, bool):
        return text
    return str(text).lower() in ("1", "true", "yes", "on")


def _model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--channels", type=int, default=16)
    g.add_argument("--window", type=int, default=8)
    g.add_argument("--heads", type=int, default=2)
    g.add_argument("--blocks", type=int, default=3)
    g.add_argument("--se-reduction", type=int, default=4)
    g.add_argument("--modalities", type=_modalities, default=PRIORS,
                   help="comma list of saliency,depth,segmentation (or none)")
    g.add_argument("--substitute", choices=PRIORS, default="saliency",
                   help="plane that stands in for disabled modalities")
    g.add_argument("--hmpf", type=_flag, default=True, metavar="BOOL")
    g.add_argument("--hmfa", type=_flag, default=True, metavar="BOOL")


def _train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int, default=50)
    g.add_argument("--lr", type=float, default=1e-4)
    g.add_argument("--batch-size", type=int, default=4)
    g.add_argument("--patch", type=int, default=32)
    g.add_argument("--lambda-fea", type=float, default=1e-4)
    g.add_argument("--lambda-pix", type=float, default=1.0)


def _global_flags(p: argparse.ArgumentParser, defaults: bool) -> None:
    # subcommands repeat the global flags without defaults so that a flag
    # given before the command is not reset by the subparser
    d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
    p.add_argument("--config", default=d(None), help="key=value file, e.g. a saved manifest.txt")
    p.add_argument("--seed", type=int, default=d(0))
    p.add_argument("--out-dir", default=d("out"))
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, defaults=False)
    parser = argparse.ArgumentParser(prog="hmjnd", description="Multimodal JND forecasting toolkit.")
    _global_flags(parser, defaults=True)
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("synth", parents=[common], help="write synthetic bundles")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--size", type=_size, default=(32, 32))

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--data", required=True, help="directory of bundles")
    _model_flags(p)
    _train_flags(p)

    p = sub.add_parser("predict", parents=[common], help="forecast the JND map of a bundle")
    p.add_argument("--model", required=True)
    p.add_argument("--bundle", required=True)

    p = sub.add_parser("evaluate", parents=[common], help="noise-injection evaluation")
    p.add_argument("--data", required=True, help="directory of bundles")
    p.add_argument("--model", help="checkpoint used to forecast the maps")
    p.add_argument("--jnd-dir", help="precomputed maps, <bundle name>.hmt")
    p.add_argument("--gt", type=_flag, nargs="?", const=True, default=False,
                   help="score redundancy-removed images against gt.ppm")
    p.add_argument("--metric", action="append", choices=METRICS,
                   help="repeatable; default ms_con (plus psnr_gt, ssim_gt with --gt)")
    p.add_argument("--target-mse", type=float, default=100.0)

    p = sub.add_parser("inject", parents=[common], help="add calibrated JND-shaped noise")
    p.add_argument("--image", required=True)
    p.add_argument("--jnd", required=True, help="HMT1 map of shape (H, W)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--target-mse", type=float, default=100.0)

    p = sub.add_parser("compress", parents=[common], help="JND-guided block-DCT coding")
    p.add_argument("--image", help="PPM/PGM input (or use --bundle)")
    p.add_argument("--bundle", help="bundle directory; needed when --jnd is a checkpoint")
    p.add_argument("--jnd", help="HMT1 map file or model checkpoint directory")
    p.add_argument("--jnd-const", type=float, help="constant map in 8-bit units")
    p.add_argument("--mode", choices=MODES, default="jpeg_pre")
    p.add_argument("--quality", type=int, default=50)
    p.add_argument("--out", default="stats.csv", help="stats file name inside --out-dir")

    p = sub.add_parser("ablate", parents=[common], help="modality and module ablation tables")
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", help="score on these bundles instead of the training set")
    _model_flags(p)
    _train_flags(p)
    return parser


# --- helpers -----------------------------------------------------------------

def _model_cfg(a) -> ModelConfig:
    return ModelConfig(channels=a.channels, se_reduction=a.se_reduction, window=a.window,
                       heads=a.heads, blocks=a.blocks, use_hmpf=a.hmpf, use_hmfa=a.hmfa,
                       modalities=tuple(a.modalities), substitute=a.substitute)


def _train_cfg(a) -> TrainConfig:
    return TrainConfig(lambda_fea=a.lambda_fea, lambda_pix=a.lambda_pix, batch_size=a.batch_size,
                       epochs=a.epochs, lr=a.lr, patch=a.patch, seed=a.seed)


def load_dataset(directory) -> list:
    directory = Path(directory)
    index = directory / "index.txt"
    if index.exists():
        names = [n.strip() for n in index.read_text().splitlines() if n.strip()]
    else:
        names = sorted(p.name for p in directory.iterdir() if (p / "rgb.ppm").exists())
    return [load_bundle(directory / n) for n in names]


def _format(value) -> str:
    if isinstance(value, (tuple, list)):
        if value and isinstance(value[0], int):
            return "x".join(str(v) for v in value)
        return ",".join(value) or "none"
    return str(value)


def write_manifest(a, out: Path) -> None:
    lines = [f"command={a.command}", f"version={__version__}", f"seed={a.seed}"]
    for key, value in sorted(vars(a).items()):
        if key in GLOBAL_KEYS or value is None:
            continue
        lines.append(f"{key}={_format(value)}")
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")


# --- commands ----------------------------------------------------------------

def cmd_synth(a, out: Path) -> None:
    if a.n < 0:
        raise UsageError("--n must be nonnegative")
    rng = np.random.default_rng(a.seed)
    names = []
    for i, s in enumerate(rng.integers(0, 2 ** 31, size=a.n)):
        name = f"bundle{i:04d}"
        b = synth_bundle(int(s), a.size)
        save_bundle(b, out / name)
        names.append(name)
    (out / "index.txt").write_text("".join(n + "\n" for n in names))
    print(f"wrote {a.n} bundles to {out}")


def cmd_train(a, out: Path) -> None:
    data = load_dataset(a.data)
    result = train(data, _train_cfg(a), _model_cfg(a))
    meta = _train_cfg(a).to_strings()
    result.net.save(out / "model", meta)
    (out / "loss.csv").write_text(result.log_csv())
    print(f"trained {len(result.log)} steps, final loss {result.log[-1][2]:.6g}"
          if result.log else "no training steps")


def cmd_predict(a, out: Path) -> None:
    net = HmJndNet.load(a.model)
    pred = net.predict(load_bundle(a.bundle))
    save_image(pred.i_rr, out / "i_rr.ppm")
    write_tensor(out / "i_vt.hmt", pred.i_vt.thresholds)
    save_image(pred.i_vt.visualize(), out / "i_vt.pgm")
    print(f"mean threshold {255 * pred.i_vt.thresholds.mean():.4f} (8-bit units)")


def cmd_evaluate(a, out: Path, parser) -> None:
    metrics = tuple(a.metric) if a.metric else (("ms_con",) + (GT_METRICS if a.gt else ()))
    wants_gt = any(m in GT_METRICS for m in metrics)
    if wants_gt and not a.gt:
        parser.error("ground-truth metrics need --gt")
    if (a.model is None) == (a.jnd_dir is None):
        parser.error("give exactly one of --model and --jnd-dir")
    if wants_gt and a.model is None:
        parser.error("ground-truth metrics need --model (maps alone carry no I_rr)")
    bundles = load_dataset(a.data)
    items = []
    if a.model is not None:
        net = HmJndNet.load(a.model)
        for b in bundles:
            pred = net.predict(b)
            items.append(EvalItem(b.name, b.rgb, pred.i_vt, pred.i_rr, b.ground_truth))
    else:
        for b in bundles:
            items.append(EvalItem(b.name, b.rgb, JndMap(read_tensor(Path(a.jnd_dir) / f"{b.name}.hmt"))))
    report = evaluate(items, a.target_mse, a.seed, metrics)
    (out / "eval.csv").write_text(report.to_csv())
    for note in report.diagnostics:
        log.warning(note)
    print(report.table())


def cmd_inject(a, out: Path) -> None:
    image = load_image(a.image)
    i_vt = JndMap(read_tensor(a.jnd))
    alpha = a.alpha if a.alpha is not None else calibrate_alpha(i_vt, a.target_mse)
    save_image(inject_noise(image, i_vt, alpha, a.seed), out / "contaminated.ppm")
    print(f"alpha {alpha!r}")


def _compress_inputs(a):
    if (a.image is None) == (a.bundle is None):
        raise UsageError("give exactly one of --image and --bundle")
    bundle = load_bundle(a.bundle) if a.bundle else None
    image = bundle.rgb if bundle else load_image(a.image)
    if a.jnd_const is not None:
        return image, JndMap(np.full((image.height, image.width), a.jnd_const / 255.0))
    if a.jnd is None:
        if a.mode != "plain":
            raise UsageError(f"mode {a.mode} needs --jnd or --jnd-const")
        return image, None
    if Path(a.jnd).is_dir():
        if bundle is None:
            raise UsageError("a checkpoint --jnd needs --bundle for the prior modalities")
        return image, HmJndNet.load(a.jnd).predict(bundle).i_vt
    return image, JndMap(read_tensor(a.jnd))


def cmd_compress(a, out: Path) -> None:
    image, i_vt = _compress_inputs(a)
    stats = compress(image, i_vt, a.mode, a.quality)
    (out / a.out).write_text(f"{STATS_HEADER}\n{stats.csv_row()}\n")
    save_image(stats.reconstruction, out / "reconstruction.ppm")
    print(f"bpp {stats.bpp:.4f}  psnr {stats.psnr:.3f}  ms-ssim {stats.ms_ssim:.4f}  "
          f"{stats.branch_string()}")


def cmd_ablate(a, out: Path) -> None:
    train_set = load_dataset(a.data)
    eval_set = load_dataset(a.eval_data) if a.eval_data else train_set
    path = out / "ablation.csv"
    path.write_text(",".join(ABLATION_HEADER) + "\n")

    def flush(row):
        with path.open("a") as fh:
            fh.write(rows_csv([row], header=False))
        print(f"{row.table:<9}{row.label:<20}{row.psnr_gt:10.4f}{row.ssim_gt:10.4f}", flush=True)

    run_ablation(train_set, eval_set, _train_cfg(a), _model_cfg(a), on_row=flush)


# --- entry point -------------------------------------------------------------

def _apply_config(parser, argv: list[str]) -> list[str]:
    """Fold a ``--config`` file into argv: config first, real flags after."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config is None:
        return argv
    items = read_config(known.config)
    command = items.pop("command", None)
    items.pop("version", None)
    if not any(t in COMMANDS for t in argv):
        if command is None:
            raise UsageError("no command given and the config names none")
        argv = [command] + argv
    cmd = next(t for t in argv if t in COMMANDS)
    subparser = parser._subparsers._group_actions[0].choices[cmd]
    dests = {act.dest: act for act in subparser._actions}
    prefix = []
    for key, value in items.items():
        dest = key.replace("-", "_")
        if dest not in dests or dest == "config":
            raise UsageError(f"unknown config key {key!r} for command {cmd}")
        act = dests[dest]
        flag = act.option_strings[-1]
        if isinstance(act, argparse._AppendAction):
            for v in value.split(","):
                prefix += [flag, v]
        elif isinstance(act, argparse._StoreTrueAction):
            if _flag(value):
                prefix.append(flag)
        else:
            prefix += [flag, value]
    i = argv.index(cmd) + 1
    return argv[:i] + prefix + argv[i:]


RUNTIME_ERRORS = (OSError, ValueError, TensorFormatError, KeyError)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _apply_config(parser, argv)
    except UsageError as exc:
        print(f"hmjnd: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"hmjnd: error: cannot read config: {exc}", file=sys.stderr)
        return 2
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if a.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(a.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        handler = globals()[f"cmd_{a.command}"]
        if a.command == "evaluate":
            handler(a, out, parser)
        else:
            handler(a, out)
        write_manifest(a, out)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"hmjnd: error: {exc}", file=sys.stderr)
        return 2
    except RUNTIME_ERRORS as exc:
        print(f"hmjnd: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
