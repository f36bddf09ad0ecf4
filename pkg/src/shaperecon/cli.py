"""Command-line front end: file-based stages that compose into the full
pipeline (phantom -> dataset -> translator -> regressors -> reports).

Every command accepts --seed and --config <file>; a config file holds
flat `key = value` lines with `#` comments, and unknown keys are
rejected. Exit codes: 0 success, 1 runtime failure (stage named on
stderr), 2 usage errors.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

__version__ = "0.1.0"

CONFIG_DEFAULTS: dict[str, str] = {
    "phantom_rings": "21",
    "phantom_segments": "20",
    "phantom_radii": "60,50,40",
    "phantom_collapse_scale": "0.25",
    "phantom_seed": "0",
    "width": "180",
    "height": "120",
    "ranges_preset": "default",
    "n_sim": "2000",
    "n_real": "128",
    "test_fraction": "0.2",
    "shading_strength": "0.6",
    "noise_sigma": "0.08",
    "background_gradient": "0.35",
    "blur_radius": "1",
    "occluder_fraction": "0.25",
    "vae_epochs": "100",
    "vae_batch": "60",
    "vae_lr": "0.001",
    "kl_weight": "5.0",
    "vae_latent": "64",
    "vae_hidden": "96,96",
    "reg_epochs": "100",
    "reg_batch": "60",
    "reg_lr": "0.001",
    "dropout": "0.5",
    "param_loss_weight": "0.5",
    "seeds": "0,1,2",
}


class StageError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


def load_config(path: str | None) -> dict[str, str]:
    cfg = dict(CONFIG_DEFAULTS)
    if path is None:
        return cfg
    text = Path(path).read_text()
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep or not key:
            raise StageError("config", f"{path}:{ln}: expected `key = value`")
        if key not in cfg:
            raise StageError("config", f"{path}:{ln}: unknown key {key!r}")
        cfg[key] = val
    return cfg


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(","))


def _phantom_config(cfg, seed=None):
    from .geometry import PhantomConfig

    return PhantomConfig(int(cfg["phantom_rings"]), int(cfg["phantom_segments"]),
                         _floats(cfg["phantom_radii"]),
                         float(cfg["phantom_collapse_scale"]),
                         int(cfg["phantom_seed"]) if seed is None else seed)


def _intrinsics(cfg):
    from .camera import Intrinsics

    return Intrinsics(width=int(cfg["width"]), height=int(cfg["height"]))


def _ranges(cfg):
    from .dataset import compact_ranges, default_ranges

    preset = cfg["ranges_preset"]
    if preset == "default":
        return default_ranges()
    if preset == "compact":
        return compact_ranges()
    raise StageError("config", f"unknown ranges preset {preset!r}")


def _perturb(cfg, seed=0):
    from .render import PerturbConfig

    return PerturbConfig(float(cfg["shading_strength"]), float(cfg["noise_sigma"]),
                         float(cfg["background_gradient"]), int(cfg["blur_radius"]),
                         float(cfg["occluder_fraction"]), seed)


def _vae_hyper(cfg, seed):
    from .vae import VaeHyper

    return VaeHyper(int(cfg["vae_batch"]), int(cfg["vae_epochs"]),
                    float(cfg["vae_lr"]), float(cfg["kl_weight"]), seed)


def _reg_hyper(cfg, seed):
    from .regressor import RegressorHyper

    return RegressorHyper(int(cfg["reg_batch"]), int(cfg["reg_epochs"]),
                          float(cfg["reg_lr"]), float(cfg["dropout"]),
                          float(cfg["param_loss_weight"]), seed)


def _parse_params(text: str):
    from .dataset import ParamVector

    vals = _floats(text)
    if len(vals) != 6:
        raise StageError("params", "expected 6 comma-separated values "
                                   "(camera x,y,z, focus x,y, weight)")
    return ParamVector.from_array(np.array(vals))


# --- commands ----------------------------------------------------------------

def cmd_phantom(args, cfg):
    from .geometry import make_phantom, save_model

    ph = _phantom_config(cfg, seed=args.seed)
    model = make_phantom(ph)
    save_model(model, args.output)
    print(f"phantom written to {args.output} "
          f"({model.base.n_vertices} vertices, {model.base.n_triangles} triangles)")
    return 0


def cmd_render(args, cfg):
    from .geometry import deform, load_model
    from .images import write_pgm
    from .render import contour_extract, rasterize_mask, render_pseudo_real

    model = load_model(args.model)
    p = _parse_params(args.params)
    k = _intrinsics(cfg)
    mesh = deform(model, p.collapse_weight)
    if args.kind == "pseudo-real":
        img = render_pseudo_real(mesh, p.camera(), k, _perturb(cfg, args.seed))
    else:
        img = rasterize_mask(mesh, p.camera(), k)
        if args.kind == "contour":
            img = contour_extract(img)
    if img.max() == 0.0:
        print("warning: nothing visible from this camera, image is all zero",
              file=sys.stderr)
    write_pgm(img, args.output)
    return 0


def cmd_gen_data(args, cfg):
    from .dataset import build_dataset, save_dataset
    from .geometry import load_model

    model = load_model(args.model)
    ds = build_dataset(model, _ranges(cfg), int(cfg["n_sim"]), int(cfg["n_real"]),
                       _perturb(cfg), _intrinsics(cfg), args.seed)
    save_dataset(ds, args.output)
    print(f"dataset with {ds.n_sim} simulated + {ds.n_real} paired samples "
          f"written to {args.output}")
    return 0


def cmd_train_vae(args, cfg):
    from .dataset import load_dataset
    from .vae import VaeHyper, history_csv, save_vae, train_translator

    data = load_dataset(args.data)
    hyper = replace(_vae_hyper(cfg, args.seed),
                    autoencode_baseline=args.autoencode_baseline)
    model, history = train_translator(data, hyper, int(cfg["vae_latent"]),
                                      _ints(cfg["vae_hidden"]))
    save_vae(model, args.output, {"epochs": str(hyper.epochs), "seed": str(args.seed)})
    Path(str(args.output) + ".history.csv").write_text(history_csv(history))
    print(f"translator written to {args.output}; final loss {history[-1][3]:.6f}")
    return 0


def cmd_train_regressor(args, cfg):
    from .dataset import load_dataset
    from .geometry import load_model
    from .regressor import history_csv, save_regressor, train_regressor
    from .vae import load_vae

    data = load_dataset(args.data)
    model = load_model(args.model)
    mode = args.mode.replace("-", "_")
    translator = load_vae(args.translator) if args.translator else None
    if mode == "proposed" and translator is None:
        raise StageError("train-regressor", "proposed mode needs --translator")
    reg, history = train_regressor(data, model, _ranges(cfg), mode,
                                   translator=translator,
                                   hyper=_reg_hyper(cfg, args.seed))
    save_regressor(reg, args.output, {"mode": mode, "seed": str(args.seed)})
    Path(str(args.output) + ".history.csv").write_text(history_csv(history))
    print(f"regressor ({mode}) written to {args.output}; "
          f"final loss {history[-1][3]:.4f}")
    return 0


def cmd_translate(args, cfg):
    from .images import read_pgm, write_pgm
    from .vae import load_vae, translate

    model = load_vae(args.translator)
    img = read_pgm(args.input)
    write_pgm(translate(model, img), args.output)
    return 0


def cmd_evaluate(args, cfg):
    from .dataset import load_dataset
    from .evaluate import evaluate_regressor
    from .geometry import load_model
    from .regressor import load_regressor
    from .vae import load_vae

    data = load_dataset(args.data)
    model = load_model(args.model)
    reg = load_regressor(args.regressor)
    translator = load_vae(args.translator) if args.translator else None
    samples = list(data.real_samples())
    if not samples:
        raise StageError("evaluate", "dataset has no pseudo-real samples")
    maes = evaluate_regressor(reg, samples, model, _ranges(cfg), translator)
    rows = ["sample,mae_mm"] + [f"{i},{m!r}" for i, m in enumerate(maes)]
    Path(str(args.output) + ".csv").write_text("\n".join(rows) + "\n")
    mean = float(np.mean(maes))
    std = float(np.std(maes, ddof=1)) if len(maes) > 1 else 0.0
    Path(str(args.output) + ".txt").write_text(
        f"samples: {len(maes)}\nmean_mae_mm: {mean!r}\nstd_mae_mm: {std!r}\n")
    print(f"MAE over {len(maes)} samples: {mean:.2f} +/- {std:.2f} mm")
    return 0


def cmd_compare(args, cfg):
    from .evaluate import BenchmarkConfig, compare_conditions, report_csv, \
        report_text, summary_csv

    seeds = _ints(args.seeds if args.seeds else cfg["seeds"])
    bench = BenchmarkConfig(
        phantom=_phantom_config(cfg), ranges=_ranges(cfg),
        intrinsics=_intrinsics(cfg), perturb=_perturb(cfg),
        n_sim=int(cfg["n_sim"]), n_real=int(cfg["n_real"]),
        test_fraction=float(cfg["test_fraction"]),
        vae=_vae_hyper(cfg, 0), reg=_reg_hyper(cfg, 0))
    report = compare_conditions(bench, seeds)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(report_csv(report))
    (out / "summary.csv").write_text(summary_csv(report))
    (out / "report.txt").write_text(report_text(report))
    print(report_text(report, timestamp=False))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shaperecon",
        description="single-image organ shape reconstruction pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", default=None, help="key = value config file")

    p = sub.add_parser("phantom", help="write a phantom shape model file")
    common(p)
    p.add_argument("--rings", type=int)
    p.add_argument("--segments", type=int)
    p.add_argument("--radii")
    p.add_argument("--collapse-scale", type=float)
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("render", help="render one parameter vector to a PGM")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--params", required=True,
                   help="camera x,y,z, focus x,y, collapse weight")
    p.add_argument("--kind", choices=("mask", "contour", "pseudo-real"),
                   default="mask")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("gen-data", help="generate a paired dataset directory")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("train-vae", help="train the domain translator")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--autoencode-baseline", action="store_true",
                   help="reconstruct each domain instead of translating")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("train-regressor", help="train a parameter regressor")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=("real-only", "virtual", "proposed"),
                   required=True)
    p.add_argument("--translator", default=None)
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("translate", help="run one image through the translator")
    common(p)
    p.add_argument("--translator", required=True)
    p.add_argument("input")
    p.add_argument("output")

    p = sub.add_parser("evaluate", help="MAE of a regressor on a dataset")
    common(p)
    p.add_argument("--regressor", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--translator", default=None,
                   help="translate test inputs first (proposed condition)")
    p.add_argument("-o", "--output", required=True, help="report path prefix")

    p = sub.add_parser("compare", help="three-condition benchmark")
    common(p)
    p.add_argument("--seeds", default=None, help="comma-separated seed list")
    p.add_argument("-o", "--output", required=True, help="report directory")
    return parser


COMMANDS = {
    "phantom": cmd_phantom,
    "render": cmd_render,
    "gen-data": cmd_gen_data,
    "train-vae": cmd_train_vae,
    "train-regressor": cmd_train_regressor,
    "translate": cmd_translate,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "phantom":  # flag overrides on top of the config
            if args.rings is not None:
                cfg["phantom_rings"] = str(args.rings)
            if args.segments is not None:
                cfg["phantom_segments"] = str(args.segments)
            if args.radii is not None:
                cfg["phantom_radii"] = args.radii
            if args.collapse_scale is not None:
                cfg["phantom_collapse_scale"] = str(args.collapse_scale)
        return COMMANDS[args.command](args, cfg)
    except StageError as e:
        print(f"error in {e.stage}: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - map any stage failure to exit 1
        print(f"error in {args.command}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
