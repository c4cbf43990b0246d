"""Command-line interface: dataset generation, training with resumable
checkpoints, sampling/editing, evaluation, and the HTTP service.

Configuration comes from an optional JSON config file (sections "gen", "cond",
"unet", "train") with individual flags taking precedence. Every command is
deterministic for fixed flags and seeds.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import baseline as bl
from . import diffusion as df
from . import formats
from . import metrics as mt
from . import toygen
from .autodiff import init_adam
from .conditioning import (AttributeCondition, CondConfig, VisualCondition,
                           make_null)
from .denoiser import UNetConfig
from .toygen import ToyGenConfig


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------

def load_config_file(path: Optional[str]) -> Dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError("config file must contain a JSON object")
    return cfg


def gen_config(cfg: Dict, seed: Optional[int] = None) -> ToyGenConfig:
    section = dict(cfg.get("gen", {}))
    if seed is not None:
        section["seed"] = seed
    return ToyGenConfig(**section)


def model_config(cfg: Dict, gen: ToyGenConfig) -> df.ModelConfig:
    cond_sec = dict(cfg.get("cond", {}))
    cond_sec.setdefault("n_attr", gen.n_attr)
    cond_sec.setdefault("image_size", gen.image_size)
    cond = CondConfig(**cond_sec)
    unet_sec = dict(cfg.get("unet", {}))
    unet_sec.setdefault("k", gen.k)
    unet_sec.setdefault("d", gen.d)
    unet_sec.setdefault("d_cond", cond.d_cond)
    if "channel_mults" in unet_sec:
        unet_sec["channel_mults"] = tuple(unet_sec["channel_mults"])
    unet = UNetConfig(**unet_sec)
    return df.ModelConfig(gen=gen, cond=cond, unet=unet,
                          timesteps=unet.timesteps,
                          **{k: v for k, v in cfg.items()
                             if k in ("prediction", "schedule_s",
                                      "schedule_beta_clip")})


def train_config(cfg: Dict, args) -> df.TrainConfig:
    section = dict(cfg.get("train", {}))
    for key, flag in (("steps", args.steps), ("batch", args.batch),
                      ("max_lr", args.lr), ("seed", args.seed)):
        if flag is not None:
            section[key] = flag
    return df.TrainConfig(**section)


# --------------------------------------------------------------------------
# Conditions from files/flags
# --------------------------------------------------------------------------

def build_conditions(cond_cfg: CondConfig,
                     attr_values: Dict[str, float],
                     rgb: Optional[np.ndarray], seg: Optional[np.ndarray],
                     rgb_mask: Optional[np.ndarray],
                     seg_mask: Optional[np.ndarray]
                     ) -> Tuple[AttributeCondition, VisualCondition]:
    """Flags/rasters -> condition pair; unspecified modalities stay null.

    Mask rasters are boolean validity maps (True = the condition applies
    there); they require the corresponding raster to be present.
    """
    names = toygen.ATTRIBUTE_NAMES[:cond_cfg.n_attr]
    attr, vis = make_null(cond_cfg)
    for name, value in attr_values.items():
        if name not in names:
            raise ValueError(f"attribute {name!r} not available "
                             f"(model has {cond_cfg.n_attr} slots)")
        idx = names.index(name)
        attr.values[idx] = value
        attr.mask[idx] = False

    s = cond_cfg.image_size
    for raster, label in ((rgb, "--rgb"), (seg, "--seg")):
        if raster is not None and raster.shape[-2:] != (s, s):
            raise ValueError(f"{label} raster must be {s}x{s}, "
                             f"got {raster.shape[-2]}x{raster.shape[-1]}")
    for mask, raster, label in ((rgb_mask, rgb, "--rgb-mask"),
                                (seg_mask, seg, "--seg-mask")):
        if mask is not None:
            if raster is None:
                raise ValueError(f"{label} given without its raster")
            if mask.shape != (s, s):
                raise ValueError(f"{label} must be {s}x{s}")
    if rgb is not None:
        vis.rgb = rgb.astype(np.float32)
        vis.rgb_valid = np.ones((s, s), bool) if rgb_mask is None \
            else rgb_mask.astype(bool)
    if seg is not None:
        if seg.max(initial=0) >= toygen.SEG_CLASSES:
            raise ValueError("segmentation labels out of range")
        vis.seg = seg.astype(np.uint8)
        vis.seg_valid = np.ones((s, s), bool) if seg_mask is None \
            else seg_mask.astype(bool)
    return attr, vis


def measured_attributes(latent: np.ndarray, gen: ToyGenConfig) -> Dict[str, float]:
    """Ground-truth attribute readout of a latent through the frozen generator."""
    vals = toygen.attributes(toygen.decode_params(latent, gen), gen)
    return {name: round(float(v), 6)
            for name, v in zip(toygen.attribute_names(gen), vals)}


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_gen_dataset(args) -> int:
    cfg = gen_config(load_config_file(args.config), seed=args.seed)
    records = toygen.build_dataset(args.count, cfg, seed=cfg.seed)
    formats.write_dataset(args.out, records, cfg)
    attrs = np.stack([r.attrs for r in records])
    print(f"wrote {args.count} records to {args.out} "
          f"({formats.dataset_file_size(cfg, args.count)} bytes)")
    print(f"latent shape ({cfg.k}, {cfg.d}), image {cfg.image_size}px, "
          f"seed {cfg.seed}")
    for name, mean in zip(toygen.attribute_names(cfg), attrs.mean(axis=0)):
        print(f"  attr {name}: mean {mean:.3f}")
    return 0


def cmd_train(args) -> int:
    records, gen = formats.read_dataset(args.data)
    cfg = load_config_file(args.config)
    if args.resume:
        model, adam = formats.load_checkpoint(args.resume)
        if adam is None:
            raise ValueError("checkpoint has no optimizer state; cannot resume")
        if model.cfg.gen != gen:
            raise ValueError("checkpoint generator config does not match dataset")
    else:
        model = df.DiffusionModel(model_config(cfg, gen),
                                  init_seed=args.init_seed)
        model.norm = toygen.fit_normalization([r.latent for r in records])
        adam = init_adam(model.store.all())
    tcfg = train_config(cfg, args)

    log_fh = open(args.log, "a", encoding="utf-8") if args.log else None

    def log(line: str) -> None:
        print(line)
        if log_fh:
            log_fh.write(line + "\n")
            log_fh.flush()

    def on_step(step: int) -> None:
        if args.ckpt_every and step % args.ckpt_every == 0:
            formats.save_checkpoint(f"{args.out}.step{step}", model, adam)

    try:
        df.train(model, records, tcfg, log=log, adam=adam, on_step=on_step)
    except FloatingPointError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        formats.save_checkpoint(args.out, model, adam)
        return 1
    finally:
        if log_fh:
            log_fh.close()
    formats.save_checkpoint(args.out, model, adam)
    print(f"saved checkpoint at step {model.train_steps_done} to {args.out}")
    return 0


def _load_condition_files(args, cond_cfg: CondConfig
                          ) -> Tuple[AttributeCondition, VisualCondition]:
    rgb = formats.read_ppm(args.rgb) if args.rgb else None
    seg = formats.read_seg_pgm(args.seg) if args.seg else None
    rgb_mask = formats.read_pgm(args.rgb_mask) > 0 if args.rgb_mask else None
    seg_mask = formats.read_pgm(args.seg_mask) > 0 if args.seg_mask else None
    attr_values = formats.parse_attr_pairs(args.attr or [])
    return build_conditions(cond_cfg, attr_values, rgb, seg, rgb_mask, seg_mask)


def _write_samples(args, model: df.DiffusionModel, latents: Sequence[np.ndarray],
                   seeds: Sequence[int], params: Dict) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gen = model.cfg.gen
    entries = []
    for i, (latent, seed) in enumerate(zip(latents, seeds)):
        stem = f"sample_{i:03d}"
        p = toygen.decode_params(latent, gen)
        image, seg = toygen.render(p, toygen.FRONTAL_VIEW, gen.image_size,
                                   mode="hard")
        np.save(out / f"{stem}.npy", latent.astype(np.float32))
        formats.write_ppm(out / f"{stem}.ppm", image)
        formats.write_seg_pgm(out / f"{stem}_seg.pgm", seg)
        entries.append({"index": i, "seed": seed,
                        "latent": f"{stem}.npy", "image": f"{stem}.ppm",
                        "seg": f"{stem}_seg.pgm",
                        "measured_attrs": measured_attributes(latent, gen)})
    manifest = {"params": params, "samples": entries}
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    print(f"wrote {len(entries)} samples to {out}")


def _sample_params(args, mode: str) -> Dict:
    params = {"mode": mode, "omega_v": args.omega_v, "omega_a": args.omega_a,
              "eta": args.eta, "steps": args.steps, "seed": args.seed,
              "count": args.count}
    if mode == "edit":
        params["t_rec"] = args.t_rec
    return params


def cmd_sample(args) -> int:
    model, _ = formats.load_checkpoint(args.ckpt)
    attr, vis = _load_condition_files(args, model.cfg.cond)
    latents, seeds = [], []
    for i in range(args.count):
        scfg = df.SampleConfig(ddim_steps=args.steps, eta=args.eta,
                               omega_v=args.omega_v, omega_a=args.omega_a,
                               seed=args.seed + i, count=1)
        latents.append(df.ddim_sample(model, scfg, attr, vis)[0])
        seeds.append(args.seed + i)
    _write_samples(args, model, latents, seeds, _sample_params(args, "sample"))
    return 0


def cmd_edit(args) -> int:
    model, _ = formats.load_checkpoint(args.ckpt)
    if args.rgb is None and args.seg is None:
        raise ValueError("edit needs at least one reference raster "
                         "(--rgb and/or --seg)")
    if not 0 <= args.t_rec <= args.steps:
        raise ValueError(f"--t-rec must lie in [0, {args.steps}]")
    # reference regime: the provided rasters taken at face value, no attributes;
    # edit regime: the same rasters under the painted masks plus the attributes
    ref_attr, ref_vis = build_conditions(
        model.cfg.cond, {},
        formats.read_ppm(args.rgb) if args.rgb else None,
        formats.read_seg_pgm(args.seg) if args.seg else None, None, None)
    edit_attr, edit_vis = _load_condition_files(args, model.cfg.cond)
    latents, seeds = [], []
    for i in range(args.count):
        scfg = df.SampleConfig(ddim_steps=args.steps, eta=args.eta,
                               omega_v=args.omega_v, omega_a=args.omega_a,
                               seed=args.seed + i, count=1)
        plan = df.EditPlan(reference=(ref_attr, ref_vis),
                           edit=(edit_attr, edit_vis),
                           t_rec=args.t_rec, sample=scfg)
        latents.append(df.edit(model, plan)[0])
        seeds.append(args.seed + i)
    _write_samples(args, model, latents, seeds, _sample_params(args, "edit"))
    return 0


_TASKS = {"face-hair": mt.TASK_FACE_HAIR, "half-rgb": mt.TASK_HALVES}


def _eval_artifacts(args, gen: ToyGenConfig):
    """Dataset + trained predictors for the evaluation commands."""
    n = 1000 + max(args.count, 100)
    print(f"building {n}-record dataset (seed {args.seed}) ...")
    records = toygen.build_dataset(n, gen, seed=args.seed)
    print("warning: no stored predictors; training them now", file=sys.stderr)
    predictors, fit = bl.train_predictors(records, gen)
    print(f"predictors ready (attr MAE {fit['attr_mae']:.3f}, "
          f"pixel acc {fit['pixel_acc']:.3f})")
    return records, predictors


def _write_reports(out_dir: str, reports: Sequence[mt.EvalReport]) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metric_names = sorted({m for r in reports for m in r.per_sample})
    with open(out / "report.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "sample", "seconds_per_sample"]
                        + metric_names)
        for rep in reports:
            for i in range(rep.count):
                writer.writerow(
                    [rep.method, i, f"{rep.seconds_per_sample:.4f}"]
                    + [f"{rep.per_sample[m][i]:.6f}"
                       if m in rep.per_sample else "" for m in metric_names])
            writer.writerow([rep.method, "mean", f"{rep.seconds_per_sample:.4f}"]
                            + [f"{rep.means[m]:.6f}"
                               if m in rep.means else "" for m in metric_names])
    for rep in reports:
        with open(out / f"{rep.method}.json", "w", encoding="utf-8") as fh:
            fh.write(rep.to_json())
    for rep in reports:
        line = ", ".join(f"{k}={v:.4f}" for k, v in sorted(rep.means.items()))
        print(f"{rep.method}: {line} ({rep.seconds_per_sample:.2f}s/sample)")
    print(f"reports written to {out}")


def cmd_eval(args) -> int:
    model, _ = formats.load_checkpoint(args.ckpt)
    records, predictors = _eval_artifacts(args, model.cfg.gen)
    rep_d, rep_b = mt.eval_suite(model, predictors, records[-args.count:],
                                 _TASKS[args.task], count=args.count)
    _write_reports(args.out, [rep_d, rep_b])
    return 0


def cmd_baseline(args) -> int:
    if args.ckpt:
        model, _ = formats.load_checkpoint(args.ckpt)
        gen = model.cfg.gen
    else:
        gen = gen_config(load_config_file(args.config))
    records, predictors = _eval_artifacts(args, gen)
    task = _TASKS[args.task]
    eval_records = records[-args.count:]
    mean_latent = np.mean([r.latent for r in records], axis=0)
    rows: Dict[str, List[float]] = {}
    elapsed = 0.0
    for rec in eval_records:
        attr, vis = mt.build_task_conditions(rec, task)
        t0 = time.time()
        res = bl.multi_conditional_invert(
            gen, rec.view, predictors, bl.BaselineConfig(),
            rgb=rec.image, rgb_mask=vis.rgb_valid,
            seg=rec.seg, seg_mask=vis.seg_valid,
            attrs=None if attr.mask.all() else attr.values,
            attrs_mask=None if attr.mask.all() else ~attr.mask,
            mean_latent=mean_latent)
        elapsed += time.time() - t0
        for k, v in mt._measure(res.latent, rec, attr, vis,
                                predictors, gen).items():
            rows.setdefault(k, []).append(v)
    report = mt.EvalReport(task=task, method="baseline", count=args.count,
                           per_sample=rows,
                           seconds_per_sample=elapsed / args.count)
    _write_reports(args.out, [report])
    return 0


def cmd_serve(args) -> int:
    from . import service
    model, _ = formats.load_checkpoint(args.ckpt)
    server = service.make_server(args.host, args.port, model,
                                 max_steps=args.max_steps)
    print(f"serving on http://{args.host}:{server.server_address[1]}/ "
          f"(checkpoint step {model.train_steps_done})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def _positive(value: str) -> int:
    n = int(value)
    if n <= 0:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return n


def _add_sampling_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ckpt", required=True, help="model checkpoint")
    p.add_argument("--attr", action="append", metavar="NAME=VALUE",
                   help="condition on an attribute (repeatable)")
    p.add_argument("--rgb", help="condition RGB image (PPM)")
    p.add_argument("--seg", help="condition segmentation (PGM, labels x40)")
    p.add_argument("--rgb-mask", help="RGB validity mask (PGM, 0 = masked)")
    p.add_argument("--seg-mask", help="seg validity mask (PGM, 0 = masked)")
    p.add_argument("--omega-v", type=float, default=1.5,
                   help="visual guidance weight")
    p.add_argument("--omega-a", type=float, default=1.5,
                   help="attribute guidance weight")
    p.add_argument("--eta", type=float, default=0.0,
                   help="sampler stochasticity in [0, 1]")
    p.add_argument("--steps", type=_positive, default=100,
                   help="denoising steps")
    p.add_argument("--count", type=_positive, default=1,
                   help="number of samples")
    p.add_argument("--seed", type=int, default=0, help="base sampling seed")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="facediff",
        description="Conditional latent diffusion over a frozen procedural "
                    "face generator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", help="generate a dataset file")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=_positive, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON config file")
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("train", help="train the diffusion model")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--steps", type=_positive, help="total training steps")
    p.add_argument("--batch", type=_positive)
    p.add_argument("--lr", type=float, help="peak learning rate")
    p.add_argument("--seed", type=int, help="training seed")
    p.add_argument("--init-seed", type=int, default=0,
                   help="weight initialization seed")
    p.add_argument("--ckpt-every", type=int, default=500,
                   help="checkpoint interval in steps (0 = only at the end)")
    p.add_argument("--log", help="append metrics log (step,loss,lr) here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="draw conditional samples")
    _add_sampling_flags(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("edit", help="two-stage reconstruct-then-edit sampling")
    _add_sampling_flags(p)
    p.add_argument("--t-rec", type=int, default=50,
                   help="steps spent reconstructing before the edit applies")
    p.set_defaults(func=cmd_edit)

    for name, func in (("eval", cmd_eval), ("baseline", cmd_baseline)):
        p = sub.add_parser(name, help=f"run the {name} evaluation")
        if name == "eval":
            p.add_argument("--ckpt", required=True)
        else:
            p.add_argument("--ckpt", help="checkpoint (for generator config)")
            p.add_argument("--config", help="JSON config file")
        p.add_argument("--task", choices=sorted(_TASKS), required=True)
        p.add_argument("--count", type=_positive, default=8)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True, help="report directory")
        p.set_defaults(func=func)

    p = sub.add_parser("serve", help="serve the model over HTTP")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--port", type=int, default=8700)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--max-steps", type=_positive, default=1000,
                   help="per-request denoising step budget")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
