"""``dynet`` command line: curate, pretrain, finetune, eval, inspect, degrade."""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from dynet import analysis
from dynet.arch import build_model, load_checkpoint
from dynet.config import ConfigError, RunConfig
from dynet.curation import (
    QualityModel,
    curate,
    fit_quality_model,
    read_image_manifest,
)
from dynet.degradations import compose_pretrain_sample
from dynet.evaluation import load_image, read_manifest, run_benchmark, save_image
from dynet.trainer import (
    RunLog,
    TrainConfig,
    finetune_all_in_one,
    finetune_single,
    init_state,
    load_train_state,
    pretrain,
)

log = logging.getLogger("dynet")

IMAGE_EXTS = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


class ErrorCounter(logging.Handler):
    def __init__(self):
        super().__init__(logging.ERROR)
        self.count = 0

    def emit(self, record):
        self.count += 1


def _config(args):
    if getattr(args, "config", None):
        return RunConfig.load(args.config)
    return RunConfig({})


def _image_paths(cfg, source):
    """A directory (searched recursively), a manifest file, or a list of paths."""
    if isinstance(source, (list, tuple)):
        return [cfg.path(p) for p in source]
    p = cfg.path(source)
    if p.is_dir():
        return sorted(q for q in p.rglob("*") if q.suffix.lower() in IMAGE_EXTS)
    return [cfg.path(line) for line in read_image_manifest(p)]


def _seed(args, cfg):
    return cfg.seed if args.seed is None else args.seed


def cmd_curate(args):
    cfg = _config(args)
    sec = cfg.section("curate")
    thresholds = cfg.thresholds()
    model = None
    if sec.get("quality_model"):
        model = QualityModel.load(cfg.path(sec["quality_model"]))
    elif sec.get("pristine"):
        model = fit_quality_model(load_image(p) for p in _image_paths(cfg, sec["pristine"]))
    if model is None and (thresholds.niqe is not None or thresholds.brisque is not None):
        raise ConfigError("curate.quality_model", "NIQE/BRISQUE gates need a quality_model or pristine set")
    if thresholds.nima is not None:
        raise ConfigError("curate.thresholds.nima", "no NIMA scorer is available from the CLI")
    sources = [str(cfg.path(s)) for s in read_image_manifest(args.manifest)]
    summary = curate(
        sources, args.out_dir, model, thresholds,
        patch_size=sec.get("patch_size", 512),
        flat_cell=sec.get("flat_cell", 16),
        flat_tau=sec.get("flat_tau", 2.0),
    )
    print(json.dumps(summary.ledger()))
    return 0


def _train_config(cfg, section, phase, **over):
    sec = cfg.section(section)
    keys = {"batch_size", "crop_size", "lr", "variant_probability", "checkpoint_every",
            "grad_clip", "iterations", "epochs", "tasks"}
    d = {k: sec[k] for k in keys if k in sec}
    if "variant" in sec:
        d["fixed_variant"] = sec["variant"]
    if section == "finetune":
        d.setdefault("batch_size", 8)
    d.update(over)
    d["phase"] = phase
    d["seed"] = cfg.seed
    if sec.get("out_dir"):
        d["out_dir"] = str(cfg.path(sec["out_dir"]))
    try:
        return TrainConfig.from_dict(d)
    except (ValueError, TypeError) as exc:
        raise ConfigError(section, str(exc)) from None


def _run_log(cfg, section, tc):
    sec = cfg.section(section)
    path = cfg.path(sec["log"]) if sec.get("log") else (
        Path(tc.out_dir) / "log.jsonl" if tc.out_dir else None)
    if path:
        path.parent.mkdir(parents=True, exist_ok=True)
    return RunLog(path)


def _fresh_or_init(cfg, tc, seed, init=None):
    if init:
        model, _ = load_checkpoint(cfg.path(init), tc.variants[0])
    else:
        model = build_model(cfg.variant(tc.variants[0]), seed, arch=cfg.arch())
    return init_state(model, tc)


def cmd_pretrain(args):
    cfg = _config(args)
    sec = cfg.section("pretrain")
    seed = _seed(args, cfg)
    tc = _train_config(cfg, "pretrain", "pretrain")
    tc.seed = seed
    if not sec.get("patches"):
        raise ConfigError("pretrain.patches", "missing: directory or manifest of clean patches")
    patches = [load_image(p) for p in _image_paths(cfg, sec["patches"])]
    recipe = cfg.recipe()
    if sec.get("resume"):
        state = load_train_state(cfg.path(sec["resume"]), tc)
        log.info("resumed at iteration %d", state.iteration)
    else:
        state = _fresh_or_init(cfg, tc, seed)
    remaining = max(0, tc.iterations - state.iteration)
    pretrain(state, patches, tc, recipe, iterations=remaining, run_log=_run_log(cfg, "pretrain", tc))
    print(json.dumps({"iteration": state.iteration, **state.step_ledger()}))
    return 0


def cmd_finetune(args):
    cfg = _config(args)
    sec = cfg.section("finetune")
    mode = sec.get("mode", "all_in_one")
    if mode not in ("all_in_one", "single"):
        raise ConfigError("finetune.mode", f"expected all_in_one or single, got {mode!r}")
    phase = "finetune_all_in_one" if mode == "all_in_one" else "finetune_single"
    over = {"fixed_variant": args.variant} if args.variant else {}
    tc = _train_config(cfg, "finetune", phase, **over)
    tc.seed = _seed(args, cfg)
    if not sec.get("manifest"):
        raise ConfigError("finetune.manifest", "missing")
    entries = read_manifest(cfg.path(sec["manifest"]), root=cfg.base_dir)
    datasets = {}
    for e in entries:
        datasets.setdefault(e.task, []).append((load_image(e.degraded), load_image(e.clean)))
    state = _fresh_or_init(cfg, tc, tc.seed, sec.get("init"))
    run_log = _run_log(cfg, "finetune", tc)
    if mode == "all_in_one":
        try:
            finetune_all_in_one(state, datasets, tc, run_log)
        except ValueError as exc:
            raise ConfigError("finetune.tasks", str(exc)) from None
    else:
        tasks = tc.tasks or tuple(datasets)
        pairs = [p for t in tasks for p in datasets.get(t, [])]
        finetune_single(state, pairs, tc, run_log)
    print(json.dumps({"iteration": state.iteration, **state.step_ledger()}))
    return 0


def cmd_eval(args):
    cfg = _config(args)
    sec = cfg.section("eval")
    ckpt = Path(args.checkpoint) if args.checkpoint else cfg.path(sec.get("checkpoint"))
    if ckpt is None or not ckpt.exists():
        log.error("checkpoint not found: %s", ckpt)
        return 1
    name = args.variant or sec.get("variant", "L")
    variant = cfg.variant(name) if name == "custom" else name
    model, _ = load_checkpoint(ckpt, variant)
    manifest = args.manifest or (cfg.path(sec["manifest"]) if sec.get("manifest") else None)
    if manifest is None:
        raise ConfigError("eval.manifest", "missing (pass --manifest)")
    entries = read_manifest(manifest)
    gwa_tasks = ()
    if args.gwa:
        gwa_tasks = sec.get("gwa_tasks") or sorted({e.task for e in entries})
    results = run_benchmark(model, entries, gwa_tasks)
    print(results.table())
    out = args.out or sec.get("out")
    if out:
        results.write(out)
    return 1 if results.skipped else 0


def cmd_inspect(args):
    if args.checkpoint:
        model, _ = load_checkpoint(args.checkpoint, "L")
        variants = list(model.arch.presets)
    else:
        cfg = _config(args)
        names = list(cfg.arch().presets)
        if "reuse_freqs" in cfg.model:
            names.append("custom")
        variants = [cfg.variant(n) for n in names]
        model = build_model(variants[0], 0, arch=cfg.arch())
    h, w = args.size
    reports = analysis.compare_variants(model, variants, h, w)
    print(analysis.format_reports(reports))
    print("reported reductions vs PromptIR: params {params_pct:.2f}%, GFLOPs {gflops_pct:.2f}%".format(
        **analysis.reported_reductions()))
    if args.out:
        analysis.write_report(args.out, reports)
    return 0


def cmd_degrade(args):
    cfg = _config(args)
    img = load_image(args.image)
    rng = np.random.default_rng(_seed(args, cfg))
    sample = compose_pretrain_sample(img, cfg.recipe(), rng)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_image(out / "input.png", sample.input)
    save_image(out / "target.png", sample.target)
    save_image(out / "mask.png", sample.mask * 255.0)
    save_image(out / "region.png", sample.region * 255.0)
    print(json.dumps({"degradation": sample.degradation, "level": sample.level,
                      "modified_fraction": float((sample.mask | sample.region).mean())}))
    return 0


def _size(text):
    parts = text.lower().split("x")
    if len(parts) == 1:
        parts = parts * 2
    return int(parts[0]), int(parts[1])


def build_parser():
    p = argparse.ArgumentParser(prog="dynet", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run config")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--workers", type=int, default=1,
                        help="torch threads; determinism holds only with 1")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("curate", parents=[common], help="quality-gate images and cut patches")
    s.add_argument("manifest", help="text file, one image path per line")
    s.add_argument("out_dir")
    s.set_defaults(func=cmd_curate)

    s = sub.add_parser("pretrain", parents=[common], help="dynamic masked pre-training")
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("finetune", parents=[common], help="all-in-one or single-task fine-tuning")
    s.add_argument("--variant", help="fixed variant for single-task mode")
    s.set_defaults(func=cmd_finetune)

    s = sub.add_parser("eval", parents=[common], help="PSNR/SSIM benchmark")
    s.add_argument("--checkpoint")
    s.add_argument("--variant", help="L, S, another preset, or custom")
    s.add_argument("--manifest", help="task<TAB>degraded<TAB>clean per line")
    s.add_argument("--gwa", action="store_true", help="gray-world balance before restoration")
    s.add_argument("--out", help="write results JSON here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("inspect", parents=[common], help="parameter / FLOPs report per variant")
    s.add_argument("--checkpoint")
    s.add_argument("--size", type=_size, default=(224, 224), help="HxW, default 224x224")
    s.add_argument("--out", help="write report JSON here")
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("degrade", parents=[common], help="preview one pre-training corruption")
    s.add_argument("image")
    s.add_argument("out_dir")
    s.set_defaults(func=cmd_degrade)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    counter = ErrorCounter()
    root = logging.getLogger()
    root.addHandler(counter)
    torch.set_num_threads(max(1, args.workers))
    try:
        code = args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        code = 2
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        code = 1
    finally:
        root.removeHandler(counter)
    if code == 0 and counter.count:
        code = 1
    return code


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
