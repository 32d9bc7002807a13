"""Command-line entry point: simulate, degrade, prepare, train, denoise, evaluate, ablate.

Exit codes: 0 success, 2 usage or validation error (including missing
inputs), 1 runtime failure. Every command writes ``config.ini`` (the effective
configuration) and ``provenance.json`` (input hashes, seeds, version) into its
output directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import PRESETS, ConfigError, RunConfig
from .data import (
    DataConfigError,
    DomainTag,
    Record,
    build_workspace,
    load_test_pairs,
    manifest_hash,
    read_manifest,
    write_manifest,
)
from .degradation import degrade
from .metrics import evaluate_suite
from .networks import NetworkError
from .physics import PhysicsError, ScalarField2D
from .rasters import RasterFormatError, read_raster, write_preview, write_raster, write_sidecar
from .scenes import generate_clear_dataset
from .trainer import VARIANTS, TrainConfigError, denoise, load_checkpoint, make_loaders, train, variant_config

log = logging.getLogger("stmdenoise")

VALIDATION_ERRORS = (ConfigError, DataConfigError, TrainConfigError, NetworkError, PhysicsError, RasterFormatError, FileNotFoundError)


class UsageError(ValueError):
    pass


# --- helpers ---------------------------------------------------------------


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _finish(out: Path, cfg: RunConfig, command: str, inputs: dict, seeds: dict, extra: dict | None = None) -> None:
    cfg.write_echo(out)
    record = {
        "command": command,
        "version": __version__,
        "config_sha256": cfg.sha256(),
        "seeds": seeds,
        "inputs": inputs,
        **(extra or {}),
    }
    (out / "provenance.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def _input_hash(path: Path) -> str:
    path = Path(path)
    if path.is_dir():
        return manifest_hash(path)
    if not path.exists():
        raise FileNotFoundError(f"missing input {path}")
    return _sha256_file(path)


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _store(out: Path, rec: Record, values: np.ndarray, meta: dict | None, preview: bool) -> Record:
    dest = out / rec.path
    dest.parent.mkdir(parents=True, exist_ok=True)
    write_raster(dest, values)
    if meta is not None:
        write_sidecar(dest.with_suffix(".meta"), meta)
    if preview:
        write_preview(dest.with_suffix(".png"), values)
    return rec


def _select(directory: Path, domain: str | None, split: str | None) -> list[Record]:
    recs = read_manifest(directory)
    if domain:
        recs = [r for r in recs if r.domain == DomainTag(domain)]
    if split:
        recs = [r for r in recs if r.split == split]
    if not recs:
        raise DataConfigError(f"no images in {directory} match domain={domain} split={split}")
    return recs


def _load(directory: Path, recs: list[Record]) -> np.ndarray:
    return np.stack([read_raster(directory / r.path) for r in recs])


# --- commands --------------------------------------------------------------


def cmd_simulate(args, cfg: RunConfig) -> None:
    out = _out_dir(args.out)
    count = args.count if args.count is not None else cfg.data.per_domain
    seed = args.seed if args.seed is not None else cfg.data.seed
    scene = cfg.data.train_scene
    records = []
    for i, img in enumerate(generate_clear_dataset(count, scene, seed)):
        rec = Record(f"sc{i:05d}", f"images/sim_clear/train/sc{i:05d}.ldos", DomainTag.SIM_CLEAR, "train")
        meta = {"extent_nm": list(img.extent), **{k: img.meta[k] for k in ("seed", "index", "impurities", "model", "ldos_min", "ldos_max")}}
        records.append(_store(out, rec, img.values, meta, not args.no_preview))
    write_manifest(out, records)
    _finish(out, cfg, "simulate", {}, {"seed": seed}, {"count": count})
    print(f"wrote {len(records)} clean images to {out}")


def cmd_degrade(args, cfg: RunConfig) -> None:
    src = Path(args.input)
    recs = _select(src, args.domain, args.split)
    out = _out_dir(args.out)
    deg = cfg.exp_degradation if args.pseudo_exp else cfg.degradation
    if args.seed is not None:
        deg = replace(deg, seed=args.seed)
    domain = DomainTag.EXP if args.pseudo_exp else DomainTag.SIM_BLUR
    records = []
    for i, r in enumerate(recs):
        img = degrade(ScalarField2D(read_raster(src / r.path)), deg, index=i)
        rec = Record(r.id, f"images/{domain.value}/{r.split}/{r.id}.ldos", domain, r.split, r.id)
        records.append(_store(out, rec, img.values, {"source": r.id, "degradation": deg.as_dict(), "index": i}, not args.no_preview))
    write_manifest(out, records)
    _finish(out, cfg, "degrade", {"input": _input_hash(src)}, {"degrade": deg.seed})
    print(f"wrote {len(records)} degraded images to {out}")


def cmd_prepare(args, cfg: RunConfig) -> None:
    out = _out_dir(args.out)
    records = build_workspace(out, cfg.data)
    _finish(out, cfg, "prepare", {}, {"data": cfg.data.seed, "degrade": cfg.degradation.seed})
    counts = {}
    for r in records:
        counts[f"{r.domain.value}/{r.split}"] = counts.get(f"{r.domain.value}/{r.split}", 0) + 1
    print(json.dumps(counts, sort_keys=True))


def _train_one(workspace: Path, out: Path, cfg: RunConfig, resume: bool):
    state = None
    tcfg = cfg.train
    ckpt = out / "checkpoint.pt"
    if resume and ckpt.exists():
        state, saved, _ = load_checkpoint(ckpt)
        if saved != tcfg:
            raise ConfigError("checkpoint was written with a different [train] configuration")
        log.info("resuming at epoch %d step %d", state.epoch, state.step_in_epoch)
    elif not resume:
        for stale in ("train_log.jsonl", "history.jsonl", "checkpoint.pt"):
            (out / stale).unlink(missing_ok=True)
    result = train(tcfg, make_loaders(workspace, tcfg), out_dir=out, state=state)
    (out / "epoch_means.json").write_text(json.dumps(result.epoch_means, indent=2, sort_keys=True) + "\n")
    _finish(out, cfg, "train", {"data": _input_hash(workspace)}, {"train": tcfg.seed}, {"steps": result.state.global_step})
    return result


def cmd_train(args, cfg: RunConfig) -> None:
    workspace = Path(args.data)
    if args.variant:
        cfg = cfg.with_train(variant_config(cfg.train, args.variant))
    out = _out_dir(args.out)
    result = _train_one(workspace, out, cfg, args.resume)
    for m in result.epoch_means:
        print(f"epoch {m['epoch']}: total_G {m['total_G']:.4f} cyc {m['cyc_f'] + m['cyc_b']:.4f}")


def cmd_denoise(args, cfg: RunConfig) -> None:
    state, _, resolution = load_checkpoint(args.checkpoint)
    net = state.nets.G_D if args.which == "GD" else state.nets.G_DA
    src = Path(args.input)
    recs = _select(src, args.domain, args.split)
    out = _out_dir(args.out)
    y = denoise(net, _load(src, recs), resolution=resolution)
    records = []
    for r, v in zip(recs, y):
        rec = Record(r.id, f"images/{r.domain.value}/{r.split}/{r.id}.ldos", r.domain, r.split, r.id)
        records.append(_store(out, rec, v, None, not args.no_preview))
    write_manifest(out, records)
    _finish(out, cfg, "denoise", {"checkpoint": _input_hash(Path(args.checkpoint)), "input": _input_hash(src)}, {}, {"which": args.which})
    print(f"wrote {len(records)} denoised images to {out}")


def _reference_for(rec: Record, refs: dict[str, Record]) -> Record:
    seen = set()
    cur = rec
    while cur.source is not None and cur.source not in seen:
        seen.add(cur.source)
        if cur.source not in refs:
            break
        cur = refs[cur.source]
        if cur.domain == DomainTag.SIM_CLEAR:
            return cur
    raise DataConfigError(f"no clean reference found for {rec.id}")


def cmd_evaluate(args, cfg: RunConfig) -> None:
    src = Path(args.input)
    recs = _select(src, args.domain, args.split)
    x = _load(src, recs)
    inputs = {"input": _input_hash(src)}
    refs = None
    if args.ref:
        ref_dir = Path(args.ref)
        ref_recs = {r.id: r for r in read_manifest(ref_dir)}
        refs = _load(ref_dir, [_reference_for(r, ref_recs) for r in recs])
        inputs["reference"] = _input_hash(ref_dir)
    report = evaluate_suite(list(x), None if refs is None else list(refs), cfg.metrics, ids=[r.id for r in recs])
    out = _out_dir(args.out)
    report.write(out)
    _finish(out, cfg, "evaluate", inputs, {})
    print(report.to_table())


ABLATION_COLUMNS = ("mse", "psnr", "ssim", "brisque", "piqe")


def _ablation_table(rows: list[dict]) -> str:
    lines = [f"{'variant':<14}" + "".join(f"{c:>12}" for c in ABLATION_COLUMNS)]
    for row in rows:
        cells = []
        for c in ABLATION_COLUMNS:
            v = row[c]
            cells.append(f"{'n/a':>12}" if v is None else f"{'inf':>12}" if v == float("inf") else f"{v:>12.4f}")
        lines.append(f"{row['variant']:<14}" + "".join(cells))
    return "\n".join(lines)


def cmd_ablate(args, cfg: RunConfig) -> None:
    workspace = Path(args.data)
    out = _out_dir(args.out)
    x_sim, y_sim, sim_ids = load_test_pairs(workspace)
    exp_recs = _select(workspace, DomainTag.EXP.value, "test")
    x_exp = _load(workspace, exp_recs)
    rows = []
    for name in args.variants:
        vcfg = cfg.with_train(variant_config(cfg.train, name))
        run = _out_dir(out / name)
        result = _train_one(workspace, run, vcfg, resume=args.resume)
        nets = result.state.nets
        # Without domain adaptation the experimental images go through G_D.
        exp_net = nets.G_DA if vcfg.train.weights.lambda_DA > 0 else nets.G_D
        full = evaluate_suite(list(denoise(nets.G_D, x_sim)), list(y_sim), cfg.metrics, ids=sim_ids)
        blind = evaluate_suite(list(denoise(exp_net, x_exp)), None, cfg.metrics, ids=[r.id for r in exp_recs])
        full.write(run / "simulated")
        blind.write(run / "experimental")
        rows.append({"variant": name, **full.aggregate, **blind.aggregate})
        log.info("variant %s done", name)
    inputs_full = evaluate_suite(list(x_sim), list(y_sim), cfg.metrics)
    inputs_blind = evaluate_suite(list(x_exp), None, cfg.metrics)
    payload = {
        "rows": [{k: ("inf" if v == float("inf") else v) for k, v in r.items()} for r in rows],
        "inputs": {**inputs_full.aggregate, **inputs_blind.aggregate},
    }
    payload["inputs"] = {k: ("inf" if v == float("inf") else v) for k, v in payload["inputs"].items()}
    (out / "ablation.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    table = _ablation_table(rows)
    (out / "ablation.txt").write_text(table + "\n")
    _finish(out, cfg, "ablate", {"data": _input_hash(workspace)}, {"train": cfg.train.seed}, {"variants": list(args.variants)})
    print(table)


# --- argument parsing ------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [physics] [degrade] [data] [train] [metrics] sections")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override one config key (repeatable)")
    common.add_argument("--preset", choices=sorted(PRESETS), help="named bundle of overrides applied before the config file")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="stmdenoise", description="Simulate, degrade, train and evaluate STM image denoisers.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="generate clean LDOS images")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, help="number of images (default data.per_domain)")
    s.add_argument("--seed", type=int, help="master seed (default data.seed)")
    s.add_argument("--no-preview", action="store_true", help="skip the PNG previews")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("degrade", parents=[common], help="apply synthetic acquisition artifacts to a dataset")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--pseudo-exp", action="store_true", help="use the degrade.exp_* artifact mix and tag images as experimental")
    s.add_argument("--seed", type=int, help="override degrade.seed")
    s.add_argument("--domain", choices=[d.value for d in DomainTag])
    s.add_argument("--split")
    s.add_argument("--no-preview", action="store_true")
    s.set_defaults(func=cmd_degrade)

    s = sub.add_parser("prepare", parents=[common], help="assemble a training workspace with all three domains and test sets")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("train", parents=[common], help="train on a prepared workspace")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--variant", choices=sorted(VARIANTS), help="ablation variant (default: config weights as given)")
    s.add_argument("--resume", action="store_true", help="continue from OUT/checkpoint.pt")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("denoise", parents=[common], help="run a trained generator over a dataset")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--which", choices=("GD", "GDA"), default="GD")
    s.add_argument("--domain", choices=[d.value for d in DomainTag])
    s.add_argument("--split")
    s.add_argument("--no-preview", action="store_true")
    s.set_defaults(func=cmd_denoise)

    s = sub.add_parser("evaluate", parents=[common], help="score images, against references when --ref is given")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--ref", help="dataset holding the clean references (followed through source ids)")
    s.add_argument("--out", required=True)
    s.add_argument("--domain", choices=[d.value for d in DomainTag])
    s.add_argument("--split")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("ablate", parents=[common], help="train and score the four ablation variants")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--variants", nargs="+", choices=list(VARIANTS), default=list(VARIANTS))
    s.add_argument("--resume", action="store_true")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.build(args.config, args.set, args.preset)
        args.func(args, cfg)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - last-resort runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
