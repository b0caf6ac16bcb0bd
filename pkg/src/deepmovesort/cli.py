"""Command-line entry points: track, train-filter, eval, synth, inspect-model."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import formats
from .metrics import evaluate
from .synth import ScenarioConfig, generate, load_scenario
from .tracker import PRESETS, TrackerConfig, parse_config_text, run_sequence
from .training import (AugmentationConfig, TrainConfig, TrainingDiverged, build_model, make_windows,
                       tracks_from_ground_truth, train, write_loss_log)
from .transfilter import TransFilterConfig


class CliError(Exception):
    pass


# --------------------------------------------------------------------------- track


def load_tracker_config(path: str | None, preset: str | None) -> TrackerConfig:
    base = PRESETS[preset]() if preset else TrackerConfig()
    if path is None:
        return base
    try:
        return parse_config_text(Path(path).read_text(encoding="utf-8"), base)
    except ValueError as exc:
        raise CliError(f"{path}: {exc}") from None


def _seq_inputs(dets: Path, embeddings: str | None, cmc: str | None) -> dict:
    """Input files of one sequence; a directory holds det.txt plus optional embeddings.bin and cmc.txt."""
    if dets.is_dir():
        emb = dets / "embeddings.bin"
        cm = dets / "cmc.txt"
        info = dets / "seqinfo.json"
        return {"name": dets.name, "dets": dets / "det.txt",
                "embeddings": emb if emb.exists() else None, "cmc": cm if cm.exists() else None,
                "info": info if info.exists() else None}
    return {"name": dets.stem, "dets": dets, "embeddings": Path(embeddings) if embeddings else None,
            "cmc": Path(cmc) if cmc else None, "info": None}


def _image_size_from_info(cfg: TrackerConfig, info: Path | None) -> TrackerConfig:
    if info is None:
        return cfg
    data = json.loads(info.read_text(encoding="utf-8"))
    return dataclasses.replace(cfg, image_width=float(data["image_width"]),
                               image_height=float(data["image_height"]))


def track_one(job: dict) -> dict:
    cfg: TrackerConfig = _image_size_from_info(job["config"], job["inputs"]["info"])
    inputs = job["inputs"]
    model = formats.load_model(job["model"]) if job["model"] else None
    dets = formats.read_detections(inputs["dets"])
    if cfg.ha.weights.appearance > 0 and inputs["embeddings"] is None:
        raise CliError("appearance weight ha.reid.weight is nonzero but no --embeddings file was given "
                       "(set ha.reid.weight=0 to track without embeddings)")
    emb = None
    if inputs["embeddings"] is not None and cfg.ha.weights.appearance > 0:
        emb = formats.read_embeddings(inputs["embeddings"])
        for f, boxes in dets.items():
            got = len(emb.get(f, ()))
            if got != len(boxes):
                raise CliError(f"{inputs['embeddings']}: frame {f + 1} has {got} embeddings for {len(boxes)} detections")
    cmc = formats.read_cmc(inputs["cmc"]) if inputs["cmc"] is not None else None
    n_frames = job.get("n_frames") or ((max(dets) + 1) if dets else 0)
    start = time.perf_counter()
    records = run_sequence(cfg, dets, emb, cmc, model, n_frames)
    elapsed = time.perf_counter() - start
    Path(job["out"]).parent.mkdir(parents=True, exist_ok=True)
    formats.write_results(job["out"], records)
    if job.get("overlay_dir"):
        write_overlays(Path(job["overlay_dir"]) / inputs["name"], records, cfg.image_size)
    return {"name": inputs["name"], "frames": n_frames, "records": len(records),
            "tracks": len({r.id for r in records}), "seconds": elapsed}


def write_overlays(out_dir: Path, records, image_size) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.patches import Rectangle

    out_dir.mkdir(parents=True, exist_ok=True)
    by_frame: dict[int, list] = {}
    for r in records:
        by_frame.setdefault(r.frame, []).append(r)
    cmap = plt.get_cmap("tab20")
    for f in sorted(by_frame):
        fig, ax = plt.subplots(figsize=(6.4, 6.4 * image_size[1] / image_size[0]), dpi=100)
        ax.set_xlim(0, image_size[0])
        ax.set_ylim(image_size[1], 0)
        for r in by_frame[f]:
            b = r.box
            ax.add_patch(Rectangle((b.x_left, b.y_top), b.width, b.height, fill=False, color=cmap(r.id % 20)))
            ax.text(b.x_left, b.y_top, str(r.id), color=cmap(r.id % 20), fontsize=7)
        ax.set_title(f"frame {f + 1}")
        fig.savefig(out_dir / f"{f + 1:06d}.png", metadata={"Software": None})
        plt.close(fig)


def cmd_track(args) -> int:
    cfg = load_tracker_config(args.config, args.preset)
    dets = Path(args.dets)
    if not dets.exists():
        raise CliError(f"--dets {dets} does not exist")
    if args.model and not Path(args.model).exists():
        raise CliError(f"--model {args.model} does not exist")
    if args.embeddings and not Path(args.embeddings).exists():
        raise CliError(f"--embeddings {args.embeddings} does not exist")
    jobs = []
    if dets.is_dir() and not (dets / "det.txt").exists():
        seqs = sorted(p for p in dets.iterdir() if p.is_dir() and (p / "det.txt").exists())
        if not seqs:
            raise CliError(f"{dets} holds no sequence directories with det.txt")
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        for s in seqs:
            jobs.append({"inputs": _seq_inputs(s, None, None), "out": out_dir / f"{s.name}.txt"})
    else:
        jobs.append({"inputs": _seq_inputs(dets, args.embeddings, args.cmc), "out": Path(args.out)})
    for j in jobs:
        j.update(config=cfg, model=args.model, overlay_dir=args.overlay_dir, n_frames=args.n_frames)
    if args.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            summaries = list(pool.map(track_one, jobs))
    else:
        summaries = [track_one(j) for j in jobs]
    for s in summaries:
        line = f"sequence={s['name']} frames={s['frames']} tracks={s['tracks']} records={s['records']}"
        if args.timing:
            fps = s["frames"] / s["seconds"] if s["seconds"] > 0 else float("inf")
            line += f" seconds={s['seconds']:.3f} fps={fps:.1f}"
        print(line)
    return 0


# --------------------------------------------------------------------------- train-filter


def load_train_config(path: str | None, seed: int | None) -> tuple[TransFilterConfig, TrainConfig, AugmentationConfig, dict]:
    """JSON file with optional sections ``architecture``, ``training``, ``augmentation`` and ``data``."""
    raw = json.loads(Path(path).read_text(encoding="utf-8")) if path else {}
    unknown = set(raw) - {"architecture", "training", "augmentation", "data"}
    if unknown:
        raise CliError(f"unknown training config sections: {sorted(unknown)}")
    data = {"stride": 1, "m_max": None, "image_width": None, "image_height": None, **raw.get("data", {})}
    training = dict(raw.get("training", {}))
    augmentation = dict(raw.get("augmentation", {}))
    if seed is not None:
        training["seed"] = seed
        augmentation["seed"] = seed
    try:
        arch = TransFilterConfig(**raw.get("architecture", {}))
        return arch, TrainConfig(**training), AugmentationConfig(**augmentation), data
    except TypeError as exc:
        raise CliError(f"training config: {exc}") from None


def _gt_files(gt_dir: Path) -> list[tuple[str, Path, Path | None]]:
    out = []
    for p in sorted(gt_dir.iterdir()):
        if p.is_dir() and (p / "gt.txt").exists():
            info = p / "seqinfo.json"
            out.append((p.name, p / "gt.txt", info if info.exists() else None))
        elif p.suffix == ".txt":
            out.append((p.stem, p, None))
    return out


def cmd_train(args) -> int:
    if args.resume:
        raise CliError("--resume is not supported; training always starts from a fresh initialization")
    gt_dir = Path(args.gt_dir)
    if not gt_dir.is_dir():
        raise CliError(f"--gt-dir {gt_dir} is not a directory")
    try:
        arch, tcfg, aug, data = load_train_config(args.train_config, args.seed)
    except ValueError as exc:
        raise CliError(f"training config: {exc}") from None
    m_max = data["m_max"] or arch.horizon
    windows = []
    for name, gt_path, info in _gt_files(gt_dir):
        size = (data["image_width"], data["image_height"])
        if info is not None:
            meta = json.loads(info.read_text(encoding="utf-8"))
            size = (meta["image_width"], meta["image_height"])
        if size[0] is None or size[1] is None:
            raise CliError(f"{name}: image size unknown; add seqinfo.json or data.image_width/height")
        tracks = tracks_from_ground_truth(formats.read_tracks(gt_path), size)
        windows += make_windows(tracks, arch.history, m_max, data["stride"], name)
    if len(windows) < 2:
        raise CliError(f"{gt_dir}: not enough ground-truth tracks to build training windows")
    model = build_model(windows, arch, tcfg.seed, aug)

    def log(epoch, loss):
        print(f"epoch={epoch} loss={loss:.6f}", file=sys.stderr)

    result = train(model, windows, tcfg, aug, log=log)
    formats.save_model(args.out_model, result.model)
    write_loss_log(args.loss_log or f"{args.out_model}.loss.txt", result.loss_history)
    print(f"windows={len(windows)} parameters={model.n_parameters()} final_loss={result.loss_history[-1]:.6f}")
    return 0


# --------------------------------------------------------------------------- eval


def _pairs(gt: Path, results: Path) -> list[tuple[str, Path, Path]]:
    if gt.is_dir():
        out = []
        for name, gt_path, _ in _gt_files(gt):
            res = results / f"{name}.txt"
            if not res.exists():
                raise CliError(f"no result file {res} for sequence {name}")
            out.append((name, gt_path, res))
        return out
    return [(gt.stem, gt, results)]


def eval_one(job: tuple[str, Path, Path]):
    name, gt_path, res_path = job
    return name, evaluate(formats.read_ground_truth(gt_path), formats.read_results(res_path))


def cmd_eval(args) -> int:
    gt, results = Path(args.gt), Path(args.results)
    for p, flag in ((gt, "--gt"), (results, "--results")):
        if not p.exists():
            raise CliError(f"{flag} {p} does not exist")
    jobs = _pairs(gt, results)
    if args.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            reports = list(pool.map(eval_one, jobs))
    else:
        reports = [eval_one(j) for j in jobs]
    print(f"{'sequence':<20} {'MOTA':>8} {'IDF1':>8} {'IDSW':>6} {'FP':>7} {'FN':>7}")
    for name, r in reports:
        print(f"{name:<20} {r.mota:>8.4f} {r.idf1:>8.4f} {r.id_switches:>6d} {r.false_positives:>7d} "
              f"{r.false_negatives:>7d}")
    print()
    for name, r in reports:
        prefix = f"{name}." if len(reports) > 1 else ""
        for key in ("mota", "idf1", "id_switches", "false_positives", "false_negatives"):
            value = getattr(r, key)
            print(f"{prefix}{key}={value!r}" if isinstance(value, float) else f"{prefix}{key}={value}")
    return 0


# --------------------------------------------------------------------------- synth / inspect


def cmd_synth(args) -> int:
    cfg = load_scenario(args.scenario_config) if args.scenario_config else ScenarioConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    seq = generate(cfg)
    seq.write(args.out_dir)
    print(f"frames={cfg.n_frames} objects={len(seq.objects)} "
          f"detections={sum(len(v) for v in seq.detections.values())} out={args.out_dir}")
    return 0


def cmd_inspect(args) -> int:
    model = formats.load_model(args.model)
    print(f"format_version={formats.MODEL_VERSION}")
    for k, v in model.cfg.to_dict().items():
        print(f"architecture.{k}={v}")
    print(f"parameters={model.n_parameters()}")
    for k, v in model.stats.to_dict().items():
        print(f"stats.{k}={' '.join(f'{x:.6g}' for x in v)}")
    return 0


# --------------------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="tracker config file (key=value lines)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed override")
    common.add_argument("--timing", action="store_true", default=argparse.SUPPRESS,
                        help="report wall-clock throughput")

    parser = argparse.ArgumentParser(prog="deepmovesort", parents=[common],
                                     description="Multi-object tracking with a learned motion filter.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("track", parents=[common], help="run the tracker on detections")
    p.add_argument("--dets", required=True, help="MOT detection file, sequence directory or directory of sequences")
    p.add_argument("--embeddings", help="appearance embedding file (binary or CSV)")
    p.add_argument("--cmc", help="camera motion file")
    p.add_argument("--model", help="learned filter model; the Kalman filter is used when absent")
    p.add_argument("--preset", choices=sorted(PRESETS), help="start from a benchmark preset")
    p.add_argument("--out", required=True, help="result file, or output directory for many sequences")
    p.add_argument("--n-frames", type=int, help="sequence length (default: last detection frame)")
    p.add_argument("--workers", type=int, default=1, help="sequences processed concurrently")
    p.add_argument("--overlay-dir", help="write per-frame overlay images here")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("train-filter", parents=[common], help="train the learned motion filter")
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--train-config", help="JSON training config")
    p.add_argument("--out-model", required=True)
    p.add_argument("--loss-log", help="loss history path (default: <out-model>.loss.txt)")
    p.add_argument("--resume", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score results against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--results", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic sequence")
    p.add_argument("--scenario-config", help="JSON scenario config")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("inspect-model", parents=[common], help="print a model file's header")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("timing", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (CliError, formats.FormatError, ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
