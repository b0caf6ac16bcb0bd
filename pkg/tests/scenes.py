"""Small on-disk datasets shared by the CLI and acceptance tests."""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from deepmovesort.cli import main
from deepmovesort.synth import ScenarioConfig


def write_scenario(path: Path, **overrides) -> Path:
    cfg = dataclasses.replace(ScenarioConfig(n_frames=40, n_objects=3, noise_scale=0.02), **overrides)
    path.write_text(json.dumps(cfg.to_dict()))
    return path


def make_sequences(root: Path, seeds=(0, 1, 2), **overrides) -> Path:
    """Directory of synthetic sequences, each with det.txt, gt.txt, embeddings and seqinfo.json."""
    root.mkdir(parents=True, exist_ok=True)
    scenario = write_scenario(root.parent / f"{root.name}_scenario.json", **overrides)
    for s in seeds:
        code = main(["synth", "--scenario-config", str(scenario), "--seed", str(s), "--out-dir", str(root / f"seq{s}")])
        assert code == 0
    return root


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
