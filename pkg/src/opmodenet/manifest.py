"""Stage manifests: input/output hashes plus the config digest, so every
stage is independently reproducible, resumable, and cache-checkable."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .errors import ConfigurationError

FORMAT_VERSION = 1


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest_path(output_dir: Path, stage: str) -> Path:
    return output_dir / f"{stage}.manifest.json"


def write_manifest(
    output_dir: Path,
    stage: str,
    inputs: dict[str, str],
    outputs: list[Path],
    config_digest: str,
    seed: int,
) -> Path:
    payload = {
        "format_version": FORMAT_VERSION,
        "stage": stage,
        "config_digest": config_digest,
        "seed": seed,
        "inputs": dict(sorted(inputs.items())),
        "outputs": {p.name: sha256_file(p) for p in sorted(outputs)},
    }
    path = manifest_path(output_dir, stage)
    path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")
    return path


def load_manifest(output_dir: Path, stage: str) -> dict | None:
    path = manifest_path(output_dir, stage)
    if not path.exists():
        return None
    return json.loads(path.read_text())


def stage_is_fresh(
    output_dir: Path,
    stage: str,
    inputs: dict[str, str],
    config_digest: str,
    force: bool = False,
) -> bool:
    """True when the stage's manifest matches current inputs/config and its
    outputs are intact.

    A manifest recorded under a different config digest means the output tree
    belongs to another run; resuming over it is refused unless forced.
    """
    if force:
        return False
    man = load_manifest(output_dir, stage)
    if man is None:
        return False
    if man.get("config_digest") != config_digest:
        raise ConfigurationError(
            f"{stage}: existing outputs in {output_dir} were produced with a "
            "different config (config-hash mismatch); rerun with --force to overwrite"
        )
    if man.get("inputs") != dict(sorted(inputs.items())):
        return False
    for name, digest in man.get("outputs", {}).items():
        path = output_dir / name
        if not path.exists() or sha256_file(path) != digest:
            return False
    return True
