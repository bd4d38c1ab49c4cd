"""Run directories, manifests, and config files for the pipeline stages.

Every stage writes a ``manifest.json`` capturing its config, base seed,
input artifact hashes, and output hashes, so any result can be reproduced
from the manifest alone. Downstream stages re-hash their inputs against
the producing stage's manifest and refuse to run on tampered or missing
artifacts.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, fields
from pathlib import Path

from . import __version__


class ConfigError(ValueError):
    """Bad configuration: unknown keys, invalid values. Exit code 2."""


class ArtifactError(ValueError):
    """Missing or corrupted stage artifact. Exit code 3."""


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True, default=str).encode("utf-8")
    ).hexdigest()[:8]


def make_run_dir(root: str | Path, config: dict, stage: str) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = Path(root) / f"{stamp}_{stage}_{config_hash(config)}"
    run = base
    counter = 1
    while True:
        try:
            run.mkdir(parents=True, exist_ok=False)
            return run
        except FileExistsError:
            counter += 1
            run = base.with_name(f"{base.name}-{counter}")


def write_manifest(run_dir: str | Path, stage: str, config: dict, seed: int,
                   inputs: dict[str, str | Path], outputs: list[str | Path]) -> Path:
    run_dir = Path(run_dir)
    manifest = {
        "stage": stage,
        "version": __version__,
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "base_seed": seed,
        "config": config,
        "inputs": {name: {"path": str(p), "sha256": sha256_file(p)}
                   for name, p in inputs.items()},
        "outputs": {Path(p).name: sha256_file(p) for p in outputs},
    }
    path = run_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_manifest(run_dir: str | Path) -> dict:
    path = Path(run_dir) / "manifest.json"
    if not path.exists():
        raise ArtifactError(f"no manifest at {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def check_artifact(path: str | Path) -> Path:
    """Verify a stage output against its directory's manifest hash."""
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing artifact: {path}")
    manifest_path = path.parent / "manifest.json"
    if manifest_path.exists():
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        recorded = manifest.get("outputs", {}).get(path.name)
        if recorded is not None and recorded != sha256_file(path):
            raise ArtifactError(
                f"hash mismatch for {path}: artifact changed since its stage ran"
            )
    return path


def load_config_file(path: str | Path | None) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return raw


def build_config(dataclass_type, file_config: dict, flag_overrides: dict):
    """flags > config file > dataclass defaults; unknown keys rejected."""
    known = {f.name for f in fields(dataclass_type)}
    unknown = set(file_config) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    merged = dict(file_config)
    merged.update({k: v for k, v in flag_overrides.items() if v is not None})
    bad = set(merged) - known
    if bad:
        raise ConfigError(f"unknown config keys: {sorted(bad)}")
    try:
        return dataclass_type(**merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def dump_config(cfg) -> dict:
    return asdict(cfg)
