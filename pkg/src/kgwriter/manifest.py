"""Run manifests: what a command read, what it wrote, under which config.

One JSON file per command in the output directory, written atomically at
the end of the run. Identical inputs give identical manifests apart from
the wall-clock field.
"""

import hashlib
import json
import os
import time
from dataclasses import asdict


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


class RunClock:
    def __init__(self):
        self.started = time.monotonic()

    def elapsed(self):
        return time.monotonic() - self.started


def write_manifest(out_dir, command, cfg, overrides, inputs, outputs, clock):
    """``inputs`` maps role -> path; ``outputs`` is a list of paths."""
    from . import kernels

    data = {
        "command": command,
        "config": asdict(cfg),
        "config_hash": cfg.digest(),
        "config_overrides": dict(sorted(overrides.items())),
        "seed": cfg.seed,
        "backend": kernels.BACKEND,
        "inputs": {role: {"path": str(path), "sha256": file_digest(path)}
                   for role, path in sorted(inputs.items())},
        "outputs": [str(p) for p in outputs],
        "wall_time_s": round(clock.elapsed(), 3),
    }
    path = os.path.join(out_dir, f"manifest-{command}.json")
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(data, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
    return path
