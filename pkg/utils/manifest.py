"""Run manifest: what was run, with which flags and on which exact inputs."""

import hashlib
import json
import logging
import os
import platform
from dataclasses import asdict, dataclass, field

import numpy as np

from config import settings

logger = logging.getLogger(__name__)


def file_digest(path, chunk_size=1 << 16):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(chunk_size), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    subcommand: str
    flags: dict
    seed: int | None
    inputs: dict = field(default_factory=dict)      # path -> sha256
    toolkit_version: str = settings.TOOLKIT_VERSION
    python_version: str = field(default_factory=platform.python_version)
    numpy_version: str = np.__version__

    @classmethod
    def for_run(cls, subcommand, flags, seed=None, input_paths=()):
        inputs = {}
        for path in input_paths:
            if path and os.path.isfile(path):
                inputs[path] = file_digest(path)
        clean = {k: v for k, v in flags.items() if k not in ("func", "handler")}
        return cls(subcommand=subcommand, flags=clean, seed=seed, inputs=inputs)

    def write(self, path):
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True, default=str)
        logger.info("Wrote run manifest to %s", path)
        return path
