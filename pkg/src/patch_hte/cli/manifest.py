"""
manifest.py - the record every command run leaves behind.

A `RunRecorder` collects stage timings, row counts, input hashes, skipped
frames and written files while a command runs; `RunRecorder.write` turns them
into ``manifest_<command>.json`` in the output directory, on success and on
failure alike.
"""

from __future__ import annotations

import json
import logging
import time
from contextlib import contextmanager
from pathlib import Path

from pydantic import BaseModel, Field

from patch_hte import __version__
from patch_hte.config.settings import RunConfig
from patch_hte.services.frames import SkipRecord
from patch_hte.utils.files import atomic_write_text, sha256_file

logger = logging.getLogger(__name__)


class StageRecord(BaseModel):
    name: str
    seconds: float
    rows: dict[str, int] = Field(default_factory=dict)

    model_config = dict(extra="forbid", frozen=True)  # help catch typos


class RunManifest(BaseModel):
    command: str
    tool_version: str
    config: dict | None
    seed: int | None
    input_sha256: dict[str, str] = Field(default_factory=dict)
    stages: tuple[StageRecord, ...] = ()
    skipped: tuple[SkipRecord, ...] = ()
    outputs: tuple[str, ...] = ()
    exit_code: int = 0
    error: str | None = None

    model_config = dict(extra="forbid", frozen=True)  # help catch typos


class RunRecorder:
    def __init__(self, command: str) -> None:
        self.command = command
        self.config: RunConfig | None = None
        self.input_sha256: dict[str, str] = {}
        self.stages: list[StageRecord] = []
        self.skipped: list[SkipRecord] = []
        self.outputs: list[Path] = []

    def use_config(self, config: RunConfig) -> None:
        self.config = config
        for name in ("matches", "player_matches", "champions"):
            path = getattr(config.inputs, name)
            if path is not None and Path(path).is_file():
                self.input_sha256[name] = sha256_file(path)

    def hash_input(self, name: str, path: Path) -> None:
        self.input_sha256[name] = sha256_file(path)

    @contextmanager
    def stage(self, name: str):
        """Time a stage; the yielded dict collects its row counts."""
        rows: dict[str, int] = {}
        start = time.perf_counter()
        try:
            yield rows
        finally:
            seconds = time.perf_counter() - start
            self.stages.append(StageRecord(name=name, seconds=round(seconds, 6), rows=rows))
            logger.info(f"[cli] Stage '{name}' took {seconds:.2f}s {rows or ''}".rstrip())

    def wrote(self, path: Path) -> Path:
        self.outputs.append(Path(path))
        return path

    def manifest(self, exit_code: int, error: str | None = None) -> RunManifest:
        return RunManifest(
            command=self.command,
            tool_version=__version__,
            config=self.config.model_dump(mode="json") if self.config is not None else None,
            seed=self.config.seed if self.config is not None else None,
            input_sha256=dict(sorted(self.input_sha256.items())),
            stages=tuple(self.stages),
            skipped=tuple(self.skipped),
            outputs=tuple(str(p) for p in self.outputs),
            exit_code=exit_code,
            error=error,
        )

    def write(self, out_dir: Path, exit_code: int, error: str | None = None) -> Path:
        path = Path(out_dir) / f"manifest_{self.command}.json"
        doc = self.manifest(exit_code, error).model_dump(mode="json")
        atomic_write_text(path, json.dumps(doc, indent=2) + "\n")
        return path
