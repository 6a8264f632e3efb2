"""Run manifest: written before a command's side effects, finalised when it ends."""

from __future__ import annotations

import json
import os
import platform
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional

from . import __version__

INCOMPLETE = "incomplete"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    path: Path
    command: str
    argv: List[str]
    seed: Optional[int] = None
    config: Dict = field(default_factory=dict)
    artifacts: List[str] = field(default_factory=list)
    status: str = INCOMPLETE
    exit_code: Optional[int] = None
    error: Optional[str] = None
    started: str = field(default_factory=_now)
    finished: Optional[str] = None
    version: str = __version__
    python: str = field(default_factory=lambda: platform.python_version())
    notes: Dict = field(default_factory=dict)

    def add(self, *paths) -> None:
        for p in paths:
            rel = os.path.relpath(p, self.path.parent)
            if rel not in self.artifacts:
                self.artifacts.append(rel)
        self.write()

    def write(self) -> None:
        doc = asdict(self)
        doc.pop("path")
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(doc, indent=2, default=str) + "\n")
        os.replace(tmp, self.path)

    def finalize(self, exit_code: int, error: Optional[str] = None) -> None:
        self.exit_code = exit_code
        self.status = "ok" if exit_code == 0 else "failed"
        self.error = error
        self.finished = _now()
        self.write()


def start(out_dir, command: str, argv=None, name: str = "run.json") -> RunManifest:
    m = RunManifest(Path(out_dir) / name, command, list(sys.argv[1:] if argv is None else argv))
    m.write()
    return m
