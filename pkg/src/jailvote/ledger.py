"""Run manifest: which stage produced which outputs from which inputs.

Persisted to {workdir}/manifest.jsonl, one JSON object per stage. Entries
carry content hashes and no timestamps, so an identical rerun rewrites a
byte-identical manifest. Rerunning a stage replaces its entry in place.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .atomic import atomic_write_text
from .storage import file_sha256

logger = logging.getLogger(__name__)


@dataclass
class StageEntry:
    stage: str
    seed: int
    config_path: str | None
    version: str = __version__
    inputs: dict[str, str] = field(default_factory=dict)   # relative path → sha256
    outputs: dict[str, str] = field(default_factory=dict)
    params: dict[str, object] = field(default_factory=dict)


class RunLedger:
    """Per-workspace stage manifest (JSON lines, stage order preserved)."""

    def __init__(self, workdir: Path):
        self.workdir = workdir
        self.path = workdir / "manifest.jsonl"
        self._entries: list[StageEntry] = []
        self._load()

    def _load(self) -> None:
        if not self.path.exists():
            return
        for line in self.path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            try:
                self._entries.append(StageEntry(**json.loads(line)))
            except (json.JSONDecodeError, TypeError):
                logger.warning("skipping unreadable manifest line in %s", self.path)

    def _save(self) -> None:
        lines = [json.dumps(asdict(e), sort_keys=True) for e in self._entries]
        atomic_write_text(self.path, "\n".join(lines) + "\n" if lines else "")

    def _hashes(self, paths: list[Path]) -> dict[str, str]:
        out = {}
        for p in sorted(paths):
            if p.exists():
                try:
                    key = p.resolve().relative_to(self.workdir.resolve()).as_posix()
                except ValueError:
                    key = p.as_posix()
                out[key] = file_sha256(p)
        return out

    def record(
        self,
        stage: str,
        seed: int,
        config_path: Path | None,
        inputs: list[Path],
        outputs: list[Path],
        params: dict[str, object] | None = None,
    ) -> StageEntry:
        entry = StageEntry(
            stage=stage,
            seed=seed,
            config_path=str(config_path) if config_path else None,
            inputs=self._hashes(inputs),
            outputs=self._hashes(outputs),
            params=dict(params or {}),
        )
        for i, existing in enumerate(self._entries):
            if existing.stage == stage:
                self._entries[i] = entry
                break
        else:
            self._entries.append(entry)
        self._save()
        return entry

    def entry(self, stage: str) -> StageEntry | None:
        return next((e for e in self._entries if e.stage == stage), None)

    @property
    def stages(self) -> list[str]:
        return [e.stage for e in self._entries]
