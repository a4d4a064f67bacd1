"""Atomic file writes (temp file in same dir + os.replace)."""

import json
import os
import tempfile
import time
from pathlib import Path
from typing import Any, Callable

# os.replace retry schedule for transient external locks (antivirus, an
# editor holding the destination open on Windows).
_BACKOFF_DELAYS = (0.1, 0.2, 0.4, 0.8, 1.6)


def atomic_write(path: Path, write: Callable[[str], None]) -> None:
    """Produce `path` atomically: `write(tmp_path)` fills a temp file in the
    destination directory, which is then renamed onto `path`.

    Readers never observe a partial file. The temp file is removed if
    writing or every replace attempt fails.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        write(tmp)
        for attempt, delay in enumerate(_BACKOFF_DELAYS):
            try:
                os.replace(tmp, path)
                break
            except PermissionError:
                if attempt == len(_BACKOFF_DELAYS) - 1:
                    raise
                time.sleep(delay)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path: Path, text: str) -> None:
    """Write UTF-8 text to `path` atomically (LF line endings, no BOM)."""

    def _write(tmp: str) -> None:
        with open(tmp, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)

    atomic_write(path, _write)


def atomic_write_json(path: Path, obj: Any) -> None:
    """Write `obj` as indented JSON to `path` atomically."""

    def _write(tmp: str) -> None:
        with open(tmp, "w", encoding="utf-8", newline="\n") as f:
            json.dump(obj, f, indent=2, ensure_ascii=False, sort_keys=True)
            f.write("\n")

    atomic_write(path, _write)
