"""Durable snapshot history: one canonical index document per file.

Frames land as `<RFC3339-UTC>_<version>.xml` in a flat directory; writes
go through a temp file and an atomic rename, so a crash at any point
leaves either the complete frame or nothing with a frame-shaped name.
Retention pruning and range loading are directory scans; files that no
longer parse are skipped with a warning rather than failing the read.
"""

from __future__ import annotations

import logging
import os
import re
import tempfile
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from .model import MalformedDocument, parse_index

log = logging.getLogger(__name__)

DEFAULT_RETENTION_SECONDS = 7 * 86400

_FRAME_NAME_RE = re.compile(
    r"(\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}Z)_(\d+)\.xml\Z"
)


class OutOfOrderFrame(ValueError):
    pass


class NotFound(LookupError):
    pass


class InvalidRange(ValueError):
    pass


@dataclass(frozen=True)
class SnapshotFrame:
    captured_at: int
    version: int
    data: bytes

    def key(self) -> tuple[int, int]:
        return (self.captured_at, self.version)


def frame_filename(captured_at: int, version: int) -> str:
    stamp = datetime.fromtimestamp(captured_at, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    return f"{stamp}_{version}.xml"


def parse_frame_filename(name: str) -> Optional[tuple[int, int]]:
    match = _FRAME_NAME_RE.match(name)
    if not match:
        return None
    stamp = datetime.strptime(match.group(1), "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)
    return int(stamp.timestamp()), int(match.group(2))


class SnapshotStore:
    def __init__(self, directory: str | Path, retention_seconds: int = DEFAULT_RETENTION_SECONDS):
        if retention_seconds <= 0:
            raise ValueError("retention_seconds must be positive")
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.retention_seconds = retention_seconds

    def _listing(self) -> list[tuple[int, int, Path]]:
        entries = []
        for path in self.directory.iterdir():
            parsed = parse_frame_filename(path.name)
            if parsed is not None:
                entries.append((parsed[0], parsed[1], path))
        entries.sort(key=lambda e: (e[0], e[1]))
        return entries

    def latest_key(self) -> Optional[tuple[int, int]]:
        entries = self._listing()
        if not entries:
            return None
        captured_at, version, _ = entries[-1]
        return captured_at, version

    def store(self, frame: SnapshotFrame, now: Optional[int] = None) -> Path:
        """Atomically persist a frame that is strictly newer than the latest."""
        parse_index(frame.data)  # stored frames must be valid documents
        latest = self.latest_key()
        if latest is not None and frame.key() <= latest:
            raise OutOfOrderFrame(
                f"frame {frame.key()} is not newer than stored {latest}"
            )
        final = self.directory / frame_filename(frame.captured_at, frame.version)
        fd, tmp_name = tempfile.mkstemp(prefix=".frame-", suffix=".tmp", dir=self.directory)
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(frame.data)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp_name, final)
        except BaseException:
            try:
                os.unlink(tmp_name)
            except OSError:
                pass
            raise
        self.prune(now=frame.captured_at if now is None else now)
        return final

    def prune(self, now: int) -> list[Path]:
        """Drop frames older than the retention horizon."""
        removed = []
        horizon = now - self.retention_seconds
        for captured_at, _version, path in self._listing():
            if captured_at < horizon:
                try:
                    path.unlink()
                    removed.append(path)
                except OSError as exc:
                    log.warning("cannot prune %s: %s", path, exc)
        return removed

    def _read(self, captured_at: int, version: int, path: Path) -> Optional[SnapshotFrame]:
        try:
            data = path.read_bytes()
            parse_index(data)
        except (OSError, MalformedDocument) as exc:
            log.warning("skipping unreadable frame %s: %s", path.name, exc)
            return None
        return SnapshotFrame(captured_at=captured_at, version=version, data=data)

    def load_range(self, t0: int, t1: int) -> list[SnapshotFrame]:
        """Frames with t0 <= captured_at <= t1 in order; bad files skipped."""
        if t0 > t1:
            raise InvalidRange(f"t0 ({t0}) must not exceed t1 ({t1})")
        frames = []
        skipped = 0
        for captured_at, version, path in self._listing():
            if t0 <= captured_at <= t1:
                frame = self._read(captured_at, version, path)
                if frame is None:
                    skipped += 1
                else:
                    frames.append(frame)
        if skipped:
            log.warning("load_range skipped %d unreadable frame(s)", skipped)
        return frames

    def latest(self) -> SnapshotFrame:
        """Newest readable frame; NotFound on an empty (or fully bad) store."""
        for captured_at, version, path in reversed(self._listing()):
            frame = self._read(captured_at, version, path)
            if frame is not None:
                return frame
        raise NotFound(f"no snapshot frames in {self.directory}")

    def frame_at_or_before(self, timestamp: int) -> SnapshotFrame:
        """Nearest readable frame with captured_at <= timestamp (for replay)."""
        for captured_at, version, path in reversed(self._listing()):
            if captured_at <= timestamp:
                frame = self._read(captured_at, version, path)
                if frame is not None:
                    return frame
        raise NotFound(f"no frame at or before {timestamp}")
