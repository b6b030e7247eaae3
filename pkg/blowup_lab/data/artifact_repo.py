from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from jinja2 import Environment, FileSystemLoader, select_autoescape

from blowup_lab.config import settings
from blowup_lab.models.problem import ArtifactEntry, RunReport


class ArtifactIOError(Exception):
    def __init__(self, message: str, path: Path):
        super().__init__(message)
        self.path = path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class ArtifactRepo:
    """Writes run artifacts under one directory and keeps their manifest.

    Everything written through `write_json`/`write_csv` is checksummed; `report.json`
    and `summary.md` carry timings and are kept out of the manifest.
    """

    def __init__(self, out_dir: Path, prefix: str = ""):
        self.out_dir = Path(out_dir)
        self.prefix = prefix
        self._entries: dict[str, ArtifactEntry] = {}
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ArtifactIOError(f"Cannot create output directory {self.out_dir}: {e}", self.out_dir) from e

    def _path(self, name: str) -> Path:
        return self.out_dir / f"{self.prefix}{name}"

    def _write_text(self, path: Path, text: str) -> None:
        try:
            path.write_text(text, encoding="utf-8", newline="\n")
        except OSError as e:
            raise ArtifactIOError(f"Cannot write {path}: {e}", path) from e

    def _register(self, path: Path) -> ArtifactEntry:
        entry = ArtifactEntry(path=path.name, sha256=_sha256(path), bytes=path.stat().st_size)
        self._entries[path.name] = entry
        return entry

    # ---------- payloads ----------

    @staticmethod
    def dumps(payload: Any) -> str:
        return json.dumps(payload, sort_keys=True, indent=2, allow_nan=False) + "\n"

    def write_json(self, name: str, payload: Any) -> ArtifactEntry:
        path = self._path(name)
        self._write_text(path, self.dumps(payload))
        return self._register(path)

    def write_csv(self, name: str, header: Sequence[str], columns: Sequence[np.ndarray]) -> ArtifactEntry:
        """Columns of equal length; floats written with 17 significant digits."""
        path = self._path(name)
        table = np.column_stack([np.asarray(c, dtype=float) for c in columns]) if columns else np.empty((0, 0))
        try:
            np.savetxt(path, table, delimiter=",", header=",".join(header), comments="", fmt="%.17g")
        except OSError as e:
            raise ArtifactIOError(f"Cannot write {path}: {e}", path) from e
        return self._register(path)

    # ---------- manifest and report ----------

    @property
    def entries(self) -> list[ArtifactEntry]:
        return [self._entries[k] for k in sorted(self._entries)]

    def write_manifest(self) -> Path:
        path = self._path("manifest.json")
        self._write_text(path, self.dumps([e.model_dump() for e in self.entries]))
        return path

    def write_report(self, report: RunReport) -> Path:
        path = self._path("report.json")
        self._write_text(path, self.dumps(report.model_dump(mode="json")))
        return path

    def write_summary(self, report: RunReport) -> Path:
        env = Environment(
            loader=FileSystemLoader(settings.TEMPLATE_ROOT),
            autoescape=select_autoescape(enabled_extensions=()),
            keep_trailing_newline=True,
        )
        text = env.get_template("summary.md.j2").render(report=report)
        path = self._path("summary.md")
        self._write_text(path, text)
        return path

    def verify(self) -> list[str]:
        """Names whose on-disk checksum no longer matches the manifest."""
        return [e.path for e in self.entries if _sha256(self.out_dir / e.path) != e.sha256]
