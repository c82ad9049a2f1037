from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

from pydantic import BaseModel

logger = logging.getLogger(__name__)


class OutputServiceError(RuntimeError):
    pass


@dataclass(frozen=True)
class OutputConfig:
    """Where result files go; created on first write."""

    directory: Path


class OutputService:
    """Writes CSV and JSON results. Each file appears complete or not at all."""

    def __init__(self, config: OutputConfig) -> None:
        self._config = config

    @property
    def directory(self) -> Path:
        return self._config.directory

    def _write_atomic(self, name: str, text: str) -> Path:
        target = self._config.directory / name
        tmp_path = None
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp_path = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
                handle.write(text)
            os.replace(tmp_path, target)
            return target
        except OSError as exc:
            logger.exception("Writing %s failed", target)
            if tmp_path is not None and os.path.exists(tmp_path):
                os.unlink(tmp_path)
            raise OutputServiceError(f"Failed to write output file {target}") from exc

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if value is None else value for value in row])
        return self._write_atomic(name, buffer.getvalue())

    def write_json(self, name: str, payload: BaseModel | dict[str, Any]) -> Path:
        if isinstance(payload, BaseModel):
            text = payload.model_dump_json(indent=2)
        else:
            text = json.dumps(payload, indent=2, sort_keys=True)
        return self._write_atomic(name, text + "\n")

    def write_text(self, name: str, text: str) -> Path:
        return self._write_atomic(name, text)
