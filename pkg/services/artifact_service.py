import csv
import hashlib
import json
import logging
import os
import shutil
import tempfile
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from models import ManifestEntry, RunManifest
from config import config

logger = logging.getLogger(__name__)


def format_value(value: Any) -> str:
    """CSV cell text; floats use repr so identical runs give identical bytes"""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _json_default(value: Any):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, datetime):
        return value.isoformat()
    if hasattr(value, "model_dump"):
        return value.model_dump(mode="json")
    raise TypeError(f"cannot serialize {type(value).__name__}")


class ArtifactService:
    """Writes a run's files into a staging directory and publishes them with a manifest.

    Nothing appears under the output directory until ``commit``; a failed run
    calls ``discard`` and leaves no partial artifacts behind.
    """

    def __init__(self, out_dir: Optional[str] = None, prefix: str = ""):
        self.out_dir = Path(out_dir or config.OUTPUT_DIR)
        self.prefix = prefix
        parent = self.out_dir.parent
        if not parent.exists():
            parent.mkdir(parents=True, exist_ok=True)
            logger.info(f"Created output parent directory: {parent}")
        self.staging = Path(tempfile.mkdtemp(prefix=f".{self.out_dir.name}-staging-", dir=parent))
        self.files: List[str] = []
        logger.info(f"Artifact service initialized: staging in {self.staging}")

    def _path(self, name: str) -> Path:
        name = self.prefix + name
        if name not in self.files:
            self.files.append(name)
        return self.staging / name

    def write_csv(self, name: str, header: Sequence[Any], rows: Iterable[Sequence[Any]]) -> str:
        path = self._path(name)
        try:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow([format_value(h) for h in header])
                for row in rows:
                    writer.writerow([format_value(v) for v in row])
        except OSError as e:
            logger.error(f"Error writing {path}: {e}")
            raise
        return path.name

    def write_json(self, name: str, payload: Dict[str, Any]) -> str:
        path = self._path(name)
        try:
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
                fh.write("\n")
        except OSError as e:
            logger.error(f"Error writing {path}: {e}")
            raise
        return path.name

    def write_text(self, name: str, text: str) -> str:
        path = self._path(name)
        try:
            path.write_text(text, encoding="utf-8")
        except OSError as e:
            logger.error(f"Error writing {path}: {e}")
            raise
        return path.name

    @staticmethod
    def sha256(path: Path) -> str:
        digest = hashlib.sha256()
        with open(path, "rb") as fh:
            for block in iter(lambda: fh.read(1 << 20), b""):
                digest.update(block)
        return digest.hexdigest()

    def commit(self, **manifest_fields) -> RunManifest:
        """Hash every staged file, write manifest.json and move everything into the output directory"""
        try:
            entries = [
                ManifestEntry(name=name, sha256=self.sha256(self.staging / name), bytes=(self.staging / name).stat().st_size)
                for name in sorted(self.files)
            ]
            manifest = RunManifest(files=entries, artifact_version=config.ARTIFACT_VERSION, **manifest_fields)
            manifest_path = self.staging / f"{self.prefix}manifest.json"
            manifest_path.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")

            self.out_dir.mkdir(parents=True, exist_ok=True)
            for name in self.files + [manifest_path.name]:
                os.replace(self.staging / name, self.out_dir / name)
            shutil.rmtree(self.staging, ignore_errors=True)
            logger.info(f"Published {len(entries)} files and the manifest to {self.out_dir}")
            return manifest
        except OSError as e:
            logger.error(f"Error publishing artifacts to {self.out_dir}: {e}")
            self.discard()
            raise

    def discard(self):
        if self.staging.exists():
            shutil.rmtree(self.staging, ignore_errors=True)
            logger.info(f"Discarded staged artifacts in {self.staging}")
