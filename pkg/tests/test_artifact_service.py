import hashlib
import json
from datetime import datetime

import numpy as np
import pytest

from services.artifact_service import ArtifactService, format_value


def _commit(artifacts):
    return artifacts.commit(config={"command": "qsd-eval"}, started_at=datetime(2024, 6, 1), wall_time_seconds=0.5,
                            status="completed", exit_code=0, criteria={"ok": True})


@pytest.mark.parametrize("value,text", [
    (None, ""),
    (True, "true"),
    (np.bool_(False), "false"),
    (np.int64(7), "7"),
    (0.1, "0.1"),
    (np.float64(1 / 3), repr(1 / 3)),
    ("nbbm", "nbbm"),
])
def test_format_value(value, text):
    assert format_value(value) == text


def test_nothing_published_before_commit(tmp_path):
    out = tmp_path / "run"
    artifacts = ArtifactService(str(out))
    artifacts.write_csv("table.csv", ["x", "y"], [(0.5, 1), (1.5, 2)])
    assert not out.exists()
    assert artifacts.staging.parent == tmp_path
    artifacts.discard()


def test_commit_publishes_files_and_manifest(tmp_path):
    out = tmp_path / "run"
    artifacts = ArtifactService(str(out), prefix="a_")
    artifacts.write_csv("table.csv", ["x", "y"], [(0.5, 1), (1.5, 2)])
    artifacts.write_json("summary.json", {"values": np.array([1.0, 2.0]), "n": np.int64(3)})
    artifacts.write_text("notes.md", "# run\n")
    manifest = _commit(artifacts)

    assert sorted(p.name for p in out.iterdir()) == ["a_manifest.json", "a_notes.md", "a_summary.json", "a_table.csv"]
    assert (out / "a_table.csv").read_text() == "x,y\n0.5,1\n1.5,2\n"
    assert json.loads((out / "a_summary.json").read_text()) == {"n": 3, "values": [1.0, 2.0]}

    assert [entry.name for entry in manifest.files] == ["a_notes.md", "a_summary.json", "a_table.csv"]
    for entry in manifest.files:
        data = (out / entry.name).read_bytes()
        assert entry.sha256 == hashlib.sha256(data).hexdigest()
        assert entry.bytes == len(data)

    on_disk = json.loads((out / "a_manifest.json").read_text())
    assert on_disk["status"] == "completed"
    assert on_disk["criteria"] == {"ok": True}
    assert not artifacts.staging.exists()


def test_discard_leaves_nothing(tmp_path):
    out = tmp_path / "run"
    artifacts = ArtifactService(str(out))
    artifacts.write_json("summary.json", {"a": 1})
    artifacts.discard()
    assert list(tmp_path.iterdir()) == []


def test_unserializable_payload(tmp_path):
    artifacts = ArtifactService(str(tmp_path / "run"))
    with pytest.raises(TypeError):
        artifacts.write_json("bad.json", {"value": object()})
    artifacts.discard()
