import json

import numpy as np
import pytest

from ieegpredict.ieeg_io import Clip, Label, write_clip


def make_clip(samples, rate=400.0, label=Label.INTERICTAL, clip_id="c", patient_id="P1"):
    return Clip.from_array(np.asarray(samples, dtype=np.float32), rate, label=label,
                           clip_id=clip_id, patient_id=patient_id)


def write_manifest(root, patients):
    """patients: {pid: [(name, split, label, n_samples), ...]} -> manifest path."""
    doc = {"patients": []}
    for pid, clips in patients.items():
        (root / pid).mkdir(parents=True, exist_ok=True)
        entries = []
        for name, split, label, n in clips:
            rel = f"{pid}/{name}.iegb"
            write_clip(make_clip(np.ones((1, n)), label=label), root / rel)
            entries.append({"path": rel, "split": split})
        doc["patients"].append({"patient_id": pid, "clips": entries})
    path = root / "manifest.json"
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k)):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
