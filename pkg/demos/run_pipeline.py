"""
End-to-end run on the bundled fixture
=====================================

Same as ``hpk run --config fixtures/pipeline/pipeline.json --out run/``.
"""

import json
import tempfile
from pathlib import Path

from hpk.pipeline import run_pipeline

fixture = Path(__file__).resolve().parents[1] / "fixtures" / "pipeline" / "pipeline.json"
with tempfile.TemporaryDirectory() as out:
    report = run_pipeline(fixture, out)
    for stage in report["stages"]:
        print(stage["name"], "->", ", ".join(stage["artifacts"]))
    print(json.loads((Path(out) / "metrics.json").read_text()))
