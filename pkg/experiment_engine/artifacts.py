"""
运行目录中的产物文件名与 manifest 读写
"""
import json
from pathlib import Path
from typing import Any, Dict, Union

from services.generator_trainer import BEST_CHECKPOINT, LATEST_CHECKPOINT

TRAIN_CSV = "train.csv"
TEST_CSV = "test.csv"
CLASSIFIER_FILE = "classifier.json"
EPOCHS_CSV = "epochs.csv"
REPORT_FILE = "report.json"
VERDICT_FILE = "verdict.json"
SAMPLES_CSV = "samples.csv"
MANIFEST_FILE = "manifest.json"
CONFIG_FILE = "config.yaml"

__all__ = [
    "TRAIN_CSV",
    "TEST_CSV",
    "CLASSIFIER_FILE",
    "EPOCHS_CSV",
    "REPORT_FILE",
    "VERDICT_FILE",
    "SAMPLES_CSV",
    "MANIFEST_FILE",
    "CONFIG_FILE",
    "LATEST_CHECKPOINT",
    "BEST_CHECKPOINT",
    "write_manifest",
    "read_manifest",
]


def write_manifest(run_dir: Union[str, Path], manifest: Dict[str, Any]) -> Path:
    path = Path(run_dir) / MANIFEST_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str), encoding="utf-8")
    return path


def read_manifest(run_dir: Union[str, Path]) -> Dict[str, Any]:
    path = Path(run_dir) / MANIFEST_FILE
    if not path.exists():
        return {}
    return json.loads(path.read_text(encoding="utf-8"))
