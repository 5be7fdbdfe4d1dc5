from __future__ import annotations

import shutil
from pathlib import Path

import pytest
from click.testing import CliRunner, Result

from codesumeval.cli import main

FIXTURES = Path(__file__).parent.parent / "fixtures"
WORKSPACE_FILES = ("run.yaml", "dataset.jsonl", "side.csv", "replay")


def copy_workspace(dest: Path) -> Path:
    """Copy the offline fixture run (config, dataset, recordings) into ``dest``."""
    dest.mkdir(parents=True, exist_ok=True)
    for name in WORKSPACE_FILES:
        src = FIXTURES / name
        if src.is_dir():
            shutil.copytree(src, dest / name)
        else:
            shutil.copy2(src, dest / name)
    return dest / "run.yaml"


@pytest.fixture
def workspace(tmp_path) -> Path:
    return copy_workspace(tmp_path / "run")


def run_cli(*args: str) -> Result:
    return CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)
