import copy
import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rclub import harness  # noqa: E402

SMALL = {
    "instance": {"u": 12, "m": 3, "d": 5, "pool": 60, "arms_per_round": 6,
                 "corrupted_fraction": 0.25, "noise_sd": 0.1},
    "corruption": {"k": 300},
    "run": {"T": 1500, "seeds": [0], "trace_downsample": 50, "track_clusters": True},
    "detector": {"detect_every": 500},
    "policies": [
        {"kind": "RCLUB_WCU", "alpha": 0.3, "C": 1.0, "alpha1": 0.3, "beta": 0.3},
        {"kind": "CLUB", "alpha1": 0.3, "beta": 0.3},
        {"kind": "LINUCB_IND", "beta": 0.3},
    ],
}


@pytest.fixture
def small_doc():
    """A fresh copy of a small, fast experiment document."""
    return copy.deepcopy(SMALL)


@pytest.fixture
def make_config(small_doc):
    def build(**sections):
        doc = copy.deepcopy(small_doc)
        for name, table in sections.items():
            if name == "policies":
                doc["policies"] = table
            else:
                doc.setdefault(name, {}).update(table)
        return harness.config_from_dict(doc)
    return build


_CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_CRITERIA] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, ok, detail)``."""
    def record(n, ok, detail):
        line = f"criterion {str(n):>3}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash[_CRITERIA][n] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines, key=lambda k: (int(str(k).rstrip("abcdefghijklmnopqrstuvwxyz")), str(k))):
            terminalreporter.write_line(lines[n])


def pytest_collection_modifyitems(config, items):
    if os.environ.get("RCLUB_FULLSCALE") == "1":
        return
    skip = pytest.mark.skip(reason="full-scale job; set RCLUB_FULLSCALE=1 to run")
    for item in items:
        if "fullscale" in item.keywords:
            item.add_marker(skip)
