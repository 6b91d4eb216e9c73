import functools

import numpy as np
import pytest

from shapedistill.datasets import SplitSpec, gen_f1, gen_f2, split
from shapedistill.teacher import TrainConfig, train_teacher

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []

TEACHER_ROWS = 30_000
SEEDS = (0, 1, 2)


def record(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@functools.lru_cache(maxsize=None)
def synthetic_splits(fn: str, seed: int, n: int = TEACHER_ROWS):
    gen = gen_f1 if fn == "f1" else gen_f2
    ds, truth = gen(n, seed)
    tr, va, te = split(ds, SplitSpec(seed=seed))
    return tr, va, te, truth


@functools.lru_cache(maxsize=None)
def trained_teacher(fn: str, arch: tuple, seed: int):
    """Teachers are expensive; every test shares one per (function, arch, seed)."""
    tr, va, _, _ = synthetic_splits(fn, seed)
    return train_teacher(tr, arch, TrainConfig(seed=seed), valid=va)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
