import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from profilekt.data import InteractionRecord, SequenceWindow

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

TABLE = "Making a Table from an Equation"
FRACTIONS = "Equivalent Fractions"
CONVERSION = "Conversion of Fraction Decimals Percents"

# the worked example: (KC, difficulty, correct) in order
CASE_STUDY = [
    (TABLE, 0.47, False), (TABLE, 0.64, False), (TABLE, 0.61, False),
    (FRACTIONS, 0.13, True), (FRACTIONS, 0.26, True), (FRACTIONS, 0.19, True),
    (FRACTIONS, 0.37, False), (FRACTIONS, 0.32, False), (FRACTIONS, 0.39, False),
    (CONVERSION, 0.17, True), (CONVERSION, 0.17, False),
]


def make_records(triples, student="s1", start=0):
    return [InteractionRecord(student, f"q{start + i}", (kc,) if isinstance(kc, str) else tuple(kc),
                              correct, 1000 * (start + i + 1), diff)
            for i, (kc, diff, correct) in enumerate(triples)]


@pytest.fixture
def case_history():
    return make_records(CASE_STUDY)


def random_window(rng, student, index, length, n_kcs=4):
    triples = [(f"K{int(rng.integers(n_kcs))}", round(float(rng.random()), 3), bool(rng.random() < 0.6))
               for _ in range(length)]
    return SequenceWindow(student, index, make_records(triples, student))


@pytest.fixture
def random_windows():
    rng = np.random.default_rng(7)
    return [random_window(rng, f"s{i:02d}", 0, int(rng.integers(5, 30))) for i in range(40)]


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(1e-8, float(np.max(np.abs(b)))))


LN = math.log


# acceptance criteria report one PASS/FAIL line each in the terminal summary
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n} {'PASS' if ok else 'FAIL'}: {title}{' | ' + detail if detail else ''}")
