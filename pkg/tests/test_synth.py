import io
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from profilekt.data import parse_interactions
from profilekt.synth import CohortConfig, SynthStudentParams, generate_cohort, generate_student, write_cohort

POOL = ["A", "B", "C"]


def params(l0=0.0, t=0.0, s=0.0, g=0.0):
    return SynthStudentParams({k: l0 for k in POOL}, {k: t for k in POOL}, s, g)


def outcomes(trace):
    return np.array([r.correct for r in trace.sequence.records])


def test_fully_mastered_never_slips():
    assert outcomes(generate_student(params(l0=1.0), POOL, 300, seed=1)).all()


def test_never_learns_never_guesses():
    assert not outcomes(generate_student(params(), POOL, 300, seed=1)).any()


def test_guess_rate_law_of_large_numbers():
    rate = outcomes(generate_student(params(g=0.2), POOL, 10_000, seed=5)).mean()
    assert abs(rate - 0.2) <= 0.01


def test_response_rates_given_mastery_state():
    # pool of mastered/unmastered KCs, many steps; compare empirical rates with 1 - p_S and p_G
    p = SynthStudentParams({"A": 1.0, "B": 0.0}, {"A": 0.0, "B": 0.0}, 0.1, 0.3)
    tr = generate_student(p, ["A", "B"], 40_000, seed=2)
    kc = np.array([r.kc_ids[0] for r in tr.sequence.records])
    y = outcomes(tr)
    for name, expected in (("A", 0.9), ("B", 0.3)):
        sel = kc == name
        n = sel.sum()
        # 4-sigma binomial band
        assert abs(y[sel].mean() - expected) < 4 * np.sqrt(expected * (1 - expected) / n)


@pytest.mark.parametrize("bad", [
    dict(s=1.0), dict(g=-0.1), dict(s=0.6, g=0.5), dict(l0=1.2), dict(t=-0.5),
])
def test_invalid_probabilities(bad):
    with pytest.raises(ValueError):
        generate_student(params(**bad), POOL, 5, seed=0)


def test_preconditions():
    with pytest.raises(ValueError):
        generate_student(params(), POOL, 0, seed=0)
    with pytest.raises(ValueError):
        generate_student(params(), [], 5, seed=0)


@given(st.integers(0, 10_000), st.floats(0, 1), st.floats(0, 1))
def test_mastery_monotone(seed, l0, t):
    tr = generate_student(params(l0=l0, t=t, s=0.1, g=0.1), POOL, 80, seed=seed,
                          active_kcs=2, advance_every=20)
    assert (np.diff(tr.mastery.astype(int), axis=0) >= 0).all()


def test_curriculum_window_slides():
    tr = generate_student(params(), ["A", "B", "C", "D"], 40, seed=0, active_kcs=2, advance_every=10)
    kcs = [r.kc_ids[0] for r in tr.sequence.records]
    assert set(kcs[:10]) <= {"A", "B"}
    assert set(kcs[30:]) <= {"C", "D"}


def test_seed_determinism():
    a = generate_student(params(t=0.2, g=0.2), POOL, 50, seed=9)
    b = generate_student(params(t=0.2, g=0.2), POOL, 50, seed=9)
    assert a.sequence.records == b.sequence.records and (a.mastery == b.mastery).all()


def test_cohort_examples():
    assert generate_cohort(0, seed=1) == []
    cfg = CohortConfig(n_steps=(30, 40))
    a, b = generate_cohort(5, cfg, seed=3), generate_cohort(5, cfg, seed=3)
    assert [t.sequence.records for t in a] == [t.sequence.records for t in b]


def test_default_cohort_total_interactions():
    cohort = generate_cohort(200, seed=0)
    lo, hi = CohortConfig().n_steps
    lengths = [len(t.sequence.records) for t in cohort]
    assert all(lo <= n <= hi for n in lengths)
    assert sum(lengths) == sum(t.mastery.shape[0] for t in cohort)
    assert len({t.sequence.student_id for t in cohort}) == 200


def test_written_cohort_round_trips_through_parser():
    cohort = generate_cohort(3, CohortConfig(n_steps=(20, 25)), seed=0)
    csv_out, latent = io.StringIO(), io.StringIO()
    write_cohort(cohort, csv_out, latent)
    parsed = parse_interactions(csv_out.getvalue())
    assert parsed.dropped == 0
    assert parsed.records == [r for t in cohort for r in t.sequence.records]
    rows = [json.loads(l) for l in latent.getvalue().splitlines()]
    assert len(rows) == len(parsed.records)
    assert set(rows[0]["mastered"]) == set(cohort[0].kc_pool)
