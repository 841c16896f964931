import math

import numpy as np
import pytest

from llbsav import convergence as cv
from llbsav.config import constant_field, initial_field
from llbsav.fem import Coefficients

SIM1 = Coefficients(50.0, 0.5, 0.5, 1.0, 1.0)


def test_rates_from_errors():
    assert cv.rates_from_errors([4.0, 1.0, 0.25]) == pytest.approx([2.0, 2.0])
    assert cv.rates_from_errors([1.0, 0.5]) == pytest.approx([1.0])


def test_common_steps_example():
    c, f = cv.common_steps(2e-3, 1e-3, 1e-2)
    assert list(c) == [1, 2, 3, 4, 5]
    assert list(f) == [2, 4, 6, 8, 10]
    assert np.allclose(c * 2e-3, f * 1e-3)


def test_common_steps_fixed():
    c, f = cv.common_steps(1e-4, 1e-4, 1e-3)
    assert len(c) == 10 and np.array_equal(c, f)


def test_common_steps_stride():
    c, _ = cv.common_steps(1e-3, 1e-3, 1e-2, stride=3)
    assert list(c) == [3, 6, 9]


def test_common_steps_non_nested():
    with pytest.raises(ValueError, match="nested"):
        cv.common_steps(1e-3, 0.3e-3, 1e-2)


@pytest.mark.parametrize("text,kind,value", [("fixed", "fixed", 1e-3),
                                             ("fixed:5e-4", "fixed", 5e-4),
                                             ("proportional:0.1", "proportional", 0.1)])
def test_coupling_parse(text, kind, value):
    c = cv.Coupling.parse(text, 1e-3)
    assert (c.kind, c.value) == (kind, value)


@pytest.mark.parametrize("text", ["linear:2", "proportional:-1", "proportional"])
def test_coupling_rejects(text):
    with pytest.raises(ValueError):
        cv.Coupling.parse(text, 1e-3)


def test_proportional_coupling_halves():
    spec = cv.StudySpec(2, 3, cv.Coupling("proportional", 0.1), 1.0, SIM1,
                        initial_field("simulation1"))
    ks = [spec.coupling.step(m.h) for m in spec.meshes()]
    assert ks[0] == pytest.approx(0.1 * 2 * math.sqrt(2) / 2)
    assert ks[1] / ks[2] == pytest.approx(2.0)
    assert [len(t) for t in cv.sample_times(spec)] == [7, 14]


def test_constant_field_study_has_zero_error():
    spec = cv.StudySpec(2, 3, cv.Coupling("fixed", 1e-2), 3e-2, SIM1, constant_field([0.7, 0, 0]))
    rep = cv.run_study(spec)
    assert rep.n == [2, 4, 8]
    for s in cv.NORMS:
        assert max(rep.errors[s]) <= 1e-12


def _small_study(workers):
    spec = cv.StudySpec(2, 3, cv.Coupling("fixed", 1e-3), 3e-3, SIM1, initial_field("simulation1"))
    return cv.run_study(spec, workers=workers)


def test_study_deterministic_across_workers():
    a, b = _small_study(1), _small_study(3)
    assert a.errors == b.errors and a.energy_gap == b.energy_gap
    assert set(a.rates) == set(cv.NORMS)
    assert all(len(r) == 1 for r in a.rates.values())
    assert all(e > 0 for v in a.errors.values() for e in v)
    assert "rate l2" in a.summary()


def test_spec_validation():
    with pytest.raises(ValueError):
        cv.StudySpec(2, 1, cv.Coupling("fixed", 1e-3), 1.0, SIM1, initial_field("simulation1"))
    with pytest.raises(ValueError):
        cv.StudySpec(2, 2, cv.Coupling("fixed", 1e-3), 1.0, SIM1, initial_field("simulation1"),
                     norms=("h2",))
