import math
import warnings

import numpy as np
import pytest

import oracles
from llbsav import stepper as st
from llbsav.config import constant_field, initial_field
from llbsav.diagnostics import modified_energy_bdf2, modified_energy_euler
from llbsav.fem import Coefficients, assemble_mass_stiffness
from llbsav.linalg import SolverError
from llbsav.mesh import build_structured

SIM1 = Coefficients(50.0, 0.5, 0.5, 1.0, 1.0)
SIM2 = Coefficients(100.0, 0.1, 0.1, 2.0, 1.0)
UNIT = Coefficients(50.0, 0.5, 1.0, 1.0, 1.0)


@pytest.fixture(scope="module")
def ops4():
    return assemble_mass_stiffness(build_structured((-1, 1, -1, 1), 4))


@pytest.fixture(scope="module")
def ops8():
    return assemble_mass_stiffness(build_structured((-1, 1, -1, 1), 8))


def test_config_validation():
    with pytest.raises(ValueError, match="0 < k <= T"):
        st.SchemeConfig(SIM1, 0.0, 1.0)
    with pytest.raises(ValueError):
        st.SchemeConfig(SIM1, 2.0, 1.0)
    with pytest.raises(ValueError):
        st.SchemeConfig(SIM1, 0.1, 1.0, scheme="rk4")
    with pytest.raises(ValueError):
        st.SchemeConfig(SIM1, 0.1, 1.0, bdf2_init="magic")


@pytest.mark.parametrize("T,k,n", [(1e-3, 1e-4, 10), (0.3, 0.1, 3), (1.0, 0.3, 3), (1.0, 1.0, 1),
                                   (0.7, 0.1, 7)])
def test_num_steps(T, k, n):
    assert st.num_steps(T, k) == n


def test_init_constant(ops4):
    c = np.array([0.7, 0.0, 0.0])
    s = st.init_euler(constant_field(c), ops4, SIM1)
    assert np.allclose(s.u, c, atol=1e-12)
    assert s.r == pytest.approx(oracles.initial_r(c, 1.0, 4.0), rel=1e-14)
    assert (s.t, s.step_index) == (0.0, 0)


def test_init_r_lower_bound(ops8):
    s = st.init_euler(initial_field("simulation2"), ops8, SIM2)
    assert s.r >= math.sqrt(SIM2.kappa * 4 / 4)


def test_three_steps(ops4):
    k = 1e-3
    tr = st.run(initial_field("simulation1"), ops4, st.SchemeConfig(SIM1, k, 3 * k))
    assert [s.step_index for s in tr.states] == [0, 1, 2, 3]
    assert tr.final.t == pytest.approx(3 * k, abs=0)


def test_stride_keeps_final(ops4):
    tr = st.run(initial_field("simulation1"), ops4, st.SchemeConfig(SIM1, 1e-3, 5e-3), stride=2)
    assert [s.step_index for s in tr.states] == [0, 2, 4, 5]
    assert np.allclose(tr.times(), [0, 2e-3, 4e-3, 5e-3])


def test_run_does_not_mutate_states(ops4):
    tr = st.run(initial_field("simulation1"), ops4, st.SchemeConfig(SIM1, 1e-3, 3e-3))
    snap = [s.u.copy() for s in tr.states]
    st.run(initial_field("simulation1"), ops4, st.SchemeConfig(SIM1, 1e-3, 3e-3))
    assert all(np.array_equal(a, s.u) for a, s in zip(snap, tr.states))


@pytest.mark.parametrize("scheme", ["euler", "bdf2"])
def test_constant_field_matches_oracle(ops4, scheme):
    c = np.array([0.7, 0.0, 0.0])
    k = 1e-3
    tr = st.run(constant_field(c), ops4, st.SchemeConfig(SIM1, k, 10 * k, scheme=scheme))
    kw = dict(gamma=50.0, alpha=0.5, kappa=1.0, mu=1.0, area=4.0)
    u, r = c, oracles.initial_r(c, 1.0, 4.0)
    hist = [(u, r)]
    if scheme == "euler":
        for _ in range(10):
            u, _, r = oracles.euler(u, r, k, **kw)
            hist.append((u, r))
    else:
        for dk in st.substep_plan(k):
            u, _, r = oracles.euler(u, r, dk, **kw)
        hist.append((u, r))
        for _ in range(9):
            (a, ra), (b, rb) = hist[-2], hist[-1]
            un, _, rn = oracles.bdf2(a, ra, b, rb, k, **kw)
            hist.append((un, rn))
    for s, (u, r) in zip(tr.states, hist):
        assert np.abs(s.u - s.u[0]).max() <= 1e-10
        assert np.abs(s.u - u).max() <= 1e-10
        assert abs(s.r - r) <= 1e-10


def test_constant_field_H_matches_oracle(ops4):
    c = np.array([0.3, -0.4, 0.5])
    s0 = st.init_euler(constant_field(c), ops4, SIM2)
    s1, diag = st.euler_step(s0, ops4, st.SchemeConfig(SIM2, 1e-2, 1.0))
    u, H, r = oracles.euler(c, s0.r, 1e-2, gamma=100.0, alpha=0.1, kappa=2.0, mu=1.0, area=4.0)
    assert np.abs(diag.H - H).max() <= 1e-10
    assert np.abs(s1.u - u).max() <= 1e-10 and abs(s1.r - r) <= 1e-10


def test_substep_plan():
    assert st.substep_plan(0.25) == [0.0625] * 4
    plan = st.substep_plan(0.3)
    assert len(plan) == 4 and math.isclose(sum(plan), 0.3, rel_tol=1e-15)
    assert plan[:3] == [0.09] * 3
    assert len(st.substep_plan(1e-3)) == 1000


def test_substep_cap_warns():
    with pytest.warns(RuntimeWarning, match="capping"):
        plan = st.substep_plan(1e-3, max_substeps=10)
    assert plan == [1e-4] * 10


def test_bdf2_init_substeps_oracle(ops4):
    c = np.array([0.0, 0.6, 0.2])
    k = 0.05
    cfg = st.SchemeConfig(SIM1, k, 1.0, scheme="bdf2")
    s0, s1 = st.bdf2_init(constant_field(c), ops4, cfg)
    u, r = c, oracles.initial_r(c, 1.0, 4.0)
    for _ in range(math.ceil(1 / k)):
        u, _, r = oracles.euler(u, r, k * k, gamma=50.0, alpha=0.5)
    assert s1.t == k and s1.step_index == 1
    assert np.abs(s1.u - u).max() <= 1e-9 and abs(s1.r - r) <= 1e-9


def test_bdf2_init_energy_decreases_over_substeps(ops8):
    cfg = st.SchemeConfig(SIM2, 0.05, 1.0, scheme="bdf2")
    s = st.init_euler(initial_field("simulation2"), ops8, SIM2)
    e = [modified_energy_euler(s, SIM2, ops8)]
    for dk in st.substep_plan(cfg.k):
        s, _ = st.euler_step(s, ops8, cfg, k=dk)
        e.append(modified_energy_euler(s, SIM2, ops8))
    assert np.all(np.diff(e) <= 1e-9 * e[0])


def test_implicit_start_solves_fully_implicit_step(ops4):
    cfg = st.SchemeConfig(SIM1, 1e-3, 1.0, scheme="bdf2", bdf2_init="implicit")
    s0, s1 = st.bdf2_init(initial_field("simulation1"), ops4, cfg)
    assert s1.t == 1e-3
    # the result is a fixed point: linearising at s1.u reproduces s1
    u, r, _ = st._solve_step(ops4, SIM1, s1.u, cfg.k, s0.u, s0.r, cfg, None)
    assert np.abs(u - s1.u).max() <= 1e-10 * max(1.0, np.abs(s1.u).max())
    assert abs(r - s1.r) <= 1e-10


def test_bdf2_fixed_point_zero_state(ops4):
    z = np.zeros((ops4.num_nodes, 3))
    r = math.sqrt(SIM1.kappa * 4 / 4)
    k = 1e-2
    a, b = st.State(z, r, 0.0, 0), st.State(z, r, k, 1)
    c, diag = st.bdf2_step(a, b, ops4, st.SchemeConfig(SIM1, k, 1.0, scheme="bdf2"))
    assert np.abs(c.u).max() <= 1e-12 and abs(c.r - r) <= 1e-12
    assert np.abs(diag.H).max() <= 1e-12
    assert c.t == pytest.approx(2 * k)


def test_bdf2_rejects_bad_spacing(ops4):
    z = np.zeros((ops4.num_nodes, 3))
    cfg = st.SchemeConfig(SIM1, 1e-2, 1.0, scheme="bdf2")
    with pytest.raises(ValueError):
        st.bdf2_step(st.State(z, 1.0, 0.0, 0), st.State(z, 1.0, 0.5e-2, 1), ops4, cfg)


def _norms_sq(du, ops):
    return ops.stiffness_inner(du, du), ops.mass_inner(du, du)


def test_euler_energy_identity(ops8):
    k = 1e-3
    cfg = st.SchemeConfig(UNIT, k, 20 * k)
    tr = st.run(initial_field("simulation1"), ops8, cfg)
    for prev, s, d in zip(tr.states[:-1], tr.states[1:], tr.diagnostics[1:]):
        dE = modified_energy_euler(s, UNIT, ops8) - modified_energy_euler(prev, UNIT, ops8)
        H2 = ops8.mass_inner(d.H, d.H)
        g2, m2 = _norms_sq(s.u - prev.u, ops8)
        res = dE + UNIT.alpha * k * H2 + 0.5 * g2 + 0.5 * m2 + (s.r - prev.r) ** 2
        assert abs(res) <= 1e-8 * UNIT.alpha * k * H2
        assert dE <= 0


def test_bdf2_energy_identity_general_coefficients(ops8):
    k = 1e-3
    cfg = st.SchemeConfig(SIM2, k, 12 * k, scheme="bdf2")
    tr = st.run(initial_field("simulation2"), ops8, cfg)
    S = tr.states
    for j in range(2, len(S)):
        a, b, c = S[j - 2], S[j - 1], S[j]
        dE = modified_energy_bdf2(c, b, SIM2, ops8) - modified_energy_bdf2(b, a, SIM2, ops8)
        H2 = ops8.mass_inner(tr.diagnostics[j].H, tr.diagnostics[j].H)
        g2, m2 = _norms_sq(c.u - 2 * b.u + a.u, ops8)
        # the dissipation carries 2 alpha k |H|^2 with this energy's normalisation
        res = (dE + 2 * SIM2.alpha * k * H2 + 0.5 * SIM2.sigma * g2
               + 0.5 * SIM2.kappa * SIM2.mu * m2 + (c.r - 2 * b.r + a.r) ** 2)
        assert abs(res) <= 1e-8 * SIM2.alpha * k * H2
        assert dE <= 0


def test_step_error_carries_index(ops4, monkeypatch):
    calls = {"n": 0}
    real = st.solve_bordered

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 3:
            raise SolverError("injected")
        return real(*args, **kwargs)

    monkeypatch.setattr(st, "solve_bordered", flaky)
    with pytest.raises(st.StepError) as err:
        st.run(initial_field("simulation1"), ops4, st.SchemeConfig(SIM1, 1e-3, 5e-3))
    assert err.value.step_index == 3


def test_spatial_constancy_long_bdf2(ops4):
    tr = st.run(constant_field([0.2, 0.9, -0.4]), ops4,
                st.SchemeConfig(SIM2, 1e-2, 0.3, scheme="bdf2"))
    assert max(np.abs(s.u - s.u[0]).max() for s in tr.states) <= 1e-10


def test_cap_used_by_start(ops4):
    cfg = st.SchemeConfig(SIM1, 1e-3, 2e-3, scheme="bdf2", max_substeps=5)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        s0, s1 = st.bdf2_init(constant_field([0.5, 0, 0]), ops4, cfg)
    assert any(issubclass(x.category, RuntimeWarning) for x in w)
    assert s1.t == 1e-3
