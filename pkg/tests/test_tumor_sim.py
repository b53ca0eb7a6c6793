import dataclasses
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vlevo.tumor_sim import (
    CARRIED,
    DEPOSITED,
    FREE,
    NP_BOUNDS,
    NpDesign,
    SimParams,
    SimState,
    Treatment,
    advance,
    apply_treatment,
    empty_state,
    grow_tumor,
    inject,
    load_fixture,
    load_state,
    save_state,
    seed_disc,
    split_workers,
    step,
)
from vlevo.tumor_sim.sim import FIXTURE_DAYS, FIXTURE_SEED

FIXTURE_LIVE_CELLS = 1036
P = SimParams()
GOOD = NpDesign(0.81, 0.19, 0.93, 0.18, 2.93)


@pytest.fixture(scope="module")
def tumour():
    return load_fixture()


def add_worker(state, pos, design=GOOD, cargo=-1):
    state.type_table = np.array([design.as_array()])
    state.worker_pos = np.array([pos], dtype=float)
    state.worker_type = np.zeros(1, dtype=np.int64)
    state.worker_cargo = np.array([cargo], dtype=np.int64)
    state.worker_dir = np.array([[1.0, 0.0]])


def add_cargo(state, positions, status=FREE):
    n = len(positions)
    state.cargo_pos = np.array(positions, dtype=float).reshape(n, 2)
    state.cargo_state = np.full(n, status, dtype=np.int8)
    state.cargo_receptor = np.ones(n)


class TestTypes:
    def test_np_bounds(self):
        with pytest.raises(ValueError):
            NpDesign(1.1, 0, 0, 0, 0)
        with pytest.raises(ValueError):
            NpDesign(0, 0, 0, 0, -0.1)
        NpDesign(1, 1, 10, 10, 10)

    def test_random_design_in_bounds(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            a = NpDesign.random(rng).as_array()
            assert all(lo <= v <= hi for v, (_, lo, hi) in zip(a, NP_BOUNDS))

    @pytest.mark.parametrize("n,expected", [(1, [50]), (2, [25, 25]), (3, [17, 17, 16]), (10, [5] * 10)])
    def test_split(self, n, expected):
        assert split_workers(n) == expected

    @given(st.integers(1, 10))
    def test_split_properties(self, n):
        c = split_workers(n)
        assert sum(c) == 50 and max(c) - min(c) <= 1 and c == sorted(c, reverse=True)

    @pytest.mark.parametrize("n", [0, 11])
    def test_bad_type_count(self, n):
        with pytest.raises(ValueError):
            Treatment([GOOD] * n)

    def test_params_validation(self):
        with pytest.raises(ValueError):
            SimParams(damage_rate=-1.0)
        with pytest.raises(ValueError):
            SimParams(min_attachment_distance=20.0)
        with pytest.raises(KeyError, match="bogus"):
            SimParams.from_dict({"bogus": 1})
        assert SimParams.from_dict(P.to_dict()) == P

    def test_published_constants(self):
        assert (P.damage_rate, P.repair_rate, P.drug_death_rate) == (0.03333, 0.004167, 0.004167)
        assert (P.min_attachment_distance, P.max_attachment_distance) == (14.0, 18.0)
        assert P.worker_speed == 2.0 and P.worker_apoptosis_rate == 0.0
        assert P.cargo_release_o2_threshold == 10.0 and P.max_elastic_displacement == 50.0


class TestGrowth:
    def test_initial_disc(self):
        s = grow_tumor(P, 0, seed=1)
        assert abs(s.live_cells - 570) <= 57
        assert np.all(np.hypot(*s.cell_pos.T) <= P.initial_radius)
        assert s == seed_disc(P, 1)

    def test_deterministic(self):
        assert grow_tumor(P, 0.5, seed=3) == grow_tumor(P, 0.5, seed=3)

    def test_seed_matters(self):
        assert grow_tumor(P, 0.5, seed=3) != grow_tumor(P, 0.5, seed=4)

    def test_tumour_grows(self):
        assert grow_tumor(P, 7, seed=5).live_cells > grow_tumor(P, 0, seed=5).live_cells

    def test_fixture(self, tumour):
        assert tumour.live_cells == FIXTURE_LIVE_CELLS
        assert tumour == grow_tumor(P, FIXTURE_DAYS, FIXTURE_SEED)

    def test_hypoxic_core(self, tumour):
        # the release threshold must be reachable inside the tumour
        assert tumour.oxygen.min() < P.cargo_release_o2_threshold

    def test_negative_days(self):
        with pytest.raises(ValueError):
            grow_tumor(P, -1)


class TestStep:
    def test_empty_domain(self):
        s = empty_state(P)
        from vlevo.tumor_sim import solve_oxygen

        solve_oxygen(s, P)
        ref = s.copy()
        for _ in range(20):
            step(s, P)
        assert s.n_cells == 0 and len(s.worker_pos) == 0
        assert np.allclose(s.oxygen, ref.oxygen, rtol=0, atol=1e-6)
        assert s.clock == 20 * P.dt

    @pytest.mark.parametrize("dt,n", [(1.0, 60), (0.1, 600)])
    def test_repair_decay(self, dt, n):
        s = empty_state(P, seed=0)
        s.cell_pos = np.zeros((1, 2))
        s.cell_damage = np.array([0.5])
        s.cell_progress = np.zeros(1)
        s.cell_alive = np.ones(1, dtype=bool)
        for _ in range(n):
            step(s, P, dt)
        assert s.cell_alive[0]
        assert s.cell_damage[0] == pytest.approx(0.5 * math.exp(-P.repair_rate * 60.0), rel=1e-12)

    def test_damage_from_deposited_cargo(self):
        # one touching cargo for 6 min: closed-form approach to gain/repair
        s = empty_state(P, seed=0)
        s.cell_pos = np.zeros((1, 2))
        s.cell_damage = np.zeros(1)
        s.cell_progress = np.zeros(1)
        s.cell_alive = np.ones(1, dtype=bool)
        add_cargo(s, [(10.0, 0.0)], DEPOSITED)
        step(s, P)
        ss = P.damage_rate / P.repair_rate
        expected = ss * (1 - math.exp(-P.repair_rate * P.phenotype_dt))
        if s.cell_alive[0]:
            assert s.cell_damage[0] == pytest.approx(expected, rel=1e-12)

    def test_damage_kills(self):
        s = empty_state(P, seed=0)
        s.cell_pos = np.zeros((1, 2))
        s.cell_damage = np.zeros(1)
        s.cell_progress = np.zeros(1)
        s.cell_alive = np.ones(1, dtype=bool)
        add_cargo(s, [(10.0, 0.0)], DEPOSITED)
        # damage crosses 1 after -ln(1 - repair/damage)/repair ~ 32 min
        advance(s, P, 60)
        assert not s.cell_alive[0]

    @pytest.mark.parametrize("dt", [0.1, 1.0])
    def test_attachment_window(self, dt):
        s = empty_state(P, seed=0)
        add_worker(s, (0.0, 0.0), NpDesign(0, 0, 0, 0, 10))
        add_cargo(s, [(15.0, 0.0)])
        s.worker_dir = np.array([[0.0, 1.0]])  # move across, not towards
        step(s, P, dt)
        assert s.worker_cargo[0] == 0 and s.cargo_state[0] == CARRIED
        s.check()

    def test_no_attachment_outside_window(self):
        s = empty_state(P, seed=0)
        add_worker(s, (0.0, 0.0), NpDesign(0, 0, 0, 0, 10))
        add_cargo(s, [(30.0, 0.0), (0.0, 5.0)])
        s.worker_dir = np.array([[0.0, -1.0]])
        step(s, P, 0.1)
        assert s.worker_cargo[0] == -1

    def test_low_receptor_not_attached(self):
        s = empty_state(P, seed=0)
        add_worker(s, (0.0, 0.0), NpDesign(0, 0, 0, 0, 10))
        add_cargo(s, [(15.0, 0.0)])
        s.cargo_receptor[:] = 0.05
        step(s, P, 0.1)
        assert s.worker_cargo[0] == -1

    def test_release_in_hypoxia(self):
        s = empty_state(P, seed=0)
        s.oxygen[:] = 5.0
        add_cargo(s, [(14.0, 0.0)], CARRIED)
        add_worker(s, (0.0, 0.0), cargo=0)
        step(s, P)
        assert s.cargo_state[0] == DEPOSITED and s.cargo_receptor[0] == 0.0
        assert s.worker_cargo[0] == -1

    def test_no_release_in_normoxia(self):
        s = empty_state(P, seed=0)
        add_cargo(s, [(14.0, 0.0)], CARRIED)
        add_worker(s, (0.0, 0.0), cargo=0)
        step(s, P)
        assert s.cargo_state[0] == CARRIED and s.worker_cargo[0] == 0

    def test_spring_breaks(self):
        s = empty_state(P, seed=0)
        add_cargo(s, [(P.min_attachment_distance + P.max_elastic_displacement + 5.0, 0.0)], CARRIED)
        add_worker(s, (0.0, 0.0), cargo=0)
        step(s, P)
        assert s.cargo_state[0] == FREE and s.worker_cargo[0] == -1
        assert s.cargo_receptor[0] == 1.0

    def test_spring_pulls_cargo(self):
        s = empty_state(P, seed=0)
        add_cargo(s, [(40.0, 0.0)], CARRIED)
        add_worker(s, (0.0, 0.0), NpDesign(0, 0, 0, 0, 10), cargo=0)
        s.worker_dir = np.array([[0.0, 1.0]])
        step(s, P, 0.1)
        expected = 40.0 - P.elastic_coefficient * (40.0 - P.min_attachment_distance) * 0.1
        assert s.cargo_pos[0, 0] == pytest.approx(expected)

    def test_cell_repels_worker(self):
        s = empty_state(P, seed=0)
        s.cell_pos = np.zeros((1, 2))
        s.cell_damage = np.zeros(1)
        s.cell_progress = np.zeros(1)
        s.cell_alive = np.ones(1, dtype=bool)
        add_worker(s, (5.0, 0.0), NpDesign(0, 0, 0, 10, 10))
        s.worker_dir = np.array([[0.0, 1.0]])
        step(s, P, 0.1)
        assert s.worker_pos[0, 0] > 5.0

    @pytest.mark.parametrize("dt", [0.0, -1.0, 1.5, 0.7])
    def test_bad_dt(self, dt):
        with pytest.raises(ValueError):
            step(empty_state(P), P, dt)

    def test_chunking_invariance(self, tumour):
        a = tumour.copy()
        a.reseed(1)
        inject(a, Treatment([GOOD]), P)
        b = a.copy()
        advance(a, P, 240)
        for _ in range(240):
            step(b, P)
        assert a == b


class TestInvariants:
    def test_long_run(self, tumour):
        s = tumour.copy()
        s.reseed(7)
        inject(s, Treatment([GOOD, NpDesign(0.3, 0.6, 2, 1, 8)]), P)
        alive_before = s.cell_alive.copy()
        workers = len(s.worker_pos)
        for _ in range(24):
            n_before = s.n_cells
            alive_before = s.cell_alive.copy()
            dead_pos = s.cell_pos[~alive_before].copy()
            dead_dmg = s.cell_damage[~alive_before].copy()
            advance(s, P, 60)
            s.check()
            assert s.n_cells >= n_before
            # no resurrection, dead cells frozen
            assert not np.any(s.cell_alive[:n_before] & ~alive_before)
            assert np.array_equal(s.cell_pos[:n_before][~alive_before], dead_pos)
            assert np.array_equal(s.cell_damage[:n_before][~alive_before], dead_dmg)
            assert len(s.worker_pos) == workers
            assert np.all(s.oxygen >= 0) and np.all(s.oxygen <= P.o2_boundary)
            assert np.all(s.cell_damage >= 0)
        assert s.deposited_cargo > 0

    def test_inject_split(self, tumour):
        s = tumour.copy()
        inject(s, Treatment([GOOD, GOOD, GOOD]), P)
        assert np.bincount(s.worker_type).tolist() == [17, 17, 16]
        assert len(s.cargo_pos) == 450 and np.all(s.cargo_state == FREE)

    def test_injection_outside_tumour(self, tumour):
        s = tumour.copy()
        inject(s, Treatment([GOOD]), P)
        c = s.cell_pos.mean(axis=0)
        edge = np.hypot(*(s.cell_pos - c).T).max()
        assert np.all(np.hypot(*(s.cargo_pos - c).T) > edge)


class TestTreatment:
    def test_deterministic(self, tumour):
        t = Treatment([GOOD])
        assert apply_treatment(tumour, t, P, seed=3) == apply_treatment(tumour, t, P, seed=3)

    def test_fixture_untouched(self, tumour):
        ref = tumour.copy()
        apply_treatment(tumour, Treatment([GOOD]), P, days=0.2, seed=0)
        assert tumour == ref

    def test_null_treatment_equals_baseline(self, tumour):
        still = dataclasses.replace(P, worker_speed=0.0)
        t = Treatment([GOOD, NpDesign(0.5, 0.5, 5, 5, 5)])
        for seed in range(3):
            assert apply_treatment(tumour, t, still, seed=seed) == apply_treatment(tumour, None, P, seed=seed)

    def test_treatment_not_worse_than_baseline(self, tumour):
        rng = np.random.default_rng(0)
        t = Treatment([NpDesign.random(rng), NpDesign.random(rng)])
        base = [apply_treatment(tumour, None, P, seed=s) for s in range(20)]
        treated = [apply_treatment(tumour, t, P, seed=s) for s in range(20)]
        assert np.mean(treated) <= np.mean(base)

    @pytest.mark.xfail(
        strict=False,
        reason="drug_death_rate barely matters: damage kills every contacted cell in ~30 min, "
        "and earlier deaths feed back through oxygen, forces and free space; the paired "
        "difference is +1 +- 1 cells over 100 seeds, so 20 seeds decide the sign by noise",
    )
    def test_dose_response(self, tumour):
        strong = dataclasses.replace(P, drug_death_rate=2 * P.drug_death_rate)
        t = Treatment([GOOD])
        normal = [apply_treatment(tumour, t, P, seed=s) for s in range(20)]
        double = [apply_treatment(tumour, t, strong, seed=s) for s in range(20)]
        assert np.mean(double) <= np.mean(normal)

    def test_drug_rule_monotone_per_seed(self, tumour):
        # freeze every feedback of a death (oxygen, forces, division) so the
        # paired runs share one history; the per-cell draws are keyed on the
        # cell, so a higher drug rate can only kill earlier
        frozen = dataclasses.replace(P, corpse_o2_uptake=1.0, cycle_rate=0.0,
                                     cell_repulsion=0.0, cell_adhesion=0.0)
        strong = dataclasses.replace(frozen, drug_death_rate=2 * P.drug_death_rate)
        t = Treatment([GOOD])
        for s in range(8):
            assert apply_treatment(tumour, t, strong, seed=s) <= apply_treatment(tumour, t, frozen, seed=s)

    def test_good_design_kills(self, tumour):
        base = apply_treatment(tumour, None, P, seed=0)
        assert apply_treatment(tumour, Treatment([GOOD]), P, seed=0) < 0.85 * base

    def test_runtime(self, tumour):
        apply_treatment(tumour, Treatment([GOOD]), P, days=0.1)
        t0 = time.perf_counter()
        apply_treatment(tumour, Treatment([GOOD]), P, seed=1)
        assert time.perf_counter() - t0 < 2.0

    def test_telemetry(self, tumour, tmp_path):
        path = tmp_path / "tele.csv"
        n = apply_treatment(tumour, Treatment([GOOD]), P, days=0.25, seed=2, telemetry=path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("# vlevo tumour telemetry")
        assert lines[1] == "clock,live_cells,deposited_cargo"
        assert len(lines) == 2 + 1 + 60
        assert int(lines[-1].split(",")[1]) == n
        assert n == apply_treatment(tumour, Treatment([GOOD]), P, days=0.25, seed=2)

    def test_bad_treatment(self, tumour):
        with pytest.raises(TypeError):
            apply_treatment(tumour, [GOOD], P)


class TestStateIO:
    def test_round_trip(self, tumour, tmp_path):
        s = tumour.copy()
        inject(s, Treatment([GOOD]), P)
        advance(s, P, 120)
        save_state(s, tmp_path / "s.npz")
        back = load_state(tmp_path / "s.npz")
        assert back == s
        # and it keeps evolving identically
        advance(s, P, 60)
        advance(back, P, 60)
        assert back == s

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.npz"
        np.savez(p, magic=np.array("NOPE"), version=np.array(1))
        with pytest.raises(ValueError, match="magic"):
            load_state(p)

    def test_bad_version(self, tumour, tmp_path):
        p = tmp_path / "x.npz"
        save_state(tumour, p)
        with np.load(p) as z:
            data = dict(z)
        data["version"] = np.array(99)
        np.savez(p, **data)
        with pytest.raises(ValueError, match="version"):
            load_state(p)

    def test_garbage(self, tmp_path):
        p = tmp_path / "x.npz"
        p.write_bytes(b"not a zip at all")
        with pytest.raises(ValueError):
            load_state(p)

    def test_missing_field(self, tumour, tmp_path):
        p = tmp_path / "x.npz"
        save_state(tumour, p)
        with np.load(p) as z:
            data = dict(z)
        del data["oxygen"]
        np.savez(p, **data)
        with pytest.raises(ValueError, match="malformed"):
            load_state(p)

    def test_equality_is_fieldwise(self, tumour):
        s = tumour.copy()
        assert s == tumour
        s.cell_damage[0] += 1e-15
        assert s != tumour
        assert isinstance(s, SimState)


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 2**31), dt=st.sampled_from([0.5, 1.0]))
def test_oxygen_bounded(seed, dt):
    s = grow_tumor(P, 0, seed=seed)
    rng = np.random.default_rng(seed)
    inject(s, Treatment([NpDesign.random(rng)]), P)
    advance(s, P, 90, dt=dt)
    assert np.all(s.oxygen >= 0) and np.all(s.oxygen <= P.o2_boundary)
    s.check()
