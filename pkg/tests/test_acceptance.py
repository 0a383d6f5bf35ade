"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import cmath
import itertools
import math
import time

import numpy as np
import pytest

from backup_cnot import protocol as pr
from backup_cnot import verify as vf
from backup_cnot.devices import NoiseModel
from backup_cnot.protocol import Branch, ProtocolConfig
from backup_cnot.qstate import EXHAUSTIVE, fidelity

from conftest import ket

K_PAIRS = [
    (0.0, 0.0),
    (0.5, 0.0),
    (0.0, 0.5j),
    (0.3 + 0.4j, -0.2 + 0.1j),
    (-0.25j, 0.35 + 0.35j),
    (0.1, 0.5 * cmath.exp(2.2j)),
]


def noise_grid():
    """216 points: |eta|, |zeta| in {0.5, 0.75, 1}, four detector phases, six (k+, k_d) pairs."""
    points = []
    mags = (0.5, 0.75, 1.0)
    for n, (ea, za, delta, (kp, kd)) in enumerate(itertools.product(mags, mags, (0.0, 0.3, 1.0, 2.5), K_PAIRS)):
        points.append(
            NoiseModel(
                eta=ea * cmath.exp(0.7j * n),
                zeta=za * cmath.exp(-1.1j * n),
                delta=delta,
                k_plus=kp,
                k_d=kd,
                detector_efficiency=1.0 if n % 2 == 0 else 0.85,
            )
        )
    return points


GRID = noise_grid()


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return emit


@pytest.fixture(scope="module")
def grid_reports():
    start = time.perf_counter()
    reports = [vf.process_check(noise) for noise in GRID]
    return reports, time.perf_counter() - start


def test_grid_covers_required_ranges():
    assert len(GRID) >= 200
    assert {round(abs(n.eta), 12) for n in GRID} >= {0.5, 1.0}
    assert {n.delta for n in GRID} == {0.0, 0.3, 1.0, 2.5}
    assert max(max(abs(n.k_plus), abs(n.k_d)) for n in GRID) <= 0.5 + 1e-15


def test_criterion_1_ideal_truth_table(verdict):
    start = time.perf_counter()
    worst, attempts, probs = 1.0, set(), []
    for i in (0, 1):
        for j in (0, 1):
            src = vf.basis_input(i, j)
            result = pr.run(src, ProtocolConfig())
            worst = min(worst, fidelity(result.final_state, ket((1, f"a{i}", f"d{i ^ j}"))))
            attempts.add(result.attempts)
            exact = pr.run(src, ProtocolConfig(mode="enumerate"))
            probs.append(exact.success_probability_per_attempt)
    elapsed = time.perf_counter() - start
    ok = worst >= 1 - 1e-12 and attempts == {1} and all(abs(p - 1) <= 1e-12 for p in probs) and elapsed < 1
    verdict(1, ok, f"worst fidelity 1-{1 - worst:.1e}, attempts {sorted(attempts)}, min P(success) {min(probs):.15f}, {elapsed:.2f}s")


def test_criterion_2_error_immunity(verdict, grid_reports):
    reports, elapsed = grid_reports
    worst = min(r.worst_fidelity for r in reports)
    inputs = reports[0].inputs_checked
    ok = worst >= 1 - 1e-10 and elapsed < 60 and len(reports) >= 200
    verdict(2, ok, f"{len(reports)} noise points x {inputs} inputs, worst fidelity 1-{1 - worst:.1e}, {elapsed:.1f}s")


def test_criterion_3_detector_record_independence(verdict):
    rng = np.random.default_rng(vf.RANDOM_INPUT_SEED)
    worst_deficit, records_seen = 0.0, set()
    for noise in GRID:
        src = vf.random_input(rng, ancilla_dim=2)
        wins = [r for r in vf.enumerate_branches(src, noise) if r.outcome == "success"]
        by_clicks = {}
        for r in wins:
            by_clicks.setdefault(r.clicks, []).append(r.conditional_state)
        records_seen.add(len(by_clicks))
        states = [s for group in by_clicks.values() for s in group]
        for a, b in itertools.combinations(states, 2):
            worst_deficit = max(worst_deficit, 1 - fidelity(a, b))
    ok = records_seen == {4} and worst_deficit <= 1e-10
    verdict(3, ok, f"all {len(GRID)} points show 4 click records, max pairwise deficit {worst_deficit:.1e}")


def test_criterion_4_loss_immunity(verdict):
    rng = np.random.default_rng(vf.RANDOM_INPUT_SEED + 1)
    lossy = [n for n in GRID if abs(n.eta) < 1 or abs(n.zeta) < 1 or n.detector_efficiency < 1]
    worst, seen = 1.0, set()
    for noise in lossy:
        src = vf.random_input(rng, ancilla_dim=2)
        for r in vf.enumerate_branches(src, noise):
            if r.outcome in ("loss-T1", "loss-T2"):
                seen.add(r.outcome)
                worst = min(worst, fidelity(r.conditional_state, src))
    ok = seen == {"loss-T1", "loss-T2"} and worst >= 1 - 1e-12
    verdict(4, ok, f"{len(lossy)} lossy points, losses at {sorted(seen)} restore with worst fidelity 1-{1 - worst:.1e}")


SAMPLING_POINTS = [
    (NoiseModel(eta=0.95, zeta=0.95 * cmath.exp(0.4j), delta=0.3, k_plus=0.1 + 0.1j, k_d=0.15), lambda: vf.basis_input(1, 0)),
    (
        NoiseModel(eta=0.97 * cmath.exp(0.5j), zeta=0.95, delta=1.0, k_plus=0.2j, k_d=0.1 - 0.1j, detector_efficiency=0.98),
        lambda: vf.random_input(np.random.default_rng(5)),
    ),
    (NoiseModel(eta=1.0, zeta=0.9, delta=2.5, k_plus=-0.15, k_d=0.25j), lambda: vf.bell_ancilla_input((0.6, 0.8j))),
    (
        NoiseModel(eta=0.97 * cmath.exp(-1j), zeta=0.97 * cmath.exp(2j), delta=0.0, k_plus=0.05 + 0.2j, k_d=0.2),
        lambda: vf.random_input(np.random.default_rng(6), ancilla_dim=2),
    ),
    (NoiseModel(eta=0.96, zeta=0.96, delta=0.3, k_plus=0.3, k_d=0.05j, detector_efficiency=0.99), lambda: vf.basis_input(0, 1)),
]


def test_criterion_5_sampler_matches_oracle(verdict):
    start = time.perf_counter()
    max_z, min_gof, max_mean_z, truncated = 0.0, 1.0, 0.0, 0
    for k, (noise, make_input) in enumerate(SAMPLING_POINTS):
        rep = vf.sampled_vs_exact(make_input(), noise, trials=10_000, seed=100 + k)
        max_z = max(max_z, max(abs(z) for z in rep.z_scores.values()))
        max_mean_z = max(max_mean_z, abs(rep.mean_attempts_z))
        min_gof = min(min_gof, rep.geometric_pvalue)
        truncated += rep.truncated
    elapsed = time.perf_counter() - start
    ok = max_z <= 3 and max_mean_z <= 3 and min_gof >= 1e-3 and truncated == 0 and elapsed < 30
    verdict(
        5,
        ok,
        f"5 points x 10^4 trials: max |z| {max_z:.2f}, mean-attempts |z| {max_mean_z:.2f}, "
        f"min geometric p-value {min_gof:.3f}, {elapsed:.1f}s",
    )


def after_t1_state(c):
    terms = []
    for i in (0, 1):
        for j in (0, 1):
            terms += [(c[i, j], f"a{i}", f"d{j}"), (c[i, j], f"b{i}", f"e{j}")]
    return ket(*terms)


def post_selected_state(c):
    terms = []
    for i in (0, 1):
        for j in (0, 1):
            terms += [(c[i, j], f"b{i}", f"e{j}"), (-c[i, j], f"a{i}", f"f{j}")]
    return ket(*terms)


def test_criterion_6_intermediate_states(verdict):
    rng = np.random.default_rng(17)
    c = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    src = vf.superposition_input(c)
    ideal = NoiseModel.ideal()
    after_t1 = pr.transmit(Branch(pr.backup_encode(src)), ideal, EXHAUSTIVE, 1)
    f3 = min(fidelity(b.state, after_t1_state(c)) for b in after_t1)
    kept = [b for b in pr.entangle_levels(src, ideal, EXHAUSTIVE) if b.status == pr.RUNNING]
    f4 = min(fidelity(b.state, post_selected_state(c)) for b in kept)

    # hand-expanded first transmission for input |a0 d0>
    noise = NoiseModel(eta=0.9 * cmath.exp(0.2j), zeta=0.8, delta=0.3, k_plus=0.1 - 0.05j, k_d=0.2 + 0.1j)
    eta, zeta, kp, kd = noise.eta, noise.zeta, noise.k_plus, noise.k_d
    n_plus, n_d = math.sqrt(1 + abs(kp) ** 2), math.sqrt(1 + abs(kd) ** 2)
    ph = cmath.exp(-1j * noise.delta)
    branches = pr.transmit(Branch(pr.backup_encode(ket((1, "a0", "d0")))), noise, EXHAUSTIVE, 1)
    clicks = {b.events[0].detector: b for b in branches if isinstance(b.events[0], pr.Click)}
    amp_err = 0.0
    for label, sign in (("D1", -1), ("D2", +1)):
        got = clicks[label].state.amps * math.sqrt(clicks[label].probability)
        expected = (
            eta * ket((1, "a0", "d0")).amps
            + zeta * ph / (n_d * n_plus) * ket((1, "b0", "e0")).amps
            + (zeta * kd * ph / n_d + sign * eta * kp) / n_plus * ket((1, "b0", "d0")).amps
        ) / 2
        amp_err = max(amp_err, float(np.max(np.abs(got - expected))))
    ok = f3 >= 1 - 1e-12 and f4 >= 1 - 1e-12 and amp_err <= 1e-12 and len(kept) == 4
    verdict(6, ok, f"after T1 1-{1 - f3:.1e}, after T2+post-selection 1-{1 - f4:.1e}, noisy T1 amplitude error {amp_err:.1e}")


def test_criterion_7_epr_chain(verdict):
    noisy = [
        NoiseModel(eta=0.9, zeta=0.8, delta=0.3, k_plus=0.1 + 0.05j, k_d=0.2),
        NoiseModel(eta=0.6j, zeta=0.7, delta=2.5, k_plus=-0.4, k_d=0.5j, detector_efficiency=0.9),
    ]
    fids = []
    for noise in [NoiseModel.ideal()] + noisy:
        for mode in ("sample", "enumerate"):
            report = pr.share_epr_chain(3, ProtocolConfig(noise=noise, mode=mode, seed=21))
            fids += report.horizontal_fidelities + report.vertical_fidelities
    dev = max(abs(f - 1) for f in fids)
    verdict(7, dev <= 1e-10, f"{len(fids)} horizontal/vertical correlations, max |F-1| {dev:.1e}")


def test_criterion_8_branch_completeness(verdict, grid_reports):
    reports, _ = grid_reports
    worst = max(r.worst_completeness_error for r in reports)
    extremes = [
        NoiseModel(eta=0.0),
        NoiseModel(zeta=0.0),
        NoiseModel(eta=0.0, zeta=0.0),
        NoiseModel(detector_efficiency=0.01),
        NoiseModel(k_plus=50.0, k_d=-30j),
    ]
    for noise in extremes:
        for src in (vf.basis_input(1, 1), vf.bell_ancilla_input((0.6, 0.8))):
            worst = max(worst, abs(sum(r.probability for r in vf.enumerate_branches(src, noise)) - 1))
    verdict(8, worst <= 1e-9, f"{len(reports) * reports[0].inputs_checked + 10} enumerations, max |sum P - 1| {worst:.1e}")
