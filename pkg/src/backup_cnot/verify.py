"""Reference CNOT, exhaustive branch enumeration, and sampler cross-checks."""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from . import devices as dv
from . import protocol as pr
from .devices import NoiseModel
from .qstate import EXHAUSTIVE, RandomSource, StateVector, attach_ancilla, fidelity

# Fixed so that random-superposition checks are reproducible.
RANDOM_INPUT_SEED = 20260101
CONTRACT_TOL = 1e-10

CATEGORIES = ("success", "loss-T1", "loss-T2", "beta-in-d")


class VerificationError(ValueError):
    pass


def ideal_cnot(input: StateVector) -> StateVector:
    """Flip beta's Zeeman index iff alpha is in a1; ancillas untouched."""
    pr.check_input(input)
    t = input.tensor()
    out = np.zeros_like(t)
    for i in (0, 1):
        for j in (0, 1):
            src = (dv.atom_index("a", i), dv.atom_index("d", j), dv.VAC)
            dst = (dv.atom_index("a", i), dv.atom_index("d", j ^ i), dv.VAC)
            out[dst] = t[src]
    return StateVector.from_tensor(input.layout, out)


# --- inputs ---------------------------------------------------------------


def basis_input(i: int, j: int, ancillas=()) -> StateVector:
    layout = dv.protocol_layout(tuple(ancillas))
    amps = np.zeros(layout.dims, dtype=complex)
    amps[(dv.atom_index("a", i), dv.atom_index("d", j), dv.VAC) + (0,) * len(ancillas)] = 1
    return StateVector.from_tensor(layout, amps)


def basis_inputs() -> list[StateVector]:
    return [basis_input(i, j) for i in (0, 1) for j in (0, 1)]


def superposition_input(coeffs, ancilla_dim: int = 0) -> StateVector:
    """Input sum c[i, j, (k)] |a_i d_j (anc_k)>, normalized."""
    c = np.asarray(coeffs, dtype=complex)
    ancillas = (("ancilla", ancilla_dim),) if ancilla_dim else ()
    layout = dv.protocol_layout(ancillas)
    amps = np.zeros(layout.dims, dtype=complex)
    for i in (0, 1):
        for j in (0, 1):
            idx = (dv.atom_index("a", i), dv.atom_index("d", j), dv.VAC)
            amps[idx] = c[i, j]
    amps /= np.linalg.norm(amps)
    return StateVector.from_tensor(layout, amps)


def random_input(rng: np.random.Generator, ancilla_dim: int = 0) -> StateVector:
    shape = (2, 2, ancilla_dim) if ancilla_dim else (2, 2)
    return superposition_input(rng.normal(size=shape) + 1j * rng.normal(size=shape), ancilla_dim)


def bell_ancilla_input(beta_amps=(1.0, 0.0)) -> StateVector:
    """(|a0>|0> + |a1>|1>)/sqrt2 on alpha and a qubit ancilla, beta in a given d-state."""
    b = np.asarray(beta_amps, dtype=complex)
    b = b / np.linalg.norm(b)
    core = superposition_input(np.outer([1, 1], b))
    table = np.zeros((core.layout.dim, 2), dtype=complex)
    for flat in range(core.layout.dim):
        alpha_index = np.unravel_index(flat, core.layout.dims)[0]
        table[flat, alpha_index % 2] = 1
    return attach_ancilla(core, (("ancilla", 2),), table)


# --- enumeration ----------------------------------------------------------


def classify(events: Sequence) -> str:
    """Outcome category of one attempt's event list."""
    for e in events:
        if isinstance(e, pr.Loss):
            return f"loss-T{e.transmission}"
        if isinstance(e, pr.BetaFoundInD):
            return "beta-in-d"
    return "success"


def split_attempts(history: Sequence) -> list[list]:
    """Cut a run history into per-attempt event lists (failures end in Restored)."""
    attempts, current = [], []
    for e in history:
        current.append(e)
        if isinstance(e, pr.Restored):
            attempts.append(current)
            current = []
    if current:
        attempts.append(current)
    return attempts


@dataclass
class BranchRecord:
    events: tuple
    probability: float
    conditional_state: StateVector

    @property
    def outcome(self) -> str:
        return classify(self.events)

    @property
    def clicks(self) -> tuple[str, ...]:
        return tuple(e.detector for e in self.events if isinstance(e, pr.Click))


def enumerate_branches(input: StateVector, noise: NoiseModel, table=None) -> list[BranchRecord]:
    """Every measurement path of a single attempt with its exact probability.

    Failure paths include the restoration, so their conditional state is the
    restored register.
    """
    pr.check_input(input)
    branches = pr.attempt(input.normalized(), noise, EXHAUSTIVE, table)
    return [BranchRecord(b.events, b.probability, b.state.normalized()) for b in branches]


def outcome_probabilities(records: Sequence[BranchRecord]) -> dict[str, float]:
    probs = dict.fromkeys(CATEGORIES, 0.0)
    for r in records:
        probs[r.outcome] += r.probability
    return probs


def success_spread(records: Sequence[BranchRecord]) -> float:
    """Largest fidelity deficit between any two successful branches."""
    wins = [r.conditional_state for r in records if r.outcome == "success"]
    worst = 0.0
    for i in range(len(wins)):
        for j in range(i):
            worst = max(worst, 1.0 - fidelity(wins[i], wins[j]))
    return worst


def worst_success_fidelity(records: Sequence[BranchRecord], target: StateVector) -> float:
    fids = [fidelity(r.conditional_state, target) for r in records if r.outcome == "success"]
    return min(fids) if fids else 0.0


@dataclass
class ProcessReport:
    basis_images: list[StateVector]
    worst_fidelity: float
    success_probability: float
    detector_record_spread: float
    worst_completeness_error: float
    inputs_checked: int
    noise: NoiseModel = field(default_factory=NoiseModel.ideal)

    @property
    def passed(self) -> bool:
        return self.worst_fidelity >= 1 - CONTRACT_TOL

    def to_dict(self, dump_states: bool = False) -> dict:
        out = {
            "worst_fidelity": self.worst_fidelity,
            "success_probability": self.success_probability,
            "mean_attempts": 1.0 / self.success_probability if self.success_probability > 0 else None,
            "detector_record_spread": self.detector_record_spread,
            "worst_completeness_error": self.worst_completeness_error,
            "inputs_checked": self.inputs_checked,
            "passed": self.passed,
        }
        if dump_states:
            out["basis_images"] = [s.to_json_dict(tol=1e-15) for s in self.basis_images]
        return out


def process_check(noise: NoiseModel, n_random: int = 8, seed: int = RANDOM_INPUT_SEED, table=None) -> ProcessReport:
    """Enumerate basis, random and Bell-ancilla inputs against the ideal CNOT."""
    rng = np.random.default_rng(seed)
    inputs = basis_inputs()
    inputs += [random_input(rng) for _ in range(n_random)]
    inputs += [bell_ancilla_input(), random_input(rng, ancilla_dim=2)]
    images, worst, spread, completeness, success = [], 1.0, 0.0, 0.0, []
    for k, state in enumerate(inputs):
        records = enumerate_branches(state, noise, table)
        completeness = max(completeness, abs(sum(r.probability for r in records) - 1.0))
        probs = outcome_probabilities(records)
        success.append(probs["success"])
        if probs["success"] == 0.0:
            worst = 0.0
            continue
        worst = min(worst, worst_success_fidelity(records, ideal_cnot(state)))
        spread = max(spread, success_spread(records))
        if k < 4:
            best = max((r for r in records if r.outcome == "success"), key=lambda r: r.probability)
            images.append(best.conditional_state)
    return ProcessReport(images, worst, min(success), spread, completeness, len(inputs), noise)


def predicted_success_probability(noise: NoiseModel) -> float:
    """Closed form for the per-attempt success probability.

    The kept component after both transmissions has amplitude
    ``eta zeta e^{-i delta} / sqrt((1+|k_plus|^2)(1+|k_d|^2))`` relative to
    the encoded input, on every detector record.
    """
    eff = noise.detector_efficiency
    return eff**2 * abs(noise.eta * noise.zeta) ** 2 / ((1 + abs(noise.k_plus) ** 2) * (1 + abs(noise.k_d) ** 2))


# --- sampling versus enumeration -------------------------------------------


@dataclass
class SamplingReport:
    trials: int
    attempts_total: int
    counts: dict
    expected: dict
    z_scores: dict
    mean_attempts: float
    expected_mean_attempts: float
    mean_attempts_z: float
    geometric_pvalue: float
    truncated: int
    worst_fidelity: float
    digest: str

    @property
    def max_z(self) -> float:
        return max(abs(z) for z in list(self.z_scores.values()) + [self.mean_attempts_z])

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "attempts_total": self.attempts_total,
            "counts": self.counts,
            "expected_probabilities": self.expected,
            "z_scores": self.z_scores,
            "max_z": self.max_z,
            "mean_attempts": self.mean_attempts,
            "expected_mean_attempts": self.expected_mean_attempts,
            "mean_attempts_z": self.mean_attempts_z,
            "geometric_pvalue": self.geometric_pvalue,
            "truncated": self.truncated,
            "worst_fidelity": self.worst_fidelity,
            "history_digest": self.digest,
        }


def _snap(p: float) -> float:
    """Round enumeration noise off certain outcomes (p = 1 - 1e-15 and the like)."""
    if p < CONTRACT_TOL * 1e-2:
        return 0.0
    if p > 1 - CONTRACT_TOL * 1e-2:
        return 1.0
    return p


def _binomial_z(count: int, n: int, p: float) -> float:
    p = _snap(p)
    var = n * p * (1 - p)
    if var == 0.0:
        return 0.0 if count == round(n * p) else math.inf
    return (count - n * p) / math.sqrt(var)


def _run_trials(args) -> list[tuple]:
    input, noise, seed, max_retries, indices, table = args
    config = pr.ProtocolConfig(noise=noise, max_retries=max_retries, seed=seed)
    root = RandomSource(seed)
    target = ideal_cnot(input)
    out = []
    for t in indices:
        try:
            result = pr.run(input, config, source=root.child(t), table=table)
        except pr.RetriesExhausted as exc:
            out.append((t, exc.history, None, None))
            continue
        out.append((t, result.history, result.attempts, fidelity(result.final_state, target)))
    return out


def geometric_gof(attempt_counts: Sequence[int], p: float) -> float:
    """Chi-square p-value of attempt counts against Geometric(p) on {1, 2, ...}."""
    counts = np.bincount(np.asarray(attempt_counts, dtype=int))[1:]
    n = len(attempt_counts)
    if p >= 1.0:
        return 1.0 if np.all(np.asarray(attempt_counts) == 1) else 0.0
    observed, expected = [], []
    k, tail = 1, 1.0
    while n * tail >= 10:
        pk = p * (1 - p) ** (k - 1)
        if n * (tail - pk) < 5:
            break
        observed.append(counts[k - 1] if k - 1 < len(counts) else 0)
        expected.append(n * pk)
        tail -= pk
        k += 1
    observed.append(n - sum(observed))
    expected.append(n - sum(expected))
    if len(observed) < 2:
        return 1.0
    return float(stats.chisquare(observed, expected).pvalue)


def sampled_vs_exact(
    input: StateVector,
    noise: NoiseModel,
    trials: int,
    seed: int = 0,
    max_retries: int = 100,
    workers: int = 1,
    table=None,
) -> SamplingReport:
    """Run ``trials`` sampled protocol runs and compare with the enumeration.

    Each attempt (not just each run) is one draw from the per-attempt
    outcome distribution, since restoration returns the exact input.  Trial
    ``t`` uses stream ``seed/t``, so results do not depend on ``workers``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    expected = outcome_probabilities(enumerate_branches(input, noise, table))
    indices = list(range(trials))
    if workers > 1:
        chunks = [indices[w::workers] for w in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(_run_trials, [(input, noise, seed, max_retries, c, table) for c in chunks])
            results = sorted((r for part in parts for r in part), key=lambda r: r[0])
    else:
        results = _run_trials((input, noise, seed, max_retries, indices, table))

    counts = dict.fromkeys(CATEGORIES, 0)
    attempt_counts, fids, truncated = [], [], 0
    digest = hashlib.sha256()
    for _, history, attempts, fid in results:
        digest.update(repr(history).encode())
        for chunk in split_attempts(history):
            counts[classify(chunk)] += 1
        if attempts is None:
            truncated += 1
        else:
            attempt_counts.append(attempts)
            fids.append(fid)
    n_attempts = sum(counts.values())
    z = {c: _binomial_z(counts[c], n_attempts, expected[c]) for c in CATEGORIES}
    p = _snap(expected["success"])
    mean = float(np.mean(attempt_counts)) if attempt_counts else math.inf
    if p > 0 and attempt_counts:
        mean_expected = 1 / p
        sd = math.sqrt((1 - p) / p**2 / len(attempt_counts))
        mean_z = 0.0 if sd == 0 else (mean - mean_expected) / sd
        gof = geometric_gof(attempt_counts, p)
    else:
        mean_expected, mean_z, gof = math.inf, math.inf, 0.0
    return SamplingReport(
        trials=trials,
        attempts_total=n_attempts,
        counts=counts,
        expected=expected,
        z_scores=z,
        mean_attempts=mean,
        expected_mean_attempts=mean_expected,
        mean_attempts_z=mean_z,
        geometric_pvalue=gof,
        truncated=truncated,
        worst_fidelity=min(fids) if fids else 0.0,
        digest=digest.hexdigest(),
    )
