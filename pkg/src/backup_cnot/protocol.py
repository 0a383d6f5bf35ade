"""The backup control-NOT between two remote atoms.

One attempt is: backup encoding on alpha, first transmission, symmetrization,
second transmission, post-selection on beta leaving level d, and diagonal
extraction.  Photon loss, missed clicks, or beta found in d end the attempt;
the atoms are then measured level-wise and pulsed back to (a, d), which
restores the Zeeman qubits exactly, and the attempt is repeated.

Every measuring step maps a :class:`Branch` to a list of branches.  With a
:class:`~backup_cnot.qstate.RandomSource` the list has one element; with
:data:`~backup_cnot.qstate.EXHAUSTIVE` it holds every outcome, each carrying
its exact probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import devices as dv
from .devices import ALPHA, BETA, PHOTON, NoiseModel
from .qstate import (
    EXHAUSTIVE,
    LocalOperator,
    RandomSource,
    RegisterLayout,
    Sampler,
    StateVector,
    apply_instrument,
    apply_local,
    apply_sequence,
    measure_subspaces,
    permute_subsystems,
    relabel,
)

PRECONDITION_TOL = 1e-9

RUNNING, SUCCESS, FAILED = "running", "success", "failed"


class ProtocolError(RuntimeError):
    pass


class RetriesExhausted(ProtocolError):
    def __init__(self, attempts: int, history: list):
        super().__init__(f"no successful attempt in {attempts} tries")
        self.attempts = attempts
        self.history = history


# --- events ---------------------------------------------------------------


@dataclass(frozen=True)
class Click:
    transmission: int
    detector: str


@dataclass(frozen=True)
class Loss:
    transmission: int
    cause: str


@dataclass(frozen=True)
class BetaFoundInD:
    pass


@dataclass(frozen=True)
class AlphaQND:
    level: str


@dataclass(frozen=True)
class BetaQND:
    outcome: str


@dataclass(frozen=True)
class Restored:
    pass


def event_to_dict(event) -> dict:
    return {"event": type(event).__name__, **event.__dict__}


@dataclass(frozen=True)
class Branch:
    state: StateVector
    probability: float = 1.0
    events: tuple = ()
    status: str = RUNNING

    def fork(self, state: StateVector, p: float, *events, status: Optional[str] = None) -> "Branch":
        return Branch(state, self.probability * p, self.events + events, status or self.status)


@dataclass(frozen=True)
class ProtocolConfig:
    noise: NoiseModel = field(default_factory=NoiseModel.ideal)
    max_retries: int = 100
    mode: str = "sample"
    seed: int = 0

    def __post_init__(self):
        if self.max_retries < 1:
            raise ValueError(f"max_retries must be >= 1, got {self.max_retries}")
        if self.mode not in ("sample", "enumerate"):
            raise ValueError(f"mode must be 'sample' or 'enumerate', got {self.mode!r}")


@dataclass
class ProtocolResult:
    final_state: StateVector
    attempts: int
    history: list
    success_probability_per_attempt: Optional[float] = None


# --- preconditions --------------------------------------------------------


@lru_cache(maxsize=None)
def _mask(layout: RegisterLayout, label: str, indices: tuple[int, ...]) -> np.ndarray:
    t = np.zeros(layout.dims)
    view = np.moveaxis(t, layout.axis(label), 0)
    view[list(indices)] = 1.0
    return t.reshape(-1)


def _weight(state: StateVector, label: str, indices: Sequence[int]) -> float:
    """Squared norm carried by the given basis indices of one subsystem."""
    return float(_mask(state.layout, label, tuple(indices)) @ state.probabilities)


@lru_cache(maxsize=None)
def _level_indices(*levels: str) -> tuple[int, ...]:
    return tuple(dv.atom_index(lvl, z) for lvl in levels for z in (0, 1))


@lru_cache(maxsize=None)
def _complement(levels: str) -> tuple[int, ...]:
    keep = _level_indices(*levels)
    return tuple(i for i in range(dv.ATOM_DIM) if i not in keep)


def _require(cond: bool, message: str):
    if not cond:
        raise ProtocolError(message)


def _require_vacuum(state: StateVector):
    stray = _weight(state, PHOTON, (dv.M1, dv.M2))
    _require(stray <= PRECONDITION_TOL, f"photon register not in vacuum (weight {stray:.3g})")


def _outside(state: StateVector, label: str, levels: str) -> float:
    return _weight(state, label, _complement(levels))


# --- local steps ----------------------------------------------------------


def backup_encode(state: StateVector) -> StateVector:
    """pi/2 pulse a->b: each |a_i> becomes (|a_i> + |b_i>)/sqrt2."""
    _require(_outside(state, ALPHA, "a") <= PRECONDITION_TOL, "backup encoding needs alpha entirely in level a")
    return apply_local(state, dv.pulse_pi_half("a", "b"))


def symmetrize(state: StateVector) -> StateVector:
    """Interchange a and b on alpha and shelve e into f on beta."""
    _require_vacuum(state)
    shelved = _weight(state, BETA, _level_indices("f"))
    _require(shelved <= PRECONDITION_TOL, f"beta already has weight {shelved:.3g} in f")
    return apply_sequence(state, (dv.pulse_pi("a", "b"), dv.pulse_pi("e", "f")))


@lru_cache(maxsize=256)
def _send(noise: NoiseModel) -> LocalOperator:
    """Fresh photon in the plus channel, scattered off alpha."""
    inject = LocalOperator((ALPHA, PHOTON), np.kron(np.eye(dv.ATOM_DIM), dv.photon_injection().matrix))
    return inject.then(dv.alpha_scatter(noise))


def transmit(branch: Branch, noise: NoiseModel, sampler: Sampler, transmission: int = 1) -> list[Branch]:
    """Send one photon from alpha to beta and detect it.

    A D1 click is followed by a sign flip of level b.  Channel loss or a
    missing click ends the branch as a failure with photon in vacuum.
    """
    state = branch.state
    _require_vacuum(state)
    state = apply_local(state, _send(noise))
    out = []
    # channel -> beta interaction -> detectors, as one composed instrument
    for o in apply_instrument(state, dv.transmission_instrument(noise), sampler):
        if o.label in ("loss+", "loss-"):
            out.append(branch.fork(o.state, o.probability, Loss(transmission, "channel"), status=FAILED))
        elif o.label == "NoClick":
            out.append(branch.fork(o.state, o.probability, Loss(transmission, "detector"), status=FAILED))
        else:
            s = apply_local(o.state, dv.sign_flip("b")) if o.label == "D1" else o.state
            out.append(branch.fork(s, o.probability, Click(transmission, o.label)))
    return out


_BETA_D = dv.level_projectors(BETA, (("d",), ("e", "f")), ("d", "not_d"))
_ALPHA_LEVEL = dv.level_projectors(ALPHA, (("a",), ("b",), ("c",)))
_BETA_LEVEL = dv.level_projectors(BETA, (("d",), ("e",), ("f",)))


def postselect_beta_not_d(branch: Branch, sampler: Sampler) -> list[Branch]:
    """QND test of beta being in d; finding it there fails the attempt."""
    out = []
    for o in measure_subspaces(branch.state, _BETA_D, sampler):
        if o.label == "d":
            out.append(branch.fork(o.state, o.probability, BetaFoundInD(), status=FAILED))
        else:
            out.append(branch.fork(o.state, o.probability, BetaQND("not_d")))
    return out


def restore(branch: Branch, sampler: Sampler) -> list[Branch]:
    """Level measurements on both atoms, then pi pulses back to (a, d)."""
    _require_vacuum(branch.state)
    out = []
    for a in measure_subspaces(branch.state, _ALPHA_LEVEL, sampler):
        s = apply_local(a.state, dv.pulse_pi("b", "a")) if a.label == "b" else a.state
        for b in measure_subspaces(s, _BETA_LEVEL, sampler):
            t = apply_local(b.state, dv.pulse_pi(b.label, "d")) if b.label != "d" else b.state
            out.append(branch.fork(t, a.probability * b.probability, AlphaQND(a.label), BetaQND(b.label), Restored()))
    return out


# --- diagonal extraction ---------------------------------------------------

# Keys: (alpha level after the a1<->b1 exchange, beta subspace).  Values are
# the pulses that bring both atoms to (a, d) with the CNOT signs.
ExtractionTable = Mapping[tuple[str, str], tuple[LocalOperator, ...]]


def extraction_table() -> dict[tuple[str, str], tuple[LocalOperator, ...]]:
    # On level a alone, flipping Zeeman 0 is minus flipping Zeeman 1; the
    # choice below gives every outcome the same global phase.
    return {
        ("a", "e+f"): (dv.pulse_pi("e", "d"),),
        ("a", "e-f"): (dv.sign_flip("a", zeeman=1), dv.pulse_pi("f", "d")),
        ("b", "e+f"): (dv.pulse_pi("b", "a"), dv.sign_flip("a", zeeman=0), dv.pulse_pi("e", "d")),
        ("b", "e-f"): (dv.pulse_pi("b", "a"), dv.pulse_pi("f", "d")),
    }


def corrupted_extraction_table() -> dict[tuple[str, str], tuple[LocalOperator, ...]]:
    """Negative control: one branch misses its Zeeman sign correction."""
    table = extraction_table()
    table[("a", "e-f")] = (dv.pulse_pi("f", "d"),)
    return table


_BETA_SUBSPACE = dv.level_projectors(BETA, (("e",), ("f",), ("d",)), ("e+f", "e-f", "d"))


def diagonal_extraction(branch: Branch, sampler: Sampler, table: Optional[ExtractionTable] = None) -> list[Branch]:
    """Turn sum c_ij (|b_i e_j> - |a_i f_j>) into sum c_ij |a_i d_{i xor j}>.

    alpha is tested for the diagonal {a0, b1} by exchanging a1 and b1 and
    measuring the level; the Zeeman pair of e (diagonal) or f (anti-diagonal)
    is then swapped, beta is rotated so that (e+f) and (e-f) land in e and f,
    and a table lookup finishes the job.
    """
    table = extraction_table() if table is None else table
    state = branch.state
    _require_vacuum(state)
    stray = _outside(state, ALPHA, "ab") + _outside(state, BETA, "ef")
    _require(stray <= PRECONDITION_TOL, f"extraction input has weight {stray:.3g} outside {{a,b}}x{{e,f}}")
    state = apply_local(state, dv.pulse_pi("a", "b", zeeman=1))
    out = []
    for a in measure_subspaces(state, _ALPHA_LEVEL, sampler):
        s = apply_sequence(a.state, (dv.zeeman_swap("e" if a.label == "a" else "f"), dv.pulse_pi_half("f", "e")))
        for b in measure_subspaces(s, _BETA_SUBSPACE, sampler):
            key = (a.label, b.label)
            if key not in table:
                raise ProtocolError(f"no extraction entry for outcome {key}")
            final = apply_sequence(b.state, table[key])
            out.append(
                branch.fork(final, a.probability * b.probability, AlphaQND(a.label), BetaQND(b.label), status=SUCCESS)
            )
    return out


# --- composition ----------------------------------------------------------


def _advance(branches: list[Branch], step: Callable[[Branch], list[Branch]]) -> list[Branch]:
    out = []
    for b in branches:
        out.extend(step(b) if b.status == RUNNING else [b])
    return out


def _local(fn: Callable[[StateVector], StateVector]) -> Callable[[Branch], list[Branch]]:
    return lambda b: [Branch(fn(b.state), b.probability, b.events, b.status)]


def _restore_failures(branches: list[Branch], sampler: Sampler) -> list[Branch]:
    out = []
    for b in branches:
        out.extend(restore(b, sampler) if b.status == FAILED else [b])
    return out


def entangle_levels(state: StateVector, noise: NoiseModel, sampler: Sampler) -> list[Branch]:
    """Encode, transmit twice and post-select.

    Surviving branches hold sum c_ij (|b_i e_j> - |a_i f_j>); failed branches
    come back restored to their input.
    """
    branches = [Branch(state)]
    branches = _advance(branches, _local(backup_encode))
    branches = _advance(branches, lambda b: transmit(b, noise, sampler, 1))
    branches = _advance(branches, _local(symmetrize))
    branches = _advance(branches, lambda b: transmit(b, noise, sampler, 2))
    branches = _advance(branches, lambda b: postselect_beta_not_d(b, sampler))
    return _restore_failures(branches, sampler)


def attempt(
    state: StateVector, noise: NoiseModel, sampler: Sampler, table: Optional[ExtractionTable] = None
) -> list[Branch]:
    """One full attempt; every returned branch is either SUCCESS or FAILED+restored."""
    branches = entangle_levels(state, noise, sampler)
    return _advance(branches, lambda b: diagonal_extraction(b, sampler, table))


def check_input(state: StateVector):
    _require(
        state.layout.labels[:3] == (ALPHA, BETA, PHOTON),
        f"register must start with (alpha, beta, photon), got {state.layout.labels}",
    )
    _require_vacuum(state)
    stray = _outside(state, ALPHA, "a") + _outside(state, BETA, "d")
    _require(stray <= PRECONDITION_TOL, f"input has weight {stray:.3g} outside levels (a, d)")


def run(
    input: StateVector,
    config: ProtocolConfig,
    source: Optional[RandomSource] = None,
    table: Optional[ExtractionTable] = None,
) -> ProtocolResult:
    """Repeat attempts until one succeeds.

    In sample mode a single trajectory is followed (``source`` defaults to a
    stream seeded with ``config.seed``).  In enumerate mode a single attempt
    is expanded exhaustively; the result carries the per-attempt success
    probability and the most probable successful output.
    """
    check_input(input)
    state = input.normalized()
    noise = config.noise
    if config.mode == "enumerate":
        branches = attempt(state, noise, EXHAUSTIVE, table)
        wins = [b for b in branches if b.status == SUCCESS]
        if not wins:
            raise RetriesExhausted(1, [])
        best = max(wins, key=lambda b: b.probability)
        return ProtocolResult(best.state, 1, list(best.events), float(sum(b.probability for b in wins)))

    source = source if source is not None else RandomSource(config.seed)
    history: list = []
    for n in range(1, config.max_retries + 1):
        (branch,) = attempt(state, noise, source, table)
        history.extend(branch.events)
        if branch.status == SUCCESS:
            return ProtocolResult(branch.state.normalized(), n, history)
        state = branch.state
    raise RetriesExhausted(config.max_retries, history)


# --- one atom per node ----------------------------------------------------


@dataclass
class EprChainReport:
    node_count: int
    horizontal_fidelities: list[float]
    vertical_fidelities: list[float]
    horizontal_after_cnot: list[float]
    attempts: list[int]
    success_probability: Optional[float] = None
    states: list[StateVector] = field(default_factory=list, repr=False)

    @property
    def worst(self) -> float:
        return min(self.horizontal_fidelities + self.vertical_fidelities)


_LEFT, _RIGHT = "left", "right"


def _pair_fidelity(state: StateVector, keep: Sequence[tuple[str, str]], target: np.ndarray) -> float:
    """<target| rho |target> for the reduced state on the ``keep`` factors.

    Atom registers split into a "level" (3) and a "zeeman" (2) factor; "all"
    keeps the whole subsystem.
    """
    names, shape = [], []
    for label, dim in state.layout.subsystems:
        if dim == dv.ATOM_DIM:
            names += [(label, "level"), (label, "zeeman")]
            shape += [3, 2]
        else:
            names.append((label, "all"))
            shape.append(dim)
    order = []
    for label, part in keep:
        if part == "all" and (label, "level") in names:
            order += [names.index((label, "level")), names.index((label, "zeeman"))]
        else:
            order.append(names.index((label, part)))
    rest = [i for i in range(len(shape)) if i not in order]
    t = (state.tensor() / math.sqrt(state.norm2)).reshape(shape)
    m = np.transpose(t, order + rest).reshape(math.prod(shape[i] for i in order), -1)
    v = np.asarray(target, dtype=complex).reshape(-1)
    v = v / np.linalg.norm(v)
    w = v.conj() @ m
    return float(np.real(np.vdot(w, w)))


def _horizontal_target() -> np.ndarray:
    """(|0>_alpha-zeeman |d0>_left - |1> |d1>) / sqrt2."""
    v = np.zeros((2, dv.ATOM_DIM), dtype=complex)
    v[0, dv.atom_index("d", 0)] = 1
    v[1, dv.atom_index("d", 1)] = -1
    return v / math.sqrt(2)


def _vertical_target() -> np.ndarray:
    """(|b>_alpha-level |e0>_right - |a> |f0>) / sqrt2, in our pulse convention."""
    v = np.zeros((3, dv.ATOM_DIM), dtype=complex)
    v[dv.level_index("b"), dv.atom_index("e", 0)] = 1
    v[dv.level_index("a"), dv.atom_index("f", 0)] = -1
    return v / math.sqrt(2)


def share_epr_chain(node_count: int, config: ProtocolConfig) -> EprChainReport:
    """Give a single-atom node EPR pairs with both neighbours.

    The middle atom starts in (|a0> - |a1>)/sqrt2, runs the full CNOT with
    its left neighbour (horizontal pair in the Zeeman indices) and then only
    the level-entangling half of the protocol with its right neighbour
    (vertical pair in the levels).  For more than three nodes every interior
    node's triple is simulated in turn.
    """
    if node_count < 3:
        raise ValueError(f"an EPR chain needs at least 3 nodes, got {node_count}")
    layout = dv.protocol_layout(((_RIGHT, dv.ATOM_DIM),))
    amps = np.zeros(layout.dims, dtype=complex)
    d0 = dv.atom_index("d", 0)
    amps[dv.atom_index("a", 0), d0, dv.VAC, d0] = 1 / math.sqrt(2)
    amps[dv.atom_index("a", 1), d0, dv.VAC, d0] = -1 / math.sqrt(2)
    start = StateVector.from_tensor(layout, amps)

    report = EprChainReport(node_count, [], [], [], [])
    root = RandomSource(config.seed)
    probabilities = []
    for node in range(1, node_count - 1):
        source = root.child(node)
        cnot = run(start, config, source=source)
        horizontal = relabel(cnot.final_state, {BETA: _LEFT, _RIGHT: BETA})
        horizontal = permute_subsystems(horizontal, (ALPHA, BETA, PHOTON, _LEFT))
        report.horizontal_after_cnot.append(
            _pair_fidelity(horizontal, [(ALPHA, "zeeman"), (_LEFT, "all")], _horizontal_target())
        )
        kept, attempts, p = _entangle_until_kept(horizontal, config, source)
        probabilities.append(p)
        report.attempts.append(cnot.attempts + attempts)
        for s in kept:
            report.horizontal_fidelities.append(
                _pair_fidelity(s, [(ALPHA, "zeeman"), (_LEFT, "all")], _horizontal_target())
            )
            report.vertical_fidelities.append(_pair_fidelity(s, [(ALPHA, "level"), (BETA, "all")], _vertical_target()))
            report.states.append(s)
    if config.mode == "enumerate":
        report.success_probability = min(probabilities)
    return report


def _entangle_until_kept(state: StateVector, config: ProtocolConfig, source: RandomSource):
    if config.mode == "enumerate":
        kept = [b for b in entangle_levels(state, config.noise, EXHAUSTIVE) if b.status == RUNNING]
        if not kept:
            raise RetriesExhausted(1, [])
        return [b.state for b in kept], 1, float(sum(b.probability for b in kept))
    history = []
    for n in range(1, config.max_retries + 1):
        (branch,) = entangle_levels(state, config.noise, source)
        history.extend(branch.events)
        if branch.status == RUNNING:
            return [branch.state], n, None
        state = branch.state
    raise RetriesExhausted(config.max_retries, history)
