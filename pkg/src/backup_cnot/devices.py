"""Atoms, photon modes and the noisy optical elements between them.

Atom alpha has levels a, b, c and atom beta has levels d, e, f, each with a
twofold Zeeman degeneracy, so both registers have dimension 6 with flat index
``2 * level + zeeman``.  The photon register is ``{vac, m1, m2}``; the channel
basis ``plus/minus`` and the detector basis ``D1/D2`` are fixed superpositions
of the two occupied modes.

Pulse convention: a pulse between levels x and y rotates ``|x> -> c|x> + s|y>``
and ``|y> -> c|y> - s|x>``, so a pi pulse sends ``x -> y`` and ``y -> -x``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .qstate import (
    EXHAUSTIVE,
    Instrument,
    LocalOperator,
    ProjectorFamily,
    RegisterLayout,
    Sampler,
    StateVector,
    apply_instrument,
)

ALPHA = "alpha"
BETA = "beta"
PHOTON = "photon"
ATOM_DIM = 6

ALPHA_LEVELS = ("a", "b", "c")
BETA_LEVELS = ("d", "e", "f")
_LEVELS = {name: (ALPHA, i) for i, name in enumerate(ALPHA_LEVELS)}
_LEVELS.update({name: (BETA, i) for i, name in enumerate(BETA_LEVELS)})

VAC, M1, M2 = 0, 1, 2
_S = 1 / math.sqrt(2)
PHOTON_MODES = {
    "vac": np.array([1, 0, 0], dtype=complex),
    "m1": np.array([0, 1, 0], dtype=complex),
    "m2": np.array([0, 0, 1], dtype=complex),
    "plus": np.array([0, _S, _S], dtype=complex),
    "minus": np.array([0, _S, -_S], dtype=complex),
}


class DeviceError(ValueError):
    pass


def atom_of(level: str) -> str:
    try:
        return _LEVELS[level][0]
    except KeyError:
        raise DeviceError(f"unknown level {level!r}") from None


def level_index(level: str) -> int:
    try:
        return _LEVELS[level][1]
    except KeyError:
        raise DeviceError(f"unknown level {level!r}") from None


def atom_index(level: str, zeeman: int) -> int:
    """Flat index of ``|level_zeeman>`` inside its atom register."""
    if zeeman not in (0, 1):
        raise DeviceError(f"Zeeman index must be 0 or 1, got {zeeman}")
    return 2 * level_index(level) + zeeman


def protocol_layout(ancillas: tuple[tuple[str, int], ...] = ()) -> RegisterLayout:
    """The fixed ``(alpha, beta, photon, ancillas...)`` register order."""
    return RegisterLayout(((ALPHA, ATOM_DIM), (BETA, ATOM_DIM), (PHOTON, 3)) + tuple(ancillas))


def detector_modes(delta: float) -> tuple[np.ndarray, np.ndarray]:
    """``D1 = (plus + e^{i delta} minus)/sqrt2``, ``D2 = (plus - e^{i delta} minus)/sqrt2``."""
    phase = cmath.exp(1j * delta)
    plus, minus = PHOTON_MODES["plus"], PHOTON_MODES["minus"]
    return (plus + phase * minus) * _S, (plus - phase * minus) * _S


def photon_basis(kind: str, delta: float = 0.0) -> np.ndarray:
    """Unitary whose columns are ``vac`` and the two occupied modes of ``kind``."""
    if kind == "m":
        cols = (PHOTON_MODES["m1"], PHOTON_MODES["m2"])
    elif kind == "pm":
        cols = (PHOTON_MODES["plus"], PHOTON_MODES["minus"])
    elif kind == "D":
        cols = detector_modes(delta)
    else:
        raise DeviceError(f"unknown photon basis {kind!r}")
    return np.column_stack((PHOTON_MODES["vac"],) + cols)


@dataclass(frozen=True)
class NoiseModel:
    """Error parameters of one transmission.

    ``eta``/``zeta`` attenuate the plus/minus channels, ``delta`` is the
    detector phase, ``k_plus`` the spurious plus amplitude scattered by level
    b, ``k_d`` the amplitude left behind in d by an imperfect beta transfer.
    """

    eta: complex = 1.0
    zeta: complex = 1.0
    delta: float = 0.0
    k_plus: complex = 0.0
    k_d: complex = 0.0
    detector_efficiency: float = 1.0

    def __post_init__(self):
        for name in ("eta", "zeta", "k_plus", "k_d"):
            value = complex(getattr(self, name))
            if not cmath.isfinite(value):
                raise DeviceError(f"{name} must be finite")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "delta", float(self.delta))
        object.__setattr__(self, "detector_efficiency", float(self.detector_efficiency))
        if abs(self.eta) > 1 + 1e-12:
            raise DeviceError(f"|eta| = {abs(self.eta)} exceeds 1")
        if abs(self.zeta) > 1 + 1e-12:
            raise DeviceError(f"|zeta| = {abs(self.zeta)} exceeds 1")
        if not 0.0 < self.detector_efficiency <= 1.0:
            raise DeviceError(f"detector_efficiency {self.detector_efficiency} not in (0, 1]")
        if not math.isfinite(self.delta):
            raise DeviceError("delta must be finite")

    @classmethod
    def ideal(cls) -> "NoiseModel":
        return cls()

    @property
    def is_ideal(self) -> bool:
        return self == NoiseModel.ideal()


@dataclass(frozen=True)
class DispersiveParams:
    g: float
    delta_detuning: float
    T: float


def phase_from_dispersive(p: DispersiveParams) -> float:
    """Conditional phase ``g^2 T / Delta`` picked up during the interaction."""
    if p.delta_detuning == 0:
        raise DeviceError("zero detuning: dispersive phase undefined")
    phi = p.g**2 * p.T / p.delta_detuning
    if not math.isfinite(phi):
        raise DeviceError("dispersive phase is not finite")
    return phi


def k_plus_from_phase(phi: float) -> complex:
    """Plus/minus amplitude ratio scattered by level b for phase ``phi``.

    With the a-branch calibrated to the plus channel, the b-branch photon is
    ``e^{i phi/2} (cos(phi/2)|plus> + i sin(phi/2)|minus>)``, whose ratio is
    ``(e^{i phi} + 1) / (e^{i phi} - 1)``.
    """
    w = cmath.exp(1j * phi)
    if abs(w - 1) < 1e-12:
        raise DeviceError(f"phase {phi} is a multiple of 2 pi: no minus component")
    return (w + 1) / (w - 1)


# --- single-atom pulses ---------------------------------------------------


def _atom_pair(x: str, y: str) -> str:
    ax, ay = atom_of(x), atom_of(y)
    if x == y:
        raise DeviceError(f"pulse needs two distinct levels, got {x!r} twice")
    if ax != ay:
        raise DeviceError(f"levels {x!r} and {y!r} belong to different atoms")
    return ax


def _zeemans(zeeman: Optional[int]) -> tuple[int, ...]:
    if zeeman is None:
        return (0, 1)
    if zeeman not in (0, 1):
        raise DeviceError(f"Zeeman index must be 0 or 1, got {zeeman}")
    return (zeeman,)


def _rotation(x: str, y: str, c: float, s: float, zeeman: Optional[int], name: str) -> LocalOperator:
    atom = _atom_pair(x, y)
    m = np.eye(ATOM_DIM, dtype=complex)
    for z in _zeemans(zeeman):
        ix, iy = atom_index(x, z), atom_index(y, z)
        m[ix, ix], m[iy, ix] = c, s
        m[ix, iy], m[iy, iy] = -s, c
    return LocalOperator((atom,), m, unitary=True, name=name)


@lru_cache(maxsize=None)
def pulse_pi_half(x: str, y: str, zeeman: Optional[int] = None) -> LocalOperator:
    """``|x> -> (|x>+|y>)/sqrt2``, ``|y> -> (|y>-|x>)/sqrt2``."""
    return _rotation(x, y, _S, _S, zeeman, f"pi/2[{x}->{y}]")


@lru_cache(maxsize=None)
def pulse_pi(x: str, y: str, zeeman: Optional[int] = None) -> LocalOperator:
    """``|x> -> |y>``, ``|y> -> -|x>``; restricted to one Zeeman index if given."""
    return _rotation(x, y, 0.0, 1.0, zeeman, f"pi[{x}->{y}]")


@lru_cache(maxsize=None)
def zeeman_swap(level: str) -> LocalOperator:
    atom = atom_of(level)
    m = np.eye(ATOM_DIM, dtype=complex)
    i0, i1 = atom_index(level, 0), atom_index(level, 1)
    m[[i0, i1]] = m[[i1, i0]]
    return LocalOperator((atom,), m, unitary=True, name=f"zswap[{level}]")


@lru_cache(maxsize=None)
def sign_flip(level: str, zeeman: Optional[int] = None) -> LocalOperator:
    atom = atom_of(level)
    m = np.eye(ATOM_DIM, dtype=complex)
    for z in _zeemans(zeeman):
        i = atom_index(level, z)
        m[i, i] = -1
    return LocalOperator((atom,), m, unitary=True, name=f"flip[{level}]")


@lru_cache(maxsize=None)
def level_projectors(atom: str, groups: tuple[tuple[str, ...], ...], labels=None) -> ProjectorFamily:
    """QND energy measurement: one projector per group of levels."""
    ps = []
    for group in groups:
        p = np.zeros((ATOM_DIM, ATOM_DIM), dtype=complex)
        for level in group:
            if atom_of(level) != atom:
                raise DeviceError(f"level {level!r} is not on {atom}")
            for z in (0, 1):
                i = atom_index(level, z)
                p[i, i] = 1
        ps.append(p)
    labels = labels or tuple("".join(g) for g in groups)
    return ProjectorFamily((atom,), tuple(ps), tuple(labels))


# --- atom-photon interactions --------------------------------------------


@lru_cache(maxsize=None)
def dispersive_phase(level: str, mode: str, phi: float) -> LocalOperator:
    """Phase ``e^{i phi}`` on (atom in ``level``) x (photon in ``mode``).

    ``mode`` is any occupied single-photon mode (m1, m2, plus, minus).
    """
    if mode == "vac" or mode not in PHOTON_MODES:
        raise DeviceError(f"dispersive phase needs an occupied photon mode, got {mode!r}")
    atom = atom_of(level)
    v = PHOTON_MODES[mode]
    photon_proj = np.outer(v, v.conj())
    atom_proj = np.zeros((ATOM_DIM, ATOM_DIM))
    for z in (0, 1):
        i = atom_index(level, z)
        atom_proj[i, i] = 1
    p = np.kron(atom_proj, photon_proj)
    m = np.eye(ATOM_DIM * 3, dtype=complex) + (cmath.exp(1j * phi) - 1) * p
    return LocalOperator((atom, PHOTON), m, unitary=True, name=f"disp[{level},{mode}]")


def _in_pm_basis(u_pm: np.ndarray) -> np.ndarray:
    """Lift a 2x2 map on (plus, minus) to the photon register, vac fixed."""
    b = photon_basis("pm")
    lifted = np.eye(3, dtype=complex)
    lifted[1:, 1:] = u_pm
    return b @ lifted @ b.conj().T


def _branch_rotation(k: complex) -> np.ndarray:
    """Unitary 2x2 whose first column is ``(k, 1)/sqrt(1+|k|^2)``."""
    n = math.sqrt(1 + abs(k) ** 2)
    return np.array([[k, 1], [1, -np.conj(k)]], dtype=complex) / n


@lru_cache(maxsize=256)
def alpha_scatter(noise: NoiseModel) -> LocalOperator:
    """Photon scattering off alpha.

    Level a (and the inert c) leaves the photon in ``plus``; level b sends
    ``plus -> (minus + k_plus plus)/sqrt(1+|k_plus|^2)``.  The map on the
    b-branch is completed to a unitary, so no weight is lost here.
    """
    u_b = _in_pm_basis(_branch_rotation(noise.k_plus))
    atom_proj_b = np.zeros((ATOM_DIM, ATOM_DIM))
    for z in (0, 1):
        i = atom_index("b", z)
        atom_proj_b[i, i] = 1
    m = np.kron(np.eye(ATOM_DIM) - atom_proj_b, np.eye(3)) + np.kron(atom_proj_b, u_b)
    return LocalOperator((ALPHA, PHOTON), m, unitary=True, name="alpha_scatter")


@lru_cache(maxsize=256)
def channel(noise: NoiseModel) -> Instrument:
    """Lossy plus/minus channels as a jump instrument.

    Outcomes: ``pass`` (no-jump evolution ``plus -> eta plus``,
    ``minus -> zeta minus``), ``loss+`` and ``loss-`` (photon absorbed in that
    channel, register left in ``vac``).
    """
    plus, minus, vac = PHOTON_MODES["plus"], PHOTON_MODES["minus"], PHOTON_MODES["vac"]
    no_jump = np.outer(vac, vac) + noise.eta * np.outer(plus, plus) + noise.zeta * np.outer(minus, minus)
    jump_plus = math.sqrt(max(0.0, 1 - abs(noise.eta) ** 2)) * np.outer(vac, plus)
    jump_minus = math.sqrt(max(0.0, 1 - abs(noise.zeta) ** 2)) * np.outer(vac, minus)
    return Instrument((PHOTON,), (no_jump, jump_plus, jump_minus), ("pass", "loss+", "loss-"))


def loss_probability(state: StateVector, noise: NoiseModel) -> float:
    """Jump probability ``1 - |after|^2/|before|^2`` of the no-jump channel map."""
    outcomes = apply_instrument(state, channel(noise), EXHAUSTIVE)
    lost = sum(o.probability for o in outcomes if o.label != "pass")
    return lost / state.norm2


@lru_cache(maxsize=256)
def beta_scatter(noise: NoiseModel) -> LocalOperator:
    """Photon-conditioned transfer of beta from d to e, pulses included.

    ``plus`` (and ``vac``) leave beta alone.  ``minus`` sends
    ``|d_i> -> -(k_d|d_i> + |e_i>)/sqrt(1+|k_d|^2)``.  The overall minus sign
    is what the pulse sequence pi/2[d->e], pi phase on e, pi/2[e->d]
    produces, and it is the sign the D1 correction in the transmission
    undoes.  Level f is untouched.
    """
    minus = PHOTON_MODES["minus"]
    p_minus = np.outer(minus, minus.conj())
    m_beta = np.eye(ATOM_DIM, dtype=complex)
    rot = -_branch_rotation(noise.k_d)
    for z in (0, 1):
        idx = [atom_index("d", z), atom_index("e", z)]
        m_beta[np.ix_(idx, idx)] = rot
    m = np.kron(np.eye(ATOM_DIM), np.eye(3) - p_minus) + np.kron(m_beta, p_minus)
    return LocalOperator((BETA, PHOTON), m, unitary=True, name="beta_scatter")


def ideal_beta_pulse_sequence() -> list[LocalOperator]:
    """Explicit pulse sequence equal to ``beta_scatter`` at ideal noise."""
    return [pulse_pi_half("d", "e"), dispersive_phase("e", "minus", math.pi), pulse_pi_half("e", "d")]


@lru_cache(maxsize=256)
def detector(noise: NoiseModel) -> Instrument:
    """Beam splitter plus two detectors in the ``D1/D2`` basis.

    A click leaves the register in ``vac``.  With efficiency below one the
    photon may go unregistered; those Kraus operators, and the vacuum pass
    through, are all labelled ``NoClick``.
    """
    d1, d2 = detector_modes(noise.delta)
    vac = PHOTON_MODES["vac"]
    eff = noise.detector_efficiency
    kraus = [math.sqrt(eff) * np.outer(vac, d1.conj()), math.sqrt(eff) * np.outer(vac, d2.conj()), np.outer(vac, vac)]
    labels = ["D1", "D2", "NoClick"]
    if eff < 1.0:
        miss = math.sqrt(1 - eff)
        kraus += [miss * np.outer(vac, d1.conj()), miss * np.outer(vac, d2.conj())]
        labels += ["NoClick", "NoClick"]
    return Instrument((PHOTON,), tuple(kraus), tuple(labels))


def detect(state: StateVector, noise: NoiseModel, sampler: Sampler):
    """Measure the photon in the detector basis; see :func:`detector`."""
    return apply_instrument(state, detector(noise), sampler)


@lru_cache(maxsize=256)
def transmission_instrument(noise: NoiseModel) -> Instrument:
    """Channel, beta interaction and detection composed into one instrument.

    Acts on (beta, photon).  Labels are those of the channel jumps
    (``loss+``, ``loss-``) and of the detector (``D1``, ``D2``, ``NoClick``).
    """
    eye = np.eye(ATOM_DIM)
    chan, det = channel(noise), detector(noise)
    scatter = beta_scatter(noise).matrix
    passed = scatter @ np.kron(eye, chan.kraus[0])
    kraus, labels = [], []
    for k, label in zip(chan.kraus[1:], chan.labels[1:]):
        kraus.append(np.kron(eye, k))
        labels.append(label)
    for k, label in zip(det.kraus, det.labels):
        kraus.append(np.kron(eye, k) @ passed)
        labels.append(label)
    return Instrument((BETA, PHOTON), tuple(kraus), tuple(labels))


@lru_cache(maxsize=None)
def photon_injection() -> LocalOperator:
    """Unitary taking ``vac`` to a fresh photon in ``plus`` (and back)."""
    vac, plus = PHOTON_MODES["vac"], PHOTON_MODES["plus"]
    m = np.eye(3, dtype=complex) - np.outer(vac, vac) - np.outer(plus, plus) + np.outer(plus, vac) + np.outer(vac, plus)
    return LocalOperator((PHOTON,), m, unitary=True, name="inject")


def global_zeeman_swap(targets: tuple[str, ...]) -> np.ndarray:
    """Zeeman 0<->1 on every atom in ``targets`` (identity on the photon)."""
    swap = np.zeros((ATOM_DIM, ATOM_DIM))
    for lvl in range(3):
        swap[2 * lvl, 2 * lvl + 1] = swap[2 * lvl + 1, 2 * lvl] = 1
    out = np.eye(1)
    for t in targets:
        out = np.kron(out, swap if t in (ALPHA, BETA) else np.eye(3))
    return out
