"""Dense pure-state engine for small composite registers.

States are flat complex arrays indexed row-major over the layout's subsystem
order.  Operations never mutate their inputs; they return new states.

Measurements take a *sampler*: either a :class:`RandomSource`, which picks one
outcome by cumulative-probability inversion, or :data:`EXHAUSTIVE`, which
returns every outcome with non-negligible weight.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence, Union

import numpy as np

UNITARY_TOL = 1e-12
PROBABILITY_TOL = 1e-10
NORM_SLACK = 1e-9
# Outcomes lighter than this are treated as impossible when branching.
PRUNE_PROBABILITY = 1e-20

PHOTON_LABEL = "photon"
PHOTON_DIM = 3


class QStateError(ValueError):
    """Raised for malformed layouts, states, operators or measurements."""


@dataclass(frozen=True)
class RegisterLayout:
    """Ordered subsystems as ``(label, dim)`` pairs."""

    subsystems: tuple[tuple[str, int], ...]

    def __post_init__(self):
        subsystems = tuple((str(label), int(dim)) for label, dim in self.subsystems)
        object.__setattr__(self, "subsystems", subsystems)
        if not subsystems:
            raise QStateError("layout needs at least one subsystem")
        labels = [label for label, _ in subsystems]
        if len(set(labels)) != len(labels):
            raise QStateError(f"duplicate subsystem labels in {labels}")
        for label, dim in subsystems:
            if label == PHOTON_LABEL and dim != PHOTON_DIM:
                raise QStateError(f"photon register must have dim {PHOTON_DIM}, got {dim}")
            if dim < 2:
                raise QStateError(f"subsystem {label!r} has dim {dim} < 2")
        object.__setattr__(self, "labels", tuple(labels))
        object.__setattr__(self, "dims", tuple(dim for _, dim in subsystems))
        object.__setattr__(self, "dim", math.prod(self.dims))

    def axis(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise QStateError(f"no subsystem {label!r} in layout {self.labels}") from None

    def dim_of(self, label: str) -> int:
        return self.dims[self.axis(label)]

    def flat_index(self, indices: Union[Sequence[int], Mapping[str, int]]) -> int:
        """Row-major flat index of a per-subsystem basis index tuple."""
        if isinstance(indices, Mapping):
            unknown = set(indices) - set(self.labels)
            if unknown:
                raise QStateError(f"unknown subsystems {sorted(unknown)}")
            indices = [indices.get(label, 0) for label in self.labels]
        if len(indices) != len(self.subsystems):
            raise QStateError(
                f"expected {len(self.subsystems)} indices, got {len(indices)}"
            )
        for (label, dim), i in zip(self.subsystems, indices):
            if not 0 <= int(i) < dim:
                raise QStateError(
                    f"index {i} out of range for subsystem {label!r} (dim {dim})"
                )
        return int(np.ravel_multi_index(tuple(int(i) for i in indices), self.dims))

    def extended(self, extra: Iterable[tuple[str, int]]) -> "RegisterLayout":
        return RegisterLayout(self.subsystems + tuple(extra))

    def to_dict(self) -> dict:
        return {"subsystems": [[label, dim] for label, dim in self.subsystems]}

    @classmethod
    def from_dict(cls, data: Mapping) -> "RegisterLayout":
        return cls(tuple((label, dim) for label, dim in data["subsystems"]))


@dataclass(frozen=True, eq=False)
class StateVector:
    """Pure state (possibly sub-normalized) over a :class:`RegisterLayout`."""

    layout: RegisterLayout
    amps: np.ndarray

    def __post_init__(self):
        amps = np.array(self.amps, dtype=complex).reshape(-1)
        if amps.size != self.layout.dim:
            raise QStateError(
                f"amplitude array has length {amps.size}, layout needs {self.layout.dim}"
            )
        self._seal(amps)

    def _seal(self, amps: np.ndarray):
        # a NaN or Inf anywhere makes the squared norm non-finite
        norm2 = float(np.vdot(amps, amps).real)
        if not math.isfinite(norm2):
            raise QStateError("non-finite amplitude")
        if norm2 <= 0.0:
            raise QStateError("zero-norm state")
        if norm2 > 1.0 + NORM_SLACK:
            raise QStateError(f"squared norm {norm2!r} exceeds 1")
        amps.flags.writeable = False
        object.__setattr__(self, "amps", amps)
        object.__setattr__(self, "norm2", norm2)

    @classmethod
    def _wrap(cls, layout: RegisterLayout, amps: np.ndarray) -> "StateVector":
        """Construct from a freshly computed array owned by the new state."""
        state = object.__new__(cls)
        object.__setattr__(state, "layout", layout)
        state._seal(amps)
        return state

    @property
    def probabilities(self) -> np.ndarray:
        """|amplitude|^2 per basis index (computed once)."""
        probs = self.__dict__.get("_probs")
        if probs is None:
            probs = self.amps.real**2 + self.amps.imag**2
            probs.flags.writeable = False
            object.__setattr__(self, "_probs", probs)
        return probs

    def normalized(self) -> "StateVector":
        return StateVector._wrap(self.layout, self.amps / math.sqrt(self.norm2))

    def tensor(self) -> np.ndarray:
        return self.amps.reshape(self.layout.dims)

    def amplitude(self, indices) -> complex:
        return complex(self.amps[self.layout.flat_index(indices)])

    def nonzero(self, tol: float = 1e-12) -> list[tuple[int, complex]]:
        idx = np.flatnonzero(np.abs(self.amps) > tol)
        return [(int(i), complex(self.amps[i])) for i in idx]

    def to_json_dict(self, tol: float = 0.0) -> dict:
        """Layout descriptor plus ``[index, re, im]`` triples."""
        return {
            "layout": self.layout.to_dict(),
            "amplitudes": [[i, a.real, a.imag] for i, a in self.nonzero(tol)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json_dict(cls, data: Mapping) -> "StateVector":
        layout = RegisterLayout.from_dict(data["layout"])
        amps = np.zeros(layout.dim, dtype=complex)
        for i, re, im in data["amplitudes"]:
            amps[int(i)] = complex(re, im)
        return cls(layout, amps)

    @classmethod
    def from_tensor(cls, layout: RegisterLayout, tensor) -> "StateVector":
        return cls(layout, np.asarray(tensor, dtype=complex).reshape(-1))


@dataclass(frozen=True, eq=False)
class LocalOperator:
    """Matrix acting on one or more named subsystems.

    With several targets, the matrix is over their tensor product in the
    order given (first target is the most significant index).
    """

    targets: tuple[str, ...]
    matrix: np.ndarray
    unitary: bool = False
    name: str = ""
    _embedded: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        targets = (self.targets,) if isinstance(self.targets, str) else tuple(self.targets)
        object.__setattr__(self, "targets", targets)
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise QStateError(f"operator matrix must be square, got shape {m.shape}")
        if self.unitary:
            err = np.abs(m.conj().T @ m - np.eye(m.shape[0])).max()
            if err > UNITARY_TOL:
                raise QStateError(f"operator {self.name!r} flagged unitary but U^dag U - I = {err:.3g}")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def target(self) -> str:
        return self.targets[0]

    def dagger(self) -> "LocalOperator":
        return LocalOperator(self.targets, self.matrix.conj().T, self.unitary, self.name + "^dag")

    def then(self, other: "LocalOperator") -> "LocalOperator":
        """Operator applying ``self`` first, then ``other`` (same targets)."""
        if other.targets != self.targets:
            raise QStateError(f"cannot compose operators on {self.targets} and {other.targets}")
        return LocalOperator(
            self.targets,
            other.matrix @ self.matrix,
            self.unitary and other.unitary,
            f"{other.name}*{self.name}",
        )


def _target_axes(layout: RegisterLayout, targets: Sequence[str], size: int) -> list[int]:
    axes = [layout.axis(t) for t in targets]
    if len(set(axes)) != len(axes):
        raise QStateError(f"repeated target in {targets}")
    expected = math.prod(layout.dims[a] for a in axes)
    if expected != size:
        raise QStateError(
            f"operator dimension {size} does not match subsystems {tuple(targets)} (dim {expected})"
        )
    return axes


def _block(dims: tuple[int, ...], axes: list[int]):
    """(left, block, right) sizes when ``axes`` are consecutive, else None."""
    first = axes[0]
    if axes != list(range(first, first + len(axes))):
        return None
    last = axes[-1]
    return math.prod(dims[:first]), math.prod(dims[first : last + 1]), math.prod(dims[last + 1 :])


def _apply_matrix(amps: np.ndarray, dims: tuple[int, ...], axes: list[int], m: np.ndarray) -> np.ndarray:
    block = _block(dims, axes)
    if block is not None:
        return (m @ amps.reshape(block)).reshape(-1)
    n = len(axes)
    t = np.moveaxis(amps.reshape(dims), axes, list(range(n)))
    shape = t.shape
    out = (m @ t.reshape(m.shape[0], -1)).reshape(shape)
    return np.moveaxis(out, list(range(n)), axes).reshape(-1)


# Multi-subsystem operators are expanded to the full register up to this size.
_EMBED_MAX_DIM = 256


def _embedded(op: LocalOperator, layout: RegisterLayout):
    """(axes, full matrix or None), cached per layout."""
    cached = op._embedded.get(layout)
    if cached is None:
        axes = _target_axes(layout, op.targets, op.matrix.shape[0])
        full = None
        if _block(layout.dims, axes) is None and layout.dim <= _EMBED_MAX_DIM:
            full = np.stack(
                [_apply_matrix(col, layout.dims, axes, op.matrix) for col in np.eye(layout.dim, dtype=complex)],
                axis=1,
            )
        cached = (axes, full)
        op._embedded[layout] = cached
    return cached


def apply_local(state: StateVector, op: LocalOperator) -> StateVector:
    """Apply ``I x .. x M x .. x I`` to ``state``."""
    axes, full = _embedded(op, state.layout)
    if full is not None:
        return StateVector._wrap(state.layout, full @ state.amps)
    return StateVector._wrap(state.layout, _apply_matrix(state.amps, state.layout.dims, axes, op.matrix))


def apply_sequence(state: StateVector, ops: Iterable[LocalOperator]) -> StateVector:
    for op in ops:
        state = apply_local(state, op)
    return state


def basis_state(layout: RegisterLayout, indices: Union[Sequence[int], Mapping[str, int]]) -> StateVector:
    amps = np.zeros(layout.dim, dtype=complex)
    amps[layout.flat_index(indices)] = 1.0
    return StateVector(layout, amps)


def fidelity(x: StateVector, y: StateVector) -> float:
    """Global-phase-insensitive overlap ``|<x|y>|^2 / (|x|^2 |y|^2)``."""
    if x.layout != y.layout:
        raise QStateError(f"layout mismatch: {x.layout.labels} vs {y.layout.labels}")
    nx, ny = x.norm2, y.norm2
    if nx == 0.0 or ny == 0.0:
        raise QStateError("fidelity of a zero-norm state")
    f = abs(np.vdot(x.amps, y.amps)) ** 2 / (nx * ny)
    return float(min(max(f, 0.0), 1.0))


def attach_ancilla(state: StateVector, ancilla_layout, joint_amps) -> StateVector:
    """Append ancilla subsystems to ``state``.

    ``joint_amps`` is either a vector over the ancilla space (product
    attachment) or a table of shape ``(state.dim, ancilla.dim)`` whose row
    ``x`` is the ancilla state conditioned on basis state ``x``.  Rows are
    expected to have unit norm wherever ``state`` has support.
    """
    if not isinstance(ancilla_layout, RegisterLayout):
        ancilla_layout = RegisterLayout(tuple(ancilla_layout))
    layout = state.layout.extended(ancilla_layout.subsystems)
    table = np.asarray(joint_amps, dtype=complex)
    n_old, n_anc = state.layout.dim, ancilla_layout.dim
    if table.ndim == 1:
        if table.size != n_anc:
            raise QStateError(f"ancilla vector has length {table.size}, expected {n_anc}")
        if abs(np.vdot(table, table).real - 1.0) > PROBABILITY_TOL:
            raise QStateError("ancilla vector must have unit norm")
        return StateVector(layout, np.kron(state.amps, table))
    if table.shape != (n_old, n_anc):
        raise QStateError(f"joint table has shape {table.shape}, expected {(n_old, n_anc)}")
    support = np.abs(state.amps) > 0
    row_norms = np.sum(np.abs(table) ** 2, axis=1)
    if np.any(np.abs(row_norms[support] - 1.0) > PROBABILITY_TOL):
        raise QStateError("conditional ancilla rows must have unit norm on the state's support")
    return StateVector(layout, (state.amps[:, None] * table).reshape(-1))


def permute_subsystems(state: StateVector, order: Sequence[str]) -> StateVector:
    """Reorder subsystems so labels appear in ``order``."""
    layout = state.layout
    if sorted(order) != sorted(layout.labels):
        raise QStateError(f"order {list(order)} is not a permutation of {layout.labels}")
    axes = [layout.axis(label) for label in order]
    new_layout = RegisterLayout(tuple(layout.subsystems[a] for a in axes))
    return StateVector(new_layout, np.transpose(state.tensor(), axes).reshape(-1))


def relabel(state: StateVector, mapping: Mapping[str, str]) -> StateVector:
    subsystems = tuple((mapping.get(label, label), dim) for label, dim in state.layout.subsystems)
    return StateVector(RegisterLayout(subsystems), state.amps)


# --- sampling -------------------------------------------------------------


class RandomSource:
    """Seedable uniform stream with deterministic splitting.

    Child streams are addressed by index, so trial ``t`` of a run seeded with
    ``s`` sees the same numbers regardless of how trials are scheduled.
    """

    def __init__(self, seed: int = 0, spawn_key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.spawn_key = tuple(spawn_key)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self.spawn_key))
        )

    def uniform(self) -> float:
        return float(self._gen.random())

    def child(self, index: int) -> "RandomSource":
        return RandomSource(self.seed, self.spawn_key + (int(index),))

    def split(self, n: int) -> list["RandomSource"]:
        return [self.child(i) for i in range(n)]

    def __repr__(self):
        return f"RandomSource(seed={self.seed}, spawn_key={self.spawn_key})"


class ExhaustiveBranching:
    """Sampler marker: follow every outcome instead of drawing one."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "EXHAUSTIVE"


EXHAUSTIVE = ExhaustiveBranching()
Sampler = Union[RandomSource, ExhaustiveBranching]


class Outcome(NamedTuple):
    index: int
    label: str
    probability: float
    state: StateVector


def _select(weights: np.ndarray, total: float, sampler: Sampler) -> list[int]:
    ws = weights.tolist()
    if isinstance(sampler, ExhaustiveBranching):
        return [i for i, w in enumerate(ws) if w > PRUNE_PROBABILITY * total]
    u = sampler.uniform() * total
    high = 0.0
    for k, w in enumerate(ws):
        high += w
        if u < high:
            return [k]
    # u landed on the rounding sliver above the last edge
    return [max(i for i, w in enumerate(ws) if w > 0)]


# --- projective measurements ---------------------------------------------


@dataclass(frozen=True, eq=False)
class ProjectorFamily:
    """Complete set of orthogonal projectors on the ``targets`` subsystems."""

    targets: tuple[str, ...]
    projectors: tuple[np.ndarray, ...]
    labels: tuple[str, ...] = ()
    _diag_masks: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        targets = (self.targets,) if isinstance(self.targets, str) else tuple(self.targets)
        object.__setattr__(self, "targets", targets)
        ps = tuple(np.array(p, dtype=complex) for p in self.projectors)
        if not ps:
            raise QStateError("empty projector family")
        n = ps[0].shape[0]
        eye = np.eye(n)
        total = np.zeros((n, n), dtype=complex)
        for i, p in enumerate(ps):
            if p.shape != (n, n):
                raise QStateError("projectors have inconsistent shapes")
            if np.abs(p - p.conj().T).max() > PROBABILITY_TOL or np.abs(p @ p - p).max() > PROBABILITY_TOL:
                raise QStateError(f"element {i} is not an orthogonal projector")
            for j in range(i):
                if np.abs(p @ ps[j]).max() > PROBABILITY_TOL:
                    raise QStateError(f"projectors {j} and {i} are not orthogonal")
            total += p
        if np.abs(total - eye).max() > PROBABILITY_TOL:
            raise QStateError("projector family is not complete")
        labels = tuple(self.labels) or tuple(str(i) for i in range(len(ps)))
        if len(labels) != len(ps):
            raise QStateError("one label per projector required")
        object.__setattr__(self, "projectors", ps)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(
            self, "diagonal", all(np.count_nonzero(p - np.diag(np.diag(p))) == 0 for p in ps)
        )

    def masks(self, layout: RegisterLayout) -> np.ndarray:
        """Full-register 0/1 masks (diagonal families only)."""
        cached = self._diag_masks.get(layout)
        if cached is None:
            axes = _target_axes(layout, self.targets, self.projectors[0].shape[0])
            dims = layout.dims
            cached = np.stack(
                [
                    _apply_matrix(np.ones(layout.dim, dtype=complex), dims, axes, np.diag(np.diag(p))).real
                    for p in self.projectors
                ]
            )
            self._diag_masks[layout] = cached
        return cached


def measure_subspaces(state: StateVector, projectors, sampler: Sampler) -> list[Outcome]:
    """Projective measurement.

    Probabilities are the squared norms of the projected states, so they sum
    to ``state.norm2``.  Collapsed states are normalized.  A
    :class:`RandomSource` returns exactly one outcome; :data:`EXHAUSTIVE`
    returns all outcomes above the pruning floor.
    """
    if not isinstance(projectors, ProjectorFamily):
        targets, mats = projectors
        projectors = ProjectorFamily(targets, tuple(mats))
    layout = state.layout
    if projectors.diagonal:
        masks = projectors.masks(layout)
        weights = masks @ state.probabilities
        chosen = _select(weights, float(weights.sum()), sampler)
        return [
            Outcome(
                k,
                projectors.labels[k],
                float(weights[k]),
                StateVector._wrap(layout, state.amps * (masks[k] / math.sqrt(weights[k]))),
            )
            for k in chosen
        ]
    axes = _target_axes(layout, projectors.targets, projectors.projectors[0].shape[0])
    projected = [_apply_matrix(state.amps, layout.dims, axes, p) for p in projectors.projectors]
    weights = np.array([np.vdot(v, v).real for v in projected])
    chosen = _select(weights, float(weights.sum()), sampler)
    return [
        Outcome(k, projectors.labels[k], float(weights[k]), StateVector._wrap(layout, projected[k] / math.sqrt(weights[k])))
        for k in chosen
    ]


# --- generalized measurements (Kraus instruments) ------------------------


@dataclass(frozen=True, eq=False)
class Instrument:
    """Labelled Kraus operators on ``targets`` with sum K^dag K = I.

    Several Kraus operators may share a label (unobserved record detail).
    """

    targets: tuple[str, ...]
    kraus: tuple[np.ndarray, ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        targets = (self.targets,) if isinstance(self.targets, str) else tuple(self.targets)
        object.__setattr__(self, "targets", targets)
        ks = tuple(np.array(k, dtype=complex) for k in self.kraus)
        if len(ks) != len(self.labels):
            raise QStateError("one label per Kraus operator required")
        n = ks[0].shape[0]
        total = sum(k.conj().T @ k for k in ks)
        if np.abs(total - np.eye(n)).max() > PROBABILITY_TOL:
            raise QStateError("Kraus operators are not complete")
        object.__setattr__(self, "kraus", ks)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "_stacked", np.concatenate(ks, axis=0))


def apply_instrument(state: StateVector, instrument: Instrument, sampler: Sampler) -> list[Outcome]:
    """Generalized measurement; outcome probabilities sum to ``state.norm2``."""
    layout = state.layout
    n = instrument.kraus[0].shape[0]
    axes = _target_axes(layout, instrument.targets, n)
    block = _block(layout.dims, axes)
    if block is not None:
        left, _, right = block
        stacked = instrument._stacked @ state.amps.reshape(block)
        stacked = stacked.reshape(left, len(instrument.kraus), n, right)
        weights = np.einsum("akbr,akbr->k", stacked, stacked.conj()).real
        images = [stacked[:, i].reshape(-1) for i in range(len(instrument.kraus))]
    else:
        images = [_apply_matrix(state.amps, layout.dims, axes, k) for k in instrument.kraus]
        weights = np.array([np.vdot(v, v).real for v in images])
    chosen = _select(weights, float(weights.sum()), sampler)
    return [
        Outcome(k, instrument.labels[k], float(weights[k]), StateVector._wrap(layout, images[k] / math.sqrt(weights[k])))
        for k in chosen
    ]
