"""Nodes, layers and the grow-or-match training step.

A :class:`Layer` keeps its nodes as dense numpy arrays (one row per node) so a
whole layer can be evaluated in one vectorised pass; :class:`Node` is an
immutable snapshot of one row for inspection and for the scalar reference
path :func:`aggregate`.

Two input conventions exist:

* plain layers take one vector of length ``arity`` shared by every node;
* wired layers take a response map of shape ``(arity, n_lower + 1)``.  Node
  ``j`` reads position ``i`` from column ``sources[j, i]`` of that map, i.e.
  each resonator listens to one specific node of the layer below.  The last
  column is the "no lower winner" indicator, addressed with source ``-1``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import resonance
from .errors import DuplicateNodeError, ParameterError, StateError, StructuralError
from .resonance import ResonatorSpec, Transform

TIE_EPS = 1e-6
RELAX_FACTOR = 0.95
RHO_MIN = 0.5
RHO_MAX = 50.0
SIGMA_FLOOR = 1e-3
DEFAULT_RHO = 2.42
N_MIN = 5


class TuningPolicy(enum.Enum):
    FROZEN = "frozen"
    STATS = "stats"


@dataclass(frozen=True)
class Node:
    """Snapshot of one node.

    ``dims`` lists the input positions the node resonates on (``None`` means
    all of them).  ``sources`` is set for nodes of a wired layer.
    """

    id: int
    resonators: tuple[ResonatorSpec, ...]
    label: Optional[int]
    hit_count: int
    mean: np.ndarray
    variance: np.ndarray
    dims: Optional[tuple[int, ...]] = None
    sources: Optional[tuple[int, ...]] = None
    saturating: bool = False

    @property
    def centers(self) -> np.ndarray:
        return np.array([r.center for r in self.resonators])

    @property
    def rhos(self) -> np.ndarray:
        return np.array([r.rho for r in self.resonators])


@dataclass
class Recognition:
    winner: Optional[int] = None
    output: float = 0.0
    candidates: list[tuple[int, float]] = field(default_factory=list)
    created: Optional[int] = None


def aggregate(node: Node, x: Sequence[float], arity: Optional[int] = None) -> float:
    """Normalised node output ``4/(N k^2) * sum_i X_i (k - X_i)``.

    Reference implementation that goes through :func:`resonance.resonate`
    one resonator at a time; :meth:`Layer.outputs` is the vectorised path.
    """
    x = np.asarray(x, dtype=float)
    if arity is not None and x.shape != (arity,):
        raise StructuralError(f"expected input of length {arity}, got shape {x.shape}")
    dims = node.dims if node.dims is not None else range(len(node.resonators))
    if node.dims is None and len(x) != len(node.resonators):
        raise StructuralError(
            f"node has {len(node.resonators)} resonators, input has length {len(x)}"
        )
    total = 0.0
    k = node.resonators[0].k if node.resonators else 1.0
    for spec, d in zip(node.resonators, dims):
        value = float(x[d])
        if node.saturating:
            value = min(value, spec.center)
        total += resonance.resonate(spec, value)
    n = len(node.resonators)
    return 4.0 * total / (n * k * k) if n else 0.0


def resolve_ambiguity(
    candidates: Sequence[tuple[int, float]],
    hit_counts: Optional[Sequence[int]] = None,
    eps: float = TIE_EPS,
) -> int:
    """Pick the single winner among nodes that fired.

    Highest output wins.  Outputs within ``eps`` of the best count as tied and
    are separated by larger hit count, then by smaller node id.
    """
    if not candidates:
        raise StateError("cannot resolve a winner from an empty candidate list")
    best = max(out for _, out in candidates)
    tied = [nid for nid, out in candidates if best - out <= eps]
    if hit_counts is None:
        return min(tied)
    return min(tied, key=lambda nid: (-int(hit_counts[nid]), nid))


class Layer:
    """Growable, ordered collection of nodes sharing a threshold."""

    def __init__(
        self,
        arity: int,
        threshold: float = 0.9,
        default_rho: float = DEFAULT_RHO,
        tuning: TuningPolicy = TuningPolicy.FROZEN,
        *,
        wired: bool = False,
        saturating: bool = False,
        pixel_floor: Optional[float] = None,
        n_min: int = N_MIN,
        rho_min: float = RHO_MIN,
        rho_max: float = RHO_MAX,
        sigma_floor: float = SIGMA_FLOOR,
        relax_factor: float = RELAX_FACTOR,
        tie_eps: float = TIE_EPS,
    ) -> None:
        if arity < 1:
            raise ParameterError(f"arity must be positive, got {arity}")
        if not 0.0 < threshold < 1.0:
            raise ParameterError(f"threshold must be in (0, 1), got {threshold}")
        if not default_rho > 0:
            raise ParameterError(f"default_rho must be positive, got {default_rho}")
        if pixel_floor is not None and not 0.0 <= pixel_floor < 1.0:
            raise ParameterError(f"pixel_floor must be in [0, 1), got {pixel_floor}")
        self.arity = arity
        self.threshold = float(threshold)
        self.default_rho = float(default_rho)
        self.tuning = TuningPolicy(tuning)
        self.wired = wired
        self.saturating = saturating
        self.pixel_floor = pixel_floor
        self.n_min = n_min
        self.rho_min = rho_min
        self.rho_max = rho_max
        self.sigma_floor = sigma_floor
        self.relax_factor = relax_factor
        self.tie_eps = tie_eps

        self.n = 0
        cap = 64
        self._centers = np.zeros((cap, arity))
        self._rhos = np.zeros((cap, arity))
        self._mask = np.zeros((cap, arity), dtype=bool)
        self._sources = np.zeros((cap, arity), dtype=np.int64)
        self._labels = np.full(cap, -1, dtype=np.int64)
        self._hits = np.zeros(cap, dtype=np.int64)
        self._mean = np.zeros((cap, arity))
        self._m2 = np.zeros((cap, arity))
        self._masked = pixel_floor is not None

    # -- array views -----------------------------------------------------------------

    @property
    def centers(self) -> np.ndarray:
        return self._centers[: self.n]

    @property
    def rhos(self) -> np.ndarray:
        return self._rhos[: self.n]

    @property
    def masks(self) -> np.ndarray:
        return self._mask[: self.n]

    @property
    def sources(self) -> np.ndarray:
        return self._sources[: self.n]

    @property
    def labels(self) -> np.ndarray:
        return self._labels[: self.n]

    @property
    def hit_counts(self) -> np.ndarray:
        return self._hits[: self.n]

    @property
    def stat_mean(self) -> np.ndarray:
        return self._mean[: self.n]

    @property
    def stat_m2(self) -> np.ndarray:
        return self._m2[: self.n]

    def __len__(self) -> int:
        return self.n

    def node(self, nid: int) -> Node:
        if not 0 <= nid < self.n:
            raise IndexError(f"node {nid} out of range for layer of {self.n}")
        keep = np.flatnonzero(self._mask[nid])
        specs = tuple(
            ResonatorSpec(Transform.SIGMOID, 1.0, float(self._centers[nid, d]), float(self._rhos[nid, d]))
            for d in keep
        )
        hits = int(self._hits[nid])
        var = self._m2[nid] / (hits - 1) if hits > 1 else np.zeros(self.arity)
        label = int(self._labels[nid])
        return Node(
            id=nid,
            resonators=specs,
            label=None if label < 0 else label,
            hit_count=hits,
            mean=self._mean[nid].copy(),
            variance=var,
            dims=None if len(keep) == self.arity else tuple(int(d) for d in keep),
            sources=tuple(int(s) for s in self._sources[nid]) if self.wired else None,
            saturating=self.saturating,
        )

    def nodes(self) -> Iterable[Node]:
        return (self.node(i) for i in range(self.n))

    # -- evaluation ------------------------------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.wired:
            if x.ndim != 2 or x.shape[0] != self.arity:
                raise StructuralError(
                    f"wired layer expects a ({self.arity}, m) response map, got {x.shape}"
                )
        elif x.shape != (self.arity,):
            raise StructuralError(f"expected input of length {self.arity}, got shape {x.shape}")
        return x

    def node_inputs(self, x: np.ndarray, idx: Optional[np.ndarray] = None) -> np.ndarray:
        """Per-node input rows: the shared vector, or gathered from a response map."""
        sl = slice(0, self.n) if idx is None else idx
        if not self.wired:
            return np.broadcast_to(x, (self._centers[sl].shape[0], self.arity))
        return x[np.arange(self.arity)[None, :], self._sources[sl]]

    def outputs(
        self, x: np.ndarray, idx: Optional[np.ndarray] = None, rho_scale: float = 1.0
    ) -> np.ndarray:
        """Normalised outputs of all nodes (or of ``idx``) for one input."""
        x = self._check_input(x)
        sl = slice(0, self.n) if idx is None else idx
        centers = self._centers[sl]
        if centers.shape[0] == 0:
            return np.zeros(0)
        xs = self.node_inputs(x, idx)
        diff = xs - centers
        if self.saturating:
            np.minimum(diff, 0.0, out=diff)
        y = resonance.normalized_resonance(diff * (self._rhos[sl] * rho_scale))
        if not self._masked:
            return y.mean(axis=1)
        mask = self._mask[sl]
        return (y * mask).sum(axis=1) / mask.sum(axis=1)

    def outputs_batch(self, xs: np.ndarray, chunk_elems: int = 100_000) -> np.ndarray:
        """Outputs for a batch of plain input vectors, shape ``(B, n)``."""
        if self.wired:
            raise StructuralError("batched evaluation is for plain layers only")
        xs = np.asarray(xs, dtype=float)
        if xs.ndim != 2 or xs.shape[1] != self.arity:
            raise StructuralError(f"expected (B, {self.arity}) inputs, got {xs.shape}")
        out = np.empty((xs.shape[0], self.n))
        if self.n == 0:
            return out
        centers, rhos = self.centers, self.rhos
        mask = self.masks if self._masked else None
        counts = mask.sum(axis=1) if mask is not None else None
        step = max(1, chunk_elems // max(1, self.n * self.arity))
        for start in range(0, xs.shape[0], step):
            block = xs[start : start + step]
            z = block[:, None, :] - centers[None]
            z *= rhos[None]
            y = resonance.normalized_resonance_(z)
            if mask is None:
                out[start : start + step] = y.mean(axis=2)
            else:
                out[start : start + step] = (y * mask[None]).sum(axis=2) / counts[None]
        return out

    def recognition_from_outputs(self, out: np.ndarray, ids: Optional[np.ndarray] = None) -> Recognition:
        ids = np.arange(len(out)) if ids is None else ids
        fired = np.flatnonzero(out >= self.threshold)
        if fired.size == 0:
            return Recognition()
        order = fired[np.lexsort((ids[fired], -out[fired]))]
        candidates = [(int(ids[i]), float(out[i])) for i in order]
        winner = resolve_ambiguity(candidates, self._hits, self.tie_eps)
        return Recognition(winner=winner, output=float(out[ids == winner][0]), candidates=candidates)

    # -- growth and learning ------------------------------------------------------------

    def _grow(self) -> None:
        cap = self._centers.shape[0] * 2
        for name in ("_centers", "_rhos", "_mask", "_sources", "_labels", "_hits", "_mean", "_m2"):
            old = getattr(self, name)
            new = np.zeros((cap,) + old.shape[1:], dtype=old.dtype)
            if name == "_labels":
                new[:] = -1
            new[: self.n] = old[: self.n]
            setattr(self, name, new)

    def keep_mask(self, x: np.ndarray) -> np.ndarray:
        if self.pixel_floor is None:
            return np.ones(self.arity, dtype=bool)
        return np.asarray(x) >= self.pixel_floor

    def find_duplicate(self, centers: np.ndarray, mask: np.ndarray, sources: Optional[np.ndarray]) -> Optional[int]:
        if self.n == 0:
            return None
        same = np.all(self.centers == centers, axis=1) & np.all(self.masks == mask, axis=1)
        if sources is not None:
            same &= np.all(self.sources == sources, axis=1)
        hits = np.flatnonzero(same)
        return int(hits[0]) if hits.size else None

    def add_node(
        self,
        centers: np.ndarray,
        label: Optional[int] = None,
        *,
        sources: Optional[np.ndarray] = None,
        mask: Optional[np.ndarray] = None,
        rhos: Optional[np.ndarray] = None,
    ) -> int:
        centers = np.asarray(centers, dtype=float)
        if centers.shape != (self.arity,):
            raise StructuralError(f"expected centre vector of length {self.arity}, got {centers.shape}")
        if self.wired and sources is None:
            raise StructuralError("wired layer nodes need a source per position")
        mask = self.keep_mask(centers) if mask is None else np.asarray(mask, dtype=bool)
        if not mask.any():
            raise StructuralError("node would have no resonators left after masking")
        src = None if sources is None else np.asarray(sources, dtype=np.int64)
        dup = self.find_duplicate(centers, mask, src)
        if dup is not None:
            raise DuplicateNodeError(f"node {dup} already resonates at this input")
        if self.n == self._centers.shape[0]:
            self._grow()
        i = self.n
        self._centers[i] = centers
        self._rhos[i] = self.default_rho if rhos is None else rhos
        self._mask[i] = mask
        if src is not None:
            self._sources[i] = src
        self._labels[i] = -1 if label is None else int(label)
        self._hits[i] = 1
        self._mean[i] = centers
        self._m2[i] = 0.0
        self.n += 1
        return i

    def record_hit(self, nid: int, x_row: np.ndarray) -> None:
        """Welford update of the node's running mean and squared deviations."""
        self._hits[nid] += 1
        n = self._hits[nid]
        delta = x_row - self._mean[nid]
        self._mean[nid] += delta / n
        self._m2[nid] += delta * (x_row - self._mean[nid])

    def tune(self, nid: int) -> bool:
        """Move centres to the running mean and set rho from the running spread."""
        hits = int(self._hits[nid])
        if hits < 2:
            return False
        sigma = np.sqrt(self._m2[nid] / (hits - 1))
        rho = resonance.RHO_PER_SIGMA / np.maximum(sigma, self.sigma_floor)
        self._centers[nid] = self._mean[nid]
        self._rhos[nid] = np.clip(rho, self.rho_min, self.rho_max)
        return True

    def restore(self, **arrays: np.ndarray) -> None:
        """Replace all nodes with stored arrays (keys as the properties of the same name)."""
        n = len(arrays["labels"])
        cap = max(64, n)
        shapes = {
            "centers": (n, self.arity), "rhos": (n, self.arity), "masks": (n, self.arity),
            "sources": (n, self.arity), "labels": (n,), "hit_counts": (n,),
            "stat_mean": (n, self.arity), "stat_m2": (n, self.arity),
        }
        attrs = {
            "centers": "_centers", "rhos": "_rhos", "masks": "_mask", "sources": "_sources",
            "labels": "_labels", "hit_counts": "_hits", "stat_mean": "_mean", "stat_m2": "_m2",
        }
        for key, shape in shapes.items():
            value = np.asarray(arrays[key])
            if value.shape != shape:
                raise StructuralError(f"{key} has shape {value.shape}, expected {shape}")
            old = getattr(self, attrs[key])
            new = np.zeros((cap,) + old.shape[1:], dtype=old.dtype)
            if key == "labels":
                new[:] = -1
            new[:n] = value
            setattr(self, attrs[key], new)
        self.n = n

    def relax(self, nid: int) -> None:
        self._rhos[nid] = np.maximum(self._rhos[nid] * self.relax_factor, self.rho_min)


def create_node(
    layer: Layer, x, label: Optional[int] = None, sources: Optional[Sequence[int]] = None
) -> int:
    """Append a node resonating exactly at ``x``.

    For a wired layer ``x`` is the response map and ``sources`` names, per
    position, the lower node to listen to; the centre is that node's response.
    """
    if layer.wired:
        x = layer._check_input(x)
        if sources is None or len(sources) != layer.arity:
            raise StructuralError("wired layer nodes need one source per position")
        src = np.asarray(sources, dtype=np.int64)
        centers = x[np.arange(layer.arity), src]
        return layer.add_node(centers, label, sources=src, mask=np.ones(layer.arity, dtype=bool))
    x = layer._check_input(x)
    return layer.add_node(x, label)


def present(layer: Layer, x, rho_scale: float = 1.0) -> Recognition:
    """Evaluate every node; nodes at or above threshold are candidates. No mutation."""
    return layer.recognition_from_outputs(layer.outputs(x, rho_scale=rho_scale))


def tune_node(layer: Layer, nid: int) -> bool:
    return layer.tune(nid)


def train_step(
    layer: Layer,
    x,
    label: Optional[int] = None,
    sources: Optional[Sequence[int]] = None,
    *,
    recognition: Optional[Recognition] = None,
) -> Recognition:
    """Present ``x``; grow on a miss or a label conflict, otherwise learn in the winner.

    ``recognition`` lets a caller that already evaluated the layer skip the
    second pass; it must describe the current layer state.
    """
    rec = present(layer, x) if recognition is None else recognition
    if rec.winner is None or (label is not None and layer._labels[rec.winner] != label):
        if not layer.wired and not layer.keep_mask(x).any():
            return rec  # everything masked: nothing to resonate on
        try:
            rec.created = create_node(layer, x, label, sources)
        except DuplicateNodeError:
            pass  # identical input already stored under another label
        return rec

    win = rec.winner
    x = np.asarray(x, dtype=float)
    row = layer.node_inputs(x, np.array([win]))[0] if layer.wired else x
    layer.record_hit(win, row)
    if layer.tuning is TuningPolicy.STATS and layer._hits[win] >= layer.n_min:
        layer.tune(win)
    if len(rec.candidates) > 1:
        runner, runner_out = next((c for c in rec.candidates if c[0] != win))
        if rec.output - runner_out <= layer.tie_eps and layer._labels[runner] == layer._labels[win]:
            layer.relax(win)
    return rec


def node_digest_rows(layer: Layer) -> list[bytes]:
    """Per-node parameter bytes, used to check that growth leaves old nodes alone."""
    return [
        layer._centers[i].tobytes() + layer._rhos[i].tobytes() + layer._mask[i].tobytes()
        + layer._sources[i].tobytes() + int(layer._labels[i]).to_bytes(8, "little", signed=True)
        for i in range(layer.n)
    ]


__all__ = [
    "Layer",
    "Node",
    "Recognition",
    "TuningPolicy",
    "aggregate",
    "create_node",
    "present",
    "resolve_ambiguity",
    "train_step",
    "tune_node",
    "node_digest_rows",
]
