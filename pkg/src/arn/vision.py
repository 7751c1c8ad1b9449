"""Two-layer image classifier built from ARN layers.

L1 is a plain layer over image tiles: every tile of every image is presented
to the same L1, which grows a dictionary of tile features.  The per-tile L1
winners form the feature list.  L2 is a wired layer: a node created for an
image listens, at each tile position, to the L1 node that won there, and
resonates at the response level that node had.  L2 nodes carry digit labels.

At recall each tile is also presented at small displacements (``jitter``
pixels) and every L1 node keeps its best response.  If no L2 node reaches
threshold the L2 coverage is dilated step by step (rho scaled by
``dilation_factor``) up to ``dilation_steps`` times before giving up.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ParameterError, StateError, StructuralError, VersionError, CapacityError
from .graph import Layer, Recognition, TuningPolicy, present, train_step

N_CLASSES = 10
MAX_ANGLE = 15.0


# -- tiling and feature lists --------------------------------------------------------------


@dataclass(frozen=True)
class TilingSpec:
    height: int = 28
    width: int = 28
    rows: int = 4
    cols: int = 4
    order: Optional[tuple[int, ...]] = None

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ParameterError("grid must have at least one row and column")
        if self.height % self.rows or self.width % self.cols:
            raise ParameterError(
                f"{self.height}x{self.width} image does not split into a {self.rows}x{self.cols} grid"
            )
        if self.order is not None and sorted(self.order) != list(range(self.n_tiles)):
            raise ParameterError(f"tile order is not a permutation of 0..{self.n_tiles - 1}")

    @property
    def n_tiles(self) -> int:
        return self.rows * self.cols

    @property
    def tile_shape(self) -> tuple[int, int]:
        return self.height // self.rows, self.width // self.cols

    @property
    def tile_size(self) -> int:
        th, tw = self.tile_shape
        return th * tw

    @property
    def sequence(self) -> np.ndarray:
        return np.arange(self.n_tiles) if self.order is None else np.asarray(self.order)


def tile_image(image: np.ndarray, spec: TilingSpec) -> np.ndarray:
    """Split an image into ``rows*cols`` flattened tiles, emitted in ``spec.order``."""
    image = np.asarray(image, dtype=float)
    if image.shape != (spec.height, spec.width):
        raise StructuralError(f"expected a {spec.height}x{spec.width} image, got {image.shape}")
    th, tw = spec.tile_shape
    tiles = image.reshape(spec.rows, th, spec.cols, tw).transpose(0, 2, 1, 3)
    return tiles.reshape(spec.n_tiles, th * tw)[spec.sequence]


def displaced_tiles(image: np.ndarray, spec: TilingSpec, radius: int) -> np.ndarray:
    """Tiles cut at every offset in ``[-radius, radius]^2``, shape ``(S, n_tiles, tile_size)``.

    Offset (0, 0) comes first.  Pixels shifted in from outside the image are 0.
    """
    image = np.asarray(image, dtype=float)
    if radius == 0:
        return tile_image(image, spec)[None]
    padded = np.pad(image, radius)
    offsets = [(0, 0)] + [
        (dy, dx)
        for dy in range(-radius, radius + 1)
        for dx in range(-radius, radius + 1)
        if (dy, dx) != (0, 0)
    ]
    h, w = spec.height, spec.width
    return np.stack(
        [tile_image(padded[radius + dy : radius + dy + h, radius + dx : radius + dx + w], spec) for dy, dx in offsets]
    )


@dataclass(frozen=True)
class FeatureList:
    """L1 winner per tile position; ``None`` where no L1 node fired."""

    ids: tuple[Optional[int], ...]
    k_cap: int = 16384

    @property
    def values(self) -> np.ndarray:
        return encode_features(self.ids, self.k_cap)


def encode_features(ids: Sequence[Optional[int]], k_cap: int) -> np.ndarray:
    out = np.ones(len(ids))
    for i, nid in enumerate(ids):
        if nid is not None:
            if not 0 <= nid < k_cap:
                raise CapacityError(f"feature index {nid} does not fit below capacity {k_cap}")
            out[i] = nid / k_cap
    return out


def decode_features(values: Sequence[float], k_cap: int) -> tuple[Optional[int], ...]:
    return tuple(None if v >= 1.0 else int(round(v * k_cap)) for v in values)


class Reorder(enum.Enum):
    IDENTITY = "identity"
    REVERSE = "reverse"
    MIRROR_H = "mirror_h"
    MIRROR_V = "mirror_v"


def reorder_permutation(op: Reorder, rows: int, cols: int) -> np.ndarray:
    cells = np.arange(rows * cols).reshape(rows, cols)
    if op is Reorder.REVERSE:
        cells = cells[::-1, ::-1]
    elif op is Reorder.MIRROR_H:
        cells = cells[:, ::-1]
    elif op is Reorder.MIRROR_V:
        cells = cells[::-1, :]
    return cells.ravel()


def reorder_features(features: FeatureList, op: Reorder, rows: int, cols: int) -> FeatureList:
    """Permute a row-major feature list over its grid.  REVERSE is the 180 degree turn."""
    if len(features.ids) != rows * cols:
        raise StructuralError(f"feature list of length {len(features.ids)} is not a {rows}x{cols} grid")
    perm = reorder_permutation(Reorder(op), rows, cols)
    return FeatureList(tuple(features.ids[p] for p in perm), features.k_cap)


# -- input transforms ------------------------------------------------------------------------


def perturb_image(image: np.ndarray, angle_degrees: float) -> np.ndarray:
    """Rotate about the centre pixel with nearest-neighbour sampling; outside is 0."""
    if not abs(angle_degrees) <= MAX_ANGLE:
        raise ParameterError(f"perturbation angle must be within +/-{MAX_ANGLE} degrees, got {angle_degrees}")
    image = np.asarray(image, dtype=float)
    if angle_degrees == 0:
        return image.copy()
    h, w = image.shape
    cy, cx = h // 2, w // 2
    theta = math.radians(angle_degrees)
    cos, sin = math.cos(theta), math.sin(theta)
    rr, cc = np.mgrid[0:h, 0:w]
    dy, dx = rr - cy, cc - cx
    # inverse map: where each output pixel comes from (counter-clockwise turn on screen)
    src_r = np.rint(cy + cos * dy + sin * dx).astype(int)
    src_c = np.rint(cx - sin * dy + cos * dx).astype(int)
    inside = (src_r >= 0) & (src_r < h) & (src_c >= 0) & (src_c < w)
    out = np.zeros_like(image)
    out[inside] = image[src_r[inside], src_c[inside]]
    return out


def mask_tile(tile: np.ndarray, pixel_floor: float) -> tuple[np.ndarray, np.ndarray]:
    """Indices and values of the pixels a masked node would keep resonators for."""
    if not 0.0 <= pixel_floor < 1.0:
        raise ParameterError(f"pixel_floor must be in [0, 1), got {pixel_floor}")
    tile = np.asarray(tile, dtype=float)
    keep = np.flatnonzero(tile >= pixel_floor)
    return keep, tile[keep]


# -- network ---------------------------------------------------------------------------------


@dataclass(frozen=True)
class NetworkConfig:
    tiling: TilingSpec = field(default_factory=TilingSpec)
    k_cap: int = 16384
    rho: float = 2.42
    # threshold is the labelled layer's; the tile layer keeps its own so that
    # sweeping the decision threshold does not also reshape the feature alphabet
    threshold: float = 0.9
    l1_threshold: float = 0.9
    l2_rho_scale: float = 10.0
    pixel_floor: Optional[float] = None
    jitter: int = 1
    dilation_factor: float = 0.9
    dilation_steps: int = 7
    blank_level: Optional[float] = 0.0
    tuning: str = "frozen"
    n_min: int = 5

    def __post_init__(self) -> None:
        for name in ("threshold", "l1_threshold"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ParameterError(f"{name} must be in (0, 1), got {v}")
        if not self.rho > 0 or not self.l2_rho_scale > 0:
            raise ParameterError("rho and l2_rho_scale must be positive")
        if self.k_cap < 1:
            raise ParameterError("k_cap must be positive")
        if self.blank_level is not None and not 0.0 <= self.blank_level < 1.0:
            raise ParameterError(f"blank_level must be in [0, 1), got {self.blank_level}")
        if self.jitter < 0 or self.dilation_steps < 0:
            raise ParameterError("jitter and dilation_steps must be non-negative")
        if not 0.0 < self.dilation_factor <= 1.0:
            raise ParameterError("dilation_factor must be in (0, 1]")
        TuningPolicy(self.tuning)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tiling"]["order"] = None if self.tiling.order is None else list(self.tiling.order)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        t = dict(d.pop("tiling"))
        if t.get("order") is not None:
            t["order"] = tuple(t["order"])
        return cls(tiling=TilingSpec(**t), **d)


class Status(enum.Enum):
    CORRECT = "correct"
    WRONG = "wrong"
    MULTIPLE = "multiple"
    UNRECOGNIZED = "unrecognized"
    RECOGNIZED = "recognized"  # single label, no ground truth supplied


@dataclass(frozen=True)
class ClassificationOutcome:
    status: Status
    weights: dict[int, float]

    @property
    def predicted(self) -> Optional[int]:
        if len(self.weights) != 1:
            return None
        return next(iter(self.weights))


@dataclass(frozen=True)
class TileTrace:
    tile: int
    l1_winner: Optional[int]
    l1_output: float


@dataclass(frozen=True)
class TracePath:
    tiles: tuple[TileTrace, ...]
    l2_winner: Optional[int]
    l2_output: float
    labels: tuple[int, ...]
    rho_scale: float
    model_digest: str
    image: np.ndarray = field(repr=False, compare=False)


@dataclass
class EpochStats:
    epoch: int
    presented: int
    l1_created: int
    l2_created: int
    l2_absorbed: int
    l2_conflicts: int
    seconds: float


@dataclass
class TrainingReport:
    images: int
    presentations: int
    l1_nodes: int
    l2_nodes: int
    seconds: float
    epochs: list[EpochStats]

    def to_dict(self) -> dict:
        return asdict(self)


class Network:
    """The L1 feature layer plus the labelled L2 layer."""

    def __init__(self, config: Optional[NetworkConfig] = None) -> None:
        self.config = config or NetworkConfig()
        c = self.config
        self.l1 = Layer(
            c.tiling.tile_size,
            threshold=c.l1_threshold,
            default_rho=c.rho,
            tuning=TuningPolicy(c.tuning),
            pixel_floor=c.pixel_floor,
            n_min=c.n_min,
        )
        self.l2 = Layer(
            c.tiling.n_tiles,
            threshold=c.threshold,
            default_rho=c.rho * c.l2_rho_scale,
            tuning=TuningPolicy.FROZEN,
            wired=True,
            saturating=True,
        )

    @property
    def trained(self) -> bool:
        return len(self.l1) > 0 and len(self.l2) > 0

    def digest(self) -> str:
        h = hashlib.sha256(json.dumps(self.config.to_dict(), sort_keys=True).encode())
        for layer in (self.l1, self.l2):
            for arr in (layer.centers, layer.rhos, layer.masks, layer.sources, layer.labels,
                        layer.hit_counts, layer.stat_mean, layer.stat_m2):
                h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    # -- L1 ----------------------------------------------------------------------------

    def _train_tiles(self, tiles: np.ndarray) -> tuple[list[Optional[int]], np.ndarray, int]:
        """Run the L1 train step on each tile in order; return winners and the response map.

        Outputs against pre-existing nodes are computed in one batch; nodes
        created or retuned while the image is processed are re-evaluated per
        tile, so the result is identical to presenting tiles one at a time.
        """
        l1 = self.l1
        n0 = len(l1)
        base = l1.outputs_batch(tiles)
        dirty: set[int] = set()
        winners: list[Optional[int]] = []
        created = 0
        for i, tile in enumerate(tiles):
            out = np.concatenate([base[i], np.zeros(len(l1) - n0)])
            fresh = np.array(sorted(dirty | set(range(n0, len(l1)))), dtype=np.int64)
            if fresh.size:
                out[fresh] = l1.outputs(tile, idx=fresh)
            rec = train_step(l1, tile, recognition=l1.recognition_from_outputs(out))
            if rec.created is not None:
                created += 1
                winners.append(rec.created)
            else:
                winners.append(rec.winner)
                if rec.winner is not None:
                    dirty.add(rec.winner)
        if len(l1) > self.config.k_cap:
            raise CapacityError(
                f"L1 grew to {len(l1)} nodes, beyond the feature capacity k_cap={self.config.k_cap}"
            )
        response = np.concatenate([base, np.zeros((len(tiles), len(l1) - n0))], axis=1)
        fresh = np.array(sorted(dirty | set(range(n0, len(l1)))), dtype=np.int64)
        if fresh.size:
            response[:, fresh] = l1.outputs_batch(tiles)[:, fresh] if len(fresh) > 64 else np.stack(
                [l1.outputs(t, idx=fresh) for t in tiles]
            )
        return winners, response, created

    def is_blank(self, image: np.ndarray) -> bool:
        """An image with no pixel above ``blank_level`` carries no evidence at all."""
        level = self.config.blank_level
        return level is not None and float(np.max(image)) <= level

    def l1_response(self, image: np.ndarray) -> np.ndarray:
        """Best response of every L1 node at every tile over the jitter offsets."""
        stack = displaced_tiles(image, self.config.tiling, self.config.jitter)
        s, t, d = stack.shape
        return self.l1.outputs_batch(stack.reshape(s * t, d)).reshape(s, t, -1).max(axis=0)

    def _l1_winners(self, response: np.ndarray) -> list[Recognition]:
        return [self.l1.recognition_from_outputs(row) for row in response]

    @staticmethod
    def _response_map(response: np.ndarray, winners: Sequence[Optional[int]]) -> np.ndarray:
        no_winner = np.array([[1.0 if w is None else 0.0] for w in winners])
        return np.hstack([response, no_winner])

    # -- training ------------------------------------------------------------------------

    def train_image(self, image: np.ndarray, label: int) -> tuple[Recognition, int]:
        if self.is_blank(image):
            return Recognition(), 0
        tiles = tile_image(image, self.config.tiling)
        winners, response, l1_created = self._train_tiles(tiles)
        sources = [-1 if w is None else w for w in winners]
        rec = train_step(self.l2, self._response_map(response, winners), int(label), sources)
        return rec, l1_created

    # -- recall ------------------------------------------------------------------------

    def classify(self, image: np.ndarray, true_label: Optional[int] = None) -> tuple[ClassificationOutcome, TracePath]:
        if not self.trained:
            raise StateError("network has not been trained")
        image = np.asarray(image, dtype=float)
        blank = self.is_blank(image)
        if blank:
            l1_recs = [Recognition() for _ in range(self.config.tiling.n_tiles)]
        else:
            response = self.l1_response(image)
            l1_recs = self._l1_winners(response)
            rmap = self._response_map(response, [r.winner for r in l1_recs])

        scale = 1.0
        rec = Recognition()
        for step in range(0 if blank else self.config.dilation_steps + 1):
            scale = self.config.dilation_factor ** step
            rec = present(self.l2, rmap, rho_scale=scale)
            if rec.winner is not None:
                break

        order = self.config.tiling.sequence
        tiles = tuple(
            TileTrace(int(order[i]), r.winner, r.output) for i, r in enumerate(l1_recs)
        )
        if rec.winner is None:
            outcome = ClassificationOutcome(Status.UNRECOGNIZED, {})
            labels: tuple[int, ...] = ()
        else:
            top = rec.candidates[0][1]
            tied = [nid for nid, out in rec.candidates if top - out <= self.l2.tie_eps]
            labels = tuple(sorted({int(self.l2.labels[nid]) for nid in tied}))
            weights = {lab: 1.0 / len(labels) for lab in labels}
            if len(labels) > 1:
                status = Status.MULTIPLE
            elif true_label is None:
                status = Status.RECOGNIZED
            else:
                status = Status.CORRECT if labels[0] == true_label else Status.WRONG
            outcome = ClassificationOutcome(status, weights)
        path = TracePath(
            tiles=tiles,
            l2_winner=rec.winner,
            l2_output=rec.output,
            labels=labels,
            rho_scale=scale,
            model_digest=self.digest(),
            image=image.copy(),
        )
        return outcome, path


# -- training / evaluation drivers -----------------------------------------------------------


def train(
    network: Network,
    images: np.ndarray,
    labels: Sequence[int],
    angles: Sequence[float] = (),
    epochs: int = 1,
) -> TrainingReport:
    """Grow the network on labelled images.

    Each image is followed by its rotated copies (one per angle) before the
    next image is presented.
    """
    images = np.asarray(images, dtype=float)
    labels = np.asarray(labels)
    if len(images) == 0:
        raise StateError("training set is empty")
    if len(images) != len(labels):
        raise StructuralError("images and labels differ in length")
    if labels.min() < 0 or labels.max() >= N_CLASSES:
        raise ParameterError("labels must be digits 0-9")
    for a in angles:
        if not abs(a) <= MAX_ANGLE:
            raise ParameterError(f"perturbation angle {a} outside +/-{MAX_ANGLE}")
    t_start = time.perf_counter()
    stats = []
    presented = 0
    for epoch in range(epochs):
        t0 = time.perf_counter()
        counts = dict(presented=0, l1_created=0, l2_created=0, l2_absorbed=0, l2_conflicts=0)
        for image, label in zip(images, labels):
            variants = [image] + [perturb_image(image, a) for a in angles]
            for v in variants:
                rec, l1_created = network.train_image(v, int(label))
                counts["presented"] += 1
                counts["l1_created"] += l1_created
                if rec.created is not None:
                    counts["l2_created"] += 1
                    if rec.winner is not None:
                        counts["l2_conflicts"] += 1
                elif rec.winner is not None and network.l2.labels[rec.winner] == label:
                    counts["l2_absorbed"] += 1
        presented += counts["presented"]
        stats.append(EpochStats(epoch=epoch, seconds=time.perf_counter() - t0, **counts))
    return TrainingReport(
        images=len(images),
        presentations=presented,
        l1_nodes=len(network.l1),
        l2_nodes=len(network.l2),
        seconds=time.perf_counter() - t_start,
        epochs=stats,
    )


@dataclass
class Evaluation:
    confusion: np.ndarray  # (10, 11): last column holds unrecognized images
    counts: dict[str, int]
    per_class_total: np.ndarray
    exact: list[list[Fraction]] = field(repr=False, default_factory=list)

    @property
    def accuracy(self) -> float:
        total = self.per_class_total.sum()
        return float(np.trace(self.confusion[:, :N_CLASSES]) / total) if total else 0.0

    @property
    def per_class_accuracy(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.diag(self.confusion[:, :N_CLASSES]) / self.per_class_total


def evaluate(
    network: Network, images: np.ndarray, labels: Sequence[int], workers: int = 1
) -> tuple[Evaluation, list[ClassificationOutcome]]:
    """Classify a labelled set and accumulate the fractional confusion matrix."""
    images = np.asarray(images, dtype=float)
    labels = np.asarray(labels)
    if len(images) == 0:
        raise StateError("test set is empty")

    def one(i: int) -> ClassificationOutcome:
        return network.classify(images[i], int(labels[i]))[0]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(one, range(len(images))))
    else:
        outcomes = [one(i) for i in range(len(images))]

    # exact rational cells: a three-way split must still make rows add up to the count
    exact = [[Fraction(0)] * (N_CLASSES + 1) for _ in range(N_CLASSES)]
    counts = {s.value: 0 for s in Status if s is not Status.RECOGNIZED}
    for label, outcome in zip(labels, outcomes):
        counts[outcome.status.value] += 1
        if outcome.status is Status.UNRECOGNIZED:
            exact[label][N_CLASSES] += 1
        for lab in outcome.weights:
            exact[label][lab] += Fraction(1, len(outcome.weights))
    confusion = np.array([[float(x) for x in row] for row in exact])
    per_class = np.bincount(labels, minlength=N_CLASSES)[:N_CLASSES].astype(float)
    return Evaluation(confusion, counts, per_class, exact), outcomes


def trace_explain(path: TracePath, network: Optional[Network] = None) -> str:
    """Render a trace path.  With ``network`` given, replay it first and insist it matches."""
    if network is not None:
        replay_trace(path, network)
    lines = []
    for t in path.tiles:
        if t.l1_winner is None:
            lines.append(f"tile {t.tile:2d}: no L1 winner (best output {t.l1_output:.4f})")
        else:
            lines.append(f"tile {t.tile:2d}: L1 node {t.l1_winner:5d}  output {t.l1_output:.4f}")
    if path.l2_winner is None:
        missing = [str(t.tile) for t in path.tiles if t.l1_winner is None]
        lines.append(
            "decision: unrecognized"
            + (f" (tiles without L1 winner: {', '.join(missing)})" if missing else " (no L2 node fired)")
        )
    else:
        label = "/".join(str(x) for x in path.labels)
        lines.append(
            f"decision: L2 node {path.l2_winner} output {path.l2_output:.4f} "
            f"rho x{path.rho_scale:.4f} -> label {label}"
        )
    return "\n".join(lines)


def replay_trace(path: TracePath, network: Network) -> None:
    if network.digest() != path.model_digest:
        raise VersionError("trace was recorded against a different model state")
    _, again = network.classify(path.image)
    if again.tiles != path.tiles or again.l2_winner != path.l2_winner or again.l2_output != path.l2_output:
        raise StateError("replaying the trace did not reproduce the recorded outputs")


def self_recognition(network: Network, images: Iterable[np.ndarray], labels: Iterable[int]) -> float:
    """Fraction of images recognised as their own label (alone or among a tie)."""
    ok = total = 0
    for image, label in zip(images, labels):
        outcome, _ = network.classify(image)
        ok += int(label) in outcome.weights
        total += 1
    return ok / total if total else 0.0
