"""Procedural scene world: objects on a 16x16 palette grid.

Scenes are the ground truth for everything downstream: rendering is an
exact function of the scene, and the evaluation oracle recovers scenes
from grids by the same geometry used here.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from ..vocab import TokenGrid

GRID_SIZE = 16
PALETTE_SIZE = 16          # 1 background + 7 object colors + 8 reserved
BACKGROUND = 0
OBJECT_COLORS = (1, 2, 3, 4, 5, 6, 7)
MAX_OBJECTS = 4
MIN_OBJECT_SIZE = 3        # smaller shapes stop being distinguishable

SHAPES = ("square", "circle", "triangle", "cross", "ring", "bar")

# Sizes at which each shape renders as a valid, classifiable mask.
SHAPE_SIZES = {
    "square": (3, 4, 5),
    "circle": (5, 7),      # rounded disk needs odd size >= 5
    "triangle": (3, 4, 5),
    "cross": (3, 5),       # plus sign needs odd size
    "ring": (3, 4, 5),
    "bar": (3, 4, 5, 6),
}

COLOR_NAMES = {1: "red", 2: "green", 3: "blue", 4: "yellow",
               5: "orange", 6: "purple", 7: "pink"}


class SceneError(ValueError):
    """Invalid scene content or unsatisfiable sampling constraints."""


def shape_cells(shape: str, size: int) -> frozenset[tuple[int, int]]:
    """Cell set of `shape` at `size`, relative to the bounding-box origin.

    All masks are 4-connected, pairwise distinct at equal bounding box,
    and exact: the detector classifies by regenerating these masks.
    """
    if shape not in SHAPES:
        raise SceneError(f"unknown shape {shape!r}")
    if size not in SHAPE_SIZES[shape]:
        raise SceneError(f"shape {shape!r} does not support size {size}")
    s = size
    if shape == "square":
        cells = {(r, c) for r in range(s) for c in range(s)}
    elif shape == "circle":
        m = (s - 1) // 2
        cells = {(r, c) for r in range(s) for c in range(s)
                 if (r - m) ** 2 + (c - m) ** 2 <= m * m + 1}
    elif shape == "triangle":
        # lower-left right triangle; intentionally asymmetric under rotation
        cells = {(r, c) for r in range(s) for c in range(r + 1)}
    elif shape == "cross":
        m = (s - 1) // 2
        cells = {(r, c) for r in range(s) for c in range(s) if r == m or c == m}
    elif shape == "ring":
        # square annulus of thickness 1 (the desk-scale "ring")
        cells = {(r, c) for r in range(s) for c in range(s)
                 if r in (0, s - 1) or c in (0, s - 1)}
    else:  # bar: horizontal 1 x size strip
        cells = {(0, c) for c in range(s)}
    return frozenset(cells)


def shape_bbox(shape: str, size: int) -> tuple[int, int]:
    """(height, width) of the shape's bounding box."""
    return (1, size) if shape == "bar" else (size, size)


@dataclass(frozen=True)
class SceneObject:
    shape: str
    color: int
    anchor: tuple[int, int]     # top-left cell of the bounding box
    size: int

    def cells(self) -> frozenset[tuple[int, int]]:
        r0, c0 = self.anchor
        return frozenset((r0 + r, c0 + c) for r, c in shape_cells(self.shape, self.size))

    def bbox(self) -> tuple[int, int, int, int]:
        h, w = shape_bbox(self.shape, self.size)
        r0, c0 = self.anchor
        return (r0, c0, r0 + h, c0 + w)

    def centroid(self) -> tuple[float, float]:
        cells = np.array(sorted(self.cells()), dtype=np.float64)
        return (float(cells[:, 0].mean()), float(cells[:, 1].mean()))


@dataclass(frozen=True)
class SceneSpec:
    objects: tuple[SceneObject, ...]
    grid_size: int = GRID_SIZE
    background_color: int = BACKGROUND

    def validate(self) -> None:
        if not 1 <= len(self.objects) <= MAX_OBJECTS:
            raise SceneError(f"scene must have 1..{MAX_OBJECTS} objects, got {len(self.objects)}")
        seen: set[tuple[int, int]] = set()
        for obj in self.objects:
            if obj.color == self.background_color or obj.color not in OBJECT_COLORS:
                raise SceneError(f"invalid object color {obj.color}")
            if obj.size < MIN_OBJECT_SIZE:
                raise SceneError(f"object size {obj.size} below minimum {MIN_OBJECT_SIZE}")
            r0, c0, r1, c1 = obj.bbox()
            if r0 < 0 or c0 < 0 or r1 > self.grid_size or c1 > self.grid_size:
                raise SceneError(f"object {obj.shape} at {obj.anchor} exceeds the grid")
            cells = obj.cells()
            if cells & seen:
                raise SceneError("objects overlap")
            seen |= cells

    def scene_id(self) -> str:
        """Stable content digest; identical scenes share an id."""
        canon = repr([(o.shape, o.color, o.anchor, o.size) for o in self.objects])
        canon += f"|{self.grid_size}|{self.background_color}"
        return hashlib.sha1(canon.encode("utf-8")).hexdigest()[:12]


@dataclass
class SceneConstraints:
    """Optional dimension targets for sample_scene.

    `objects` holds partial (shape, color) specs; None entries are sampled.
    `relation`, if set, must hold between objects 0 and 1.
    `same_shape` forces all objects onto one shape (counting scenes).
    """
    count: int | None = None
    objects: list[tuple[str | None, int | None]] = field(default_factory=list)
    relation: str | None = None
    same_shape: bool | None = None


RELATIONS = ("left_of", "right_of", "above", "below")

# centroid separation below this on the relevant axis is undecidable
POSITION_DEAD_ZONE = 1.0


def relation_holds(a: SceneObject, b: SceneObject, relation: str) -> bool:
    """Strict relational predicate with a 1-cell dead zone on centroids."""
    (ra, ca), (rb, cb) = a.centroid(), b.centroid()
    if relation == "left_of":
        return cb - ca >= POSITION_DEAD_ZONE
    if relation == "right_of":
        return ca - cb >= POSITION_DEAD_ZONE
    if relation == "above":
        return rb - ra >= POSITION_DEAD_ZONE
    if relation == "below":
        return ra - rb >= POSITION_DEAD_ZONE
    raise SceneError(f"unknown relation {relation!r}")


def dominant_relation(a: SceneObject, b: SceneObject) -> str | None:
    """Relation of a w.r.t. b on the axis with the larger centroid gap.

    Returns None when both axes fall inside the dead zone; scene sampling
    rejects such placements for consecutive objects.
    """
    (ra, ca), (rb, cb) = a.centroid(), b.centroid()
    dr, dc = rb - ra, cb - ca
    if max(abs(dr), abs(dc)) < POSITION_DEAD_ZONE:
        return None
    if abs(dc) >= abs(dr):
        return "left_of" if dc > 0 else "right_of"
    return "above" if dr > 0 else "below"


ZONES = ("top_left", "top", "top_right", "left", "center", "right",
         "bottom_left", "bottom", "bottom_right")


def zone_of(obj: SceneObject, grid_size: int = GRID_SIZE) -> str:
    """Coarse 3x3 zone of the object's centroid."""
    r, c = obj.centroid()
    third = grid_size / 3.0
    row_band = min(2, int(r / third))
    col_band = min(2, int(c / third))
    return ZONES[row_band * 3 + col_band]


def render_scene(scene: SceneSpec) -> TokenGrid:
    """Render a SceneSpec into a palette-index token grid. Pure and exact."""
    scene.validate()
    cells = np.full((scene.grid_size, scene.grid_size), scene.background_color, dtype=np.uint8)
    for obj in scene.objects:
        for r, c in obj.cells():
            cells[r, c] = obj.color
    return TokenGrid(side=scene.grid_size, cells=cells)


def _rng_for_scene(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([0x5CE4E, seed & 0xFFFFFFFF]))


_COUNT_WEIGHTS = (0.40, 0.25, 0.20, 0.15)
_SAME_SHAPE_RATE = 0.25     # share of multi-object scenes that form counted groups


def sample_scene(rng_seed: int, constraints: SceneConstraints | None = None,
                 grid_size: int = GRID_SIZE) -> SceneSpec:
    """Sample a valid scene, deterministic in `rng_seed`.

    Constraints are satisfied exactly or a SceneError names the violated
    dimension. Placement guarantees a 1-cell bounding-box gap between
    objects (so same-color components never merge) and a decidable
    dominant relation between consecutive objects.
    """
    cons = constraints or SceneConstraints()
    rng = _rng_for_scene(rng_seed)

    if cons.count is not None and cons.count > MAX_OBJECTS:
        raise SceneError(f"count exceeds maximum ({MAX_OBJECTS})")
    if cons.count is not None and cons.count < 1:
        raise SceneError("count must be at least 1")
    if len(cons.objects) > (cons.count if cons.count is not None else MAX_OBJECTS):
        raise SceneError("more object specs than count allows")
    if cons.relation is not None and cons.relation not in RELATIONS:
        raise SceneError(f"unknown relation {cons.relation!r}")

    count = cons.count if cons.count is not None else int(rng.choice(4, p=_COUNT_WEIGHTS)) + 1
    if cons.relation is not None and count < 2:
        raise SceneError("relation constraint needs at least 2 objects")

    same_shape = cons.same_shape
    if same_shape is None:
        same_shape = count >= 2 and not cons.objects and cons.relation is None \
            and rng.random() < _SAME_SHAPE_RATE

    for _attempt in range(500):
        shapes: list[str] = []
        group_shape = None
        if same_shape:
            fixed = [s for s, _ in cons.objects if s is not None]
            if len(set(fixed)) > 1:
                raise SceneError("same_shape conflicts with distinct shape specs")
            group_shape = fixed[0] if fixed else str(rng.choice(SHAPES))
        for i in range(count):
            spec_shape = cons.objects[i][0] if i < len(cons.objects) else None
            shapes.append(spec_shape or group_shape or str(rng.choice(SHAPES)))

        colors: list[int] = []
        used: set[int] = set()
        for i in range(count):
            spec_color = cons.objects[i][1] if i < len(cons.objects) else None
            if spec_color is not None:
                if spec_color in used:
                    raise SceneError(f"duplicate color constraint {spec_color}")
                colors.append(spec_color)
            else:
                pool = [c for c in OBJECT_COLORS if c not in used and c not in colors]
                colors.append(int(rng.choice(pool)))
            used.add(colors[-1])

        objects: list[SceneObject] = []
        occupied: list[tuple[int, int, int, int]] = []
        ok = True
        for i in range(count):
            sizes = SHAPE_SIZES[shapes[i]]
            size = int(rng.choice(sizes[:2] if count >= 3 else sizes))
            h, w = shape_bbox(shapes[i], size)
            placed = False
            for _try in range(80):
                r0 = int(rng.integers(0, grid_size - h + 1))
                c0 = int(rng.integers(0, grid_size - w + 1))
                box = (r0, c0, r0 + h, c0 + w)
                # enforce a 1-cell gap between bounding boxes
                if any(not (box[2] + 1 <= o[0] or o[2] + 1 <= box[0]
                            or box[3] + 1 <= o[1] or o[3] + 1 <= box[1])
                       for o in occupied):
                    continue
                cand = SceneObject(shapes[i], colors[i], (r0, c0), size)
                if i > 0 and dominant_relation(objects[i - 1], cand) is None:
                    continue
                if i == 1 and cons.relation is not None \
                        and not relation_holds(objects[0], cand, cons.relation):
                    continue
                objects.append(cand)
                occupied.append(box)
                placed = True
                break
            if not placed:
                ok = False
                break
        if not ok:
            continue
        scene = SceneSpec(objects=tuple(objects), grid_size=grid_size)
        scene.validate()
        return scene
    raise SceneError("could not place objects satisfying constraints")
