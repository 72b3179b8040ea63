"""Resolution-independent synthetic volumes with nested labels.

A :class:`Scene` lives in the unit cube and is described analytically, so the
same scene can be rasterized at any grid size.  Each scene holds one or more
*lesions*: chains of primitives where every inner primitive lies strictly
inside its parent and carries the next deeper label (label 1 outermost).
Label channel ``l`` marks voxels inside any primitive with label ``>= l + 1``,
so deeper labels are always subsets of shallower ones.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .seeding import substream

# per-label mean channel response (rows: background-free labels 1..3, distractor last)
LABEL_INTENSITY = np.array([
    [1.0, 0.2, 0.8, 0.0],
    [0.4, 0.9, 0.1, 0.5],
    [0.7, 0.3, 1.1, 1.3],
])
DISTRACTOR_INTENSITY = np.array([1.0, 0.1, -0.3, 0.6])


@dataclass
class SceneSpec:
    lesions: tuple = (1, 2)
    distractors: tuple = (0, 2)
    num_labels: int = 3
    in_channels: int = 4
    outer_radius: tuple = (0.18, 0.30)
    shrink: tuple = (0.55, 0.75)
    radius_range: tuple = (0.05, 0.35)
    deeper_label_prob: float = 0.93
    blob_prob: float = 0.5
    blob_amplitude: float = 0.12
    intensity_jitter: float = 0.15
    clutter_amplitude: float = 0.15
    noise_std: float = 0.0
    smoothing: float = 1.5 / 32
    max_retries: int = 200

    def __post_init__(self):
        for name in ("lesions", "distractors", "outer_radius", "shrink", "radius_range"):
            lo, hi = getattr(self, name)
            setattr(self, name, (type(lo)(lo), type(hi)(hi)))
            if lo > hi:
                raise ValueError(f"{name} range is empty: {(lo, hi)}")
        if not 1 <= self.num_labels <= len(LABEL_INTENSITY):
            raise ValueError(f"num_labels must be in 1..{len(LABEL_INTENSITY)}")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown scene spec keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class Primitive:
    kind: str                # "ellipsoid" or "blob"
    center: np.ndarray
    radii: np.ndarray
    rotation: np.ndarray     # columns are the local axes
    intensity: np.ndarray    # one value per input channel
    label: int               # 0 for unlabeled distractors
    bump_dirs: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    bump_weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bump_phases: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def amplitude(self) -> float:
        return float(np.abs(self.bump_weights).sum())

    def _local(self, pts: np.ndarray):
        p = (pts - self.center) @ self.rotation
        q = p / self.radii
        rho = np.linalg.norm(q, axis=-1)
        return p, q, rho

    def boundary_scale(self, q_dir: np.ndarray) -> np.ndarray:
        """Radial boundary position (1 for an ellipsoid) along unit directions."""
        if self.kind == "ellipsoid" or len(self.bump_weights) == 0:
            return np.ones(q_dir.shape[:-1])
        proj = q_dir @ self.bump_dirs.T
        return 1.0 + np.cos(3.0 * proj + self.bump_phases) @ self.bump_weights

    def signed_distance(self, pts: np.ndarray) -> np.ndarray:
        """Approximate signed distance (negative inside) measured along the radial ray."""
        p, q, rho = self._local(pts)
        rho_safe = np.maximum(rho, 1e-12)
        b = self.boundary_scale(q / rho_safe[..., None])
        plen = np.linalg.norm(p, axis=-1)
        # |p| (1 - b / rho) -> -(boundary radius along the ray) as rho -> 0
        ray_len = np.where(rho > 1e-12, plen / rho_safe, self.radii.min())
        return (rho - b) * ray_len

    def contains(self, pts: np.ndarray) -> np.ndarray:
        _, q, rho = self._local(pts)
        rho_safe = np.maximum(rho, 1e-12)
        return rho < self.boundary_scale(q / rho_safe[..., None])

    def surface_points(self, n: int, rng: np.random.Generator) -> np.ndarray:
        v = rng.standard_normal((n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        r = self.boundary_scale(v)
        return self.center + ((v * r[:, None]) * self.radii) @ self.rotation.T

    def to_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "Primitive":
        arrays = {k: np.asarray(v, dtype=float) for k, v in d.items() if k not in ("kind", "label")}
        return cls(kind=d["kind"], label=int(d["label"]), **arrays)


@dataclass
class Scene:
    primitives: list
    parents: list            # index of the containing primitive, or -1
    clutter: np.ndarray      # [C, n_terms, 5]: frequency xyz, amplitude, phase
    seed: int = 0

    def labels_present(self) -> set:
        return {p.label for p in self.primitives if p.label > 0}

    def to_dict(self) -> dict:
        return {"primitives": [p.to_dict() for p in self.primitives], "parents": list(self.parents),
                "clutter": self.clutter.tolist(), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        return cls([Primitive.from_dict(p) for p in d["primitives"]], list(d["parents"]),
                   np.asarray(d["clutter"], dtype=float), int(d["seed"]))


@dataclass
class Sample:
    image: np.ndarray        # [C_in, X, Y, Z]
    labels: np.ndarray       # [L, X, Y, Z] binary
    scene_seed: int
    resolution: tuple


class SceneError(RuntimeError):
    pass


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def _make_primitive(rng, spec: SceneSpec, center, radii, rotation, label, base) -> Primitive:
    intensity = base + rng.uniform(-spec.intensity_jitter, spec.intensity_jitter, base.shape)
    if rng.random() < spec.blob_prob:
        dirs = rng.standard_normal((3, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        w = rng.dirichlet(np.ones(3)) * spec.blob_amplitude
        return Primitive("blob", np.asarray(center, float), np.asarray(radii, float), rotation,
                         intensity, label, dirs, w, rng.uniform(0, 2 * np.pi, 3))
    return Primitive("ellipsoid", np.asarray(center, float), np.asarray(radii, float), rotation,
                     intensity, label)


def _sample_chain(rng, spec: SceneSpec, taken: list, scale: float = 1.0):
    """Outer primitive plus nested children, or None if no free placement was found."""
    lo_r, hi_r = spec.radius_range
    base = LABEL_INTENSITY[:, :spec.in_channels]
    radii = (scale * rng.uniform(*spec.outer_radius, size=3)).clip(lo_r, hi_r)
    reach = radii.max() * (1 + spec.blob_amplitude)
    if 2 * reach >= 0.96:
        return None
    center = rng.uniform(0.02 + reach, 0.98 - reach, size=3)
    for c, r in taken:
        if np.linalg.norm(center - c) < reach + r + 0.02:
            return None
    rotation = _random_rotation(rng)
    chain = [_make_primitive(rng, spec, center, radii, rotation, 1, base[0])]
    for label in range(2, spec.num_labels + 1):
        if rng.random() > spec.deeper_label_prob:
            break
        parent = chain[-1]
        rho = rng.uniform(*spec.shrink, size=3)
        child_r = rho * parent.radii
        if child_r.min() < lo_r:
            rho = np.maximum(rho, lo_r / parent.radii)
            child_r = rho * parent.radii
        child = _make_primitive(rng, spec, parent.center, child_r, rotation, label, base[label - 1])
        slack = 1 - parent.amplitude - rho.max() * (1 + child.amplitude) - 0.03
        if slack <= 0:
            break
        offset = rng.standard_normal(3)
        offset *= rng.uniform(0, slack) / np.linalg.norm(offset)
        child.center = parent.center + rotation @ (offset * parent.radii)
        chain.append(child)
    taken.append((center, reach))
    return chain


def sample_scene(rng: np.random.Generator, spec: Optional[SceneSpec] = None, seed: int = 0) -> Scene:
    """Draw a random scene; nested primitives are contained by construction."""
    spec = spec or SceneSpec()
    n_lesions = int(rng.integers(spec.lesions[0], spec.lesions[1] + 1))
    n_distract = int(rng.integers(spec.distractors[0], spec.distractors[1] + 1))
    prims, parents, taken = [], [], []
    for _ in range(n_lesions):
        for attempt in range(spec.max_retries):
            # crowded scenes fall back to progressively smaller lesions
            chain = _sample_chain(rng, spec, taken, scale=max(0.3, 0.98 ** attempt))
            if chain is not None:
                break
        else:
            raise SceneError(f"could not place lesion without overlap (scene seed {seed})")
        start = len(prims)
        for j, p in enumerate(chain):
            prims.append(p)
            parents.append(-1 if j == 0 else start + j - 1)
    for _ in range(n_distract):
        r = rng.uniform(spec.radius_range[0], 0.5 * spec.outer_radius[1], size=3)
        c = rng.uniform(0.05 + r.max(), 0.95 - r.max(), size=3)
        prims.insert(0, _make_primitive(rng, spec, c, r, _random_rotation(rng), 0,
                                        DISTRACTOR_INTENSITY[:spec.in_channels]))
        parents = [-1] + [p + 1 if p >= 0 else -1 for p in parents]
    # an empty scene has no background texture either
    n_terms = 4 if prims else 0
    clutter = np.concatenate([
        rng.integers(-2, 3, size=(spec.in_channels, n_terms, 3)).astype(float),
        rng.normal(0, spec.clutter_amplitude, size=(spec.in_channels, n_terms, 1)),
        rng.uniform(0, 2 * np.pi, size=(spec.in_channels, n_terms, 1)),
    ], axis=2)
    return Scene(prims, parents, clutter, seed)


def check_containment(scene: Scene, n_points: int = 2000, seed: int = 0) -> bool:
    """Sample child surfaces and verify every point lies inside the parent."""
    rng = np.random.default_rng(seed)
    for child, parent in zip(scene.primitives, scene.parents):
        if parent < 0:
            continue
        pts = child.surface_points(n_points, rng)
        if not np.all(scene.primitives[parent].contains(pts)):
            return False
        if child.label != scene.primitives[parent].label + 1:
            return False
    return True


def voxel_centers(resolution: Sequence[int]) -> np.ndarray:
    axes = [(np.arange(n) + 0.5) / n for n in resolution]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def rasterize(scene: Scene, resolution: Sequence[int], spec: Optional[SceneSpec] = None,
              in_channels: Optional[int] = None, smoothing: Optional[float] = None) -> Sample:
    """Sample intensities and labels at voxel centres of an even grid.

    ``smoothing`` is the edge width in world units, so every resolution samples
    the same continuous field.
    """
    spec = spec or SceneSpec()
    resolution = tuple(int(n) for n in resolution)
    if len(resolution) != 3 or any(n < 2 or n % 2 for n in resolution):
        raise ValueError(f"resolution must be three even sizes, got {resolution}")
    C = spec.in_channels if in_channels is None else int(in_channels)
    L = spec.num_labels
    sigma = spec.smoothing if smoothing is None else float(smoothing)
    if sigma <= 0:
        raise ValueError("smoothing must be positive")
    pts = voxel_centers(resolution)
    image = np.zeros((C,) + resolution)
    for c in range(min(C, len(scene.clutter))):
        for fx, fy, fz, amp, ph in scene.clutter[c]:
            image[c] += amp * np.cos(2 * np.pi * (fx * pts[..., 0] + fy * pts[..., 1] + fz * pts[..., 2]) + ph)
    labels = np.zeros((L,) + resolution)
    # draw order: distractors, then each chain from outer to inner
    for prim in scene.primitives:
        sd = prim.signed_distance(pts)
        m = ndtr(-sd / sigma)
        image = image * (1 - m) + prim.intensity[:C, None, None, None] * m
        if prim.label > 0:
            inside = prim.contains(pts)
            for l in range(min(prim.label, L)):
                labels[l] = np.maximum(labels[l], inside)
    if spec.noise_std > 0:
        noise_rng = substream(scene.seed, f"noise{resolution}")
        image = image + noise_rng.normal(0, spec.noise_std, image.shape)
    return Sample(image, labels, scene.seed, resolution)


@dataclass
class Dataset:
    seed: int
    spec: SceneSpec
    resolution: tuple
    scenes: list
    train: list
    val: list

    @property
    def n_train(self) -> int:
        return len(self.train)

    def rasterized(self, resolution: Sequence[int], split: str = "val") -> list:
        """Re-rasterize one split of the same scenes at another resolution."""
        scenes = self.scenes[:self.n_train] if split == "train" else self.scenes[self.n_train:]
        return [rasterize(s, resolution, self.spec) for s in scenes]

    def manifest(self) -> dict:
        return {
            "seed": self.seed,
            "spec": self.spec.to_dict(),
            "resolution": list(self.resolution),
            "train_ids": list(range(self.n_train)),
            "val_ids": list(range(self.n_train, len(self.scenes))),
        }


def scene_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint64)[0] >> 1)


def make_scenes(seed: int, n: int, spec: Optional[SceneSpec] = None) -> list:
    spec = spec or SceneSpec()
    out = []
    for i in range(n):
        s = scene_seed(seed, i)
        out.append(sample_scene(np.random.default_rng(s), spec, seed=s))
    return out


def make_dataset(seed: int, n: int, spec: Optional[SceneSpec] = None,
                 resolution: Sequence[int] = (32, 32, 32)) -> Dataset:
    """``n`` scenes rasterized at ``resolution``; the last 20% form the validation split."""
    if n < 2:
        raise ValueError(f"need at least two scenes, got {n}")
    spec = spec or SceneSpec()
    resolution = tuple(resolution)
    scenes = make_scenes(seed, n, spec)
    n_val = max(1, int(round(0.2 * n)))
    samples = [rasterize(s, resolution, spec) for s in scenes]
    return Dataset(seed, spec, resolution, scenes, samples[:n - n_val], samples[n - n_val:])
