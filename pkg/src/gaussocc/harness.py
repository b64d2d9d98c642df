"""Synthetic scenes, sensor degradation models, and brute-force oracles.

Scenes are built from a handful of class-labelled Gaussian blobs: the truth
grid assigns each voxel to its densest blob above a threshold, depth planes
carry each blob's XY footprint in the blob's class channel (soft one-hot
signatures plus noise, so lifting has linearly recoverable signal), and
camera planes carry projected image-space footprints.  Everything is a pure
function of (config, seed).

The oracles are deliberately naive: the dense splatter evaluates every
primitive at every voxel with no truncation, and the sequential scan runs
the state recurrence token by token from its definition.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (
    ClassTaxonomy,
    GaussianPrimitive,
    GridSpec,
    SemanticOccupancyGrid,
    make_covariance,
    stack_primitives,
    voxel_centers,
)
from .errors import ConfigurationError, FormatError
from .formats import dump_grid, parse_grid
from .head import SsmParams, _sigmoid, _softmax, _softplus, zoh_discretize
from .lifting import CameraView, DepthPlaneStack, MultiViewFeatureSet

DEGRADATION_MODES = ("none", "rain", "night")


@dataclass(frozen=True)
class SceneConfig:
    grid: GridSpec
    taxonomy: ClassTaxonomy
    feature_width: int = 32
    depth_planes: int = 8
    plane_shape: tuple[int, int] = (16, 24)
    cameras: int = 2
    camera_shape: tuple[int, int] = (32, 48)
    blob_range: tuple[int, int] = (3, 12)
    noise_sigma: float = 0.02
    blob_scale_range: tuple[float, float] | None = None
    truth_threshold: float = 0.1

    def __post_init__(self):
        if self.blob_range[0] < 1 or self.blob_range[1] < self.blob_range[0]:
            raise ConfigurationError("blob_range must request at least one blob", field="blob_range")
        if self.feature_width < self.taxonomy.c_sem:
            raise ConfigurationError(
                "feature_width must cover the class-signature channels", field="feature_width"
            )
        if self.cameras < 1 or self.depth_planes < 1:
            raise ConfigurationError("need at least one camera and one depth plane")

    def scale_range(self) -> tuple[float, float]:
        if self.blob_scale_range is not None:
            return self.blob_scale_range
        v = float(np.max(self.grid.voxel_size))
        return (1.5 * v, 4.0 * v)


@dataclass(frozen=True)
class DegradationConfig:
    mode: str = "none"
    camera_noise_sigma: float = 0.0
    camera_dropout_fraction: float = 0.0
    lidar_noise_sigma: float = 0.0
    lidar_dropout_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in DEGRADATION_MODES:
            raise ConfigurationError(f"unknown degradation mode {self.mode!r}", field="mode")
        for name in ("camera_dropout_fraction", "lidar_dropout_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1]", field=name)
        for name in ("camera_noise_sigma", "lidar_noise_sigma"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0", field=name)


@dataclass(frozen=True)
class SyntheticScene:
    seed: int
    config: SceneConfig
    blob_centroids: np.ndarray
    blob_scales: np.ndarray
    blob_rotations: np.ndarray
    blob_classes: np.ndarray
    truth: SemanticOccupancyGrid
    stack: DepthPlaneStack
    views: MultiViewFeatureSet

    def scene_hash(self) -> str:
        return hashlib.sha256(dump_scene(self)).hexdigest()


def _f32_exact(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def _camera_rig(config: SceneConfig) -> list[tuple[np.ndarray, np.ndarray]]:
    """Outward-looking surround rig at the grid center: (intrinsics, extrinsics)."""
    h, w = config.camera_shape
    center = config.grid.origin + config.grid.extent / 2.0
    rig = []
    for k in range(config.cameras):
        yaw = 2.0 * np.pi * k / config.cameras
        forward = np.array([np.cos(yaw), np.sin(yaw), 0.0])
        right = np.array([forward[1], -forward[0], 0.0])
        down = np.array([0.0, 0.0, -1.0])
        rot = np.stack([right, down, forward])
        extr = np.eye(4)
        extr[:3, :3] = rot
        extr[:3, 3] = -rot @ center
        intr = np.array(
            [[w / 2.0, 0.0, (w - 1) / 2.0], [0.0, w / 2.0, (h - 1) / 2.0], [0.0, 0.0, 1.0]]
        )
        rig.append((intr, extr))
    return rig


def _blob_truth(config: SceneConfig, centroids, scales, rotations, classes) -> SemanticOccupancyGrid:
    centers = voxel_centers(config.grid)
    best_density = np.zeros(config.grid.dims)
    best_class = np.full(config.grid.dims, config.taxonomy.empty_id, dtype=np.int64)
    for i in range(len(centroids)):
        inv = np.linalg.inv(make_covariance(scales[i], rotations[i]))
        d = centers - centroids[i]
        quad = np.einsum("...i,ij,...j->...", d, inv, d)
        dens = np.exp(-0.5 * quad)
        better = dens > best_density
        best_density = np.where(better, dens, best_density)
        best_class = np.where(better, classes[i], best_class)
    labels = np.where(
        best_density >= config.truth_threshold, best_class, config.taxonomy.empty_id
    ).astype(np.uint8)
    return SemanticOccupancyGrid(spec=config.grid, labels=labels)


def generate_scene(config: SceneConfig, seed: int) -> SyntheticScene:
    """Deterministic synthetic scene for (config, seed)."""
    rng = np.random.default_rng(seed)
    n_blobs = int(rng.integers(config.blob_range[0], config.blob_range[1] + 1))
    lo = config.grid.origin + 0.1 * config.grid.extent
    hi = config.grid.origin + 0.9 * config.grid.extent
    centroids = lo + rng.random((n_blobs, 3)) * (hi - lo)
    s_lo, s_hi = config.scale_range()
    scales = s_lo + rng.random((n_blobs, 3)) * (s_hi - s_lo)
    quats = rng.normal(size=(n_blobs, 4))
    rotations = quats / np.linalg.norm(quats, axis=1, keepdims=True)
    classes = rng.integers(0, config.taxonomy.c_sem, size=n_blobs)

    truth = _blob_truth(config, centroids, scales, rotations, classes)
    d = config.depth_planes
    h_l, w_l = config.plane_shape
    f = config.feature_width
    spec = config.grid

    z_edges = spec.origin[2] + spec.extent[2] * np.arange(d + 1) / d
    z_intervals = np.stack([z_edges[:-1], z_edges[1:]], axis=1)
    cell = np.array([spec.extent[0] / w_l, spec.extent[1] / h_l])
    xs = spec.origin[0] + (np.arange(w_l) + 0.5) * cell[0]
    ys = spec.origin[1] + (np.arange(h_l) + 0.5) * cell[1]
    planes = np.zeros((d, h_l, w_l, f))
    for i in range(n_blobs):
        sigma = make_covariance(scales[i], rotations[i])
        inv_xy = np.linalg.inv(sigma[:2, :2])
        dx = xs - centroids[i, 0]
        dy = ys - centroids[i, 1]
        quad = (
            inv_xy[0, 0] * (dx**2)[None, :]
            + inv_xy[1, 1] * (dy**2)[:, None]
            + 2.0 * inv_xy[0, 1] * dy[:, None] * dx[None, :]
        )
        footprint = np.exp(-0.5 * quad)
        z_centers = z_intervals.mean(axis=1)
        z_w = np.exp(-0.5 * (z_centers - centroids[i, 2]) ** 2 / sigma[2, 2])
        planes[:, :, :, classes[i]] += z_w[:, None, None] * footprint[None]
    planes += rng.normal(0.0, config.noise_sigma, size=planes.shape)
    stack = DepthPlaneStack(
        planes=_f32_exact(planes),
        z_intervals=z_intervals,
        origin_xy=spec.origin[:2].copy(),
        cell_size=cell,
    )

    h_c, w_c = config.camera_shape
    views = []
    for intr, extr in _camera_rig(config):
        plane = np.zeros((h_c, w_c, f))
        cam_pts = centroids @ extr[:3, :3].T + extr[:3, 3]
        for i in range(n_blobs):
            depth = cam_pts[i, 2]
            if depth <= 1e-3:
                continue
            u = intr[0, 2] + intr[0, 0] * cam_pts[i, 0] / depth
            v = intr[1, 2] + intr[1, 1] * cam_pts[i, 1] / depth
            radius = np.clip(intr[0, 0] * float(np.mean(scales[i])) / depth, 1.0, w_c / 2.0)
            if u < -3 * radius or u > w_c - 1 + 3 * radius or v < -3 * radius or v > h_c - 1 + 3 * radius:
                continue
            du = np.arange(w_c) - u
            dv = np.arange(h_c) - v
            foot = np.exp(-0.5 * ((du**2)[None, :] + (dv**2)[:, None]) / radius**2)
            plane[:, :, classes[i]] += foot
        plane += rng.normal(0.0, config.noise_sigma, size=plane.shape)
        views.append(CameraView(plane=_f32_exact(plane), intrinsics=intr, extrinsics=extr))

    return SyntheticScene(
        seed=seed,
        config=config,
        blob_centroids=centroids,
        blob_scales=scales,
        blob_rotations=rotations,
        blob_classes=classes,
        truth=truth,
        stack=stack,
        views=MultiViewFeatureSet(views=tuple(views)),
    )


def degrade(scene: SyntheticScene, config: DegradationConfig) -> SyntheticScene:
    """Sensor degradation; the truth grid is never touched."""
    if config.mode == "none":
        return scene
    rng = np.random.default_rng(config.seed)
    cam_planes = []
    for view in scene.views.views:
        plane = view.plane.copy()
        if config.mode == "rain":
            plane = plane + rng.normal(0.0, 1.0, size=plane.shape) * (
                config.camera_noise_sigma * (np.abs(plane) + 0.5)
            )
            keep = rng.random(plane.shape[:2]) >= config.camera_dropout_fraction
            plane = plane * keep[:, :, None]
        else:  # night
            h, w = plane.shape[:2]
            cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
            rr = (np.arange(h)[:, None] - cy) ** 2 + (np.arange(w)[None, :] - cx) ** 2
            cone = rr <= (min(h, w) / 3.0) ** 2
            gain = np.where(cone, 1.0, 1.0 - config.camera_dropout_fraction)
            plane = plane * gain[:, :, None]
            plane = plane + rng.normal(0.0, 1.0, size=plane.shape) * config.camera_noise_sigma
        cam_planes.append(CameraView(plane=_f32_exact(plane), intrinsics=view.intrinsics, extrinsics=view.extrinsics))

    lidar = scene.stack.planes.copy()
    if config.mode == "rain":
        lidar = lidar * (1.0 + rng.normal(0.0, 1.0, size=lidar.shape) * config.lidar_noise_sigma)
        keep = rng.random(lidar.shape[:3]) >= config.lidar_dropout_fraction
        lidar = lidar * keep[:, :, :, None]
    stack = DepthPlaneStack(
        planes=_f32_exact(lidar),
        z_intervals=scene.stack.z_intervals,
        origin_xy=scene.stack.origin_xy,
        cell_size=scene.stack.cell_size,
    )
    return replace(scene, views=MultiViewFeatureSet(views=tuple(cam_planes)), stack=stack)


def oracle_dense_splat(
    primitives: Sequence[GaussianPrimitive],
    spec: GridSpec,
    *,
    occupancy_threshold: float = 0.1,
    semantic_classes: int | None = None,
) -> SemanticOccupancyGrid:
    """Reference splatter: every primitive evaluated at every voxel, no truncation."""
    if len(primitives) == 0:
        c_total = (semantic_classes or 17) + 1
        labels = np.full(spec.dims, c_total - 1, dtype=np.uint8)
        return SemanticOccupancyGrid(spec=spec, labels=labels, scores=np.zeros(spec.dims + (c_total,)))
    arrays = stack_primitives(primitives)
    centers = voxel_centers(spec).reshape(-1, 3)
    scales = np.exp(arrays["log_scale"])
    opacity = _sigmoid(arrays["opacity_logit"])
    class_probs = _softmax(arrays["semantic_logits"])
    c_sem = class_probs.shape[1]
    c_total = c_sem + 1
    density = np.zeros(len(centers))
    scores = np.zeros((len(centers), c_total))
    for i in range(len(primitives)):
        inv = np.linalg.inv(make_covariance(scales[i], arrays["rotation"][i]))
        d = centers - arrays["centroid"][i]
        quad = np.einsum("vi,ij,vj->v", d, inv, d)
        g = opacity[i] * np.exp(-0.5 * quad)
        density += g
        scores[:, :c_sem] += g[:, None] * class_probs[i]
    labels = np.where(
        density >= occupancy_threshold, np.argmax(scores[:, :c_sem], axis=-1), c_total - 1
    ).astype(np.uint8)
    return SemanticOccupancyGrid(
        spec=spec, labels=labels.reshape(spec.dims), scores=scores.reshape(spec.dims + (c_total,))
    )


def oracle_sequential_scan(tokens: np.ndarray, params: SsmParams) -> np.ndarray:
    """Reference recurrence, one token at a time from the definition."""
    x = np.asarray(tokens, dtype=np.float64)
    h = np.zeros((params.a.shape[0], params.a.shape[1]))
    out = np.empty_like(x)
    for t in range(x.shape[0]):
        delta_t = _softplus(x[t] @ params.w_delta + params.b_delta)
        b_t = x[t] @ params.w_b
        c_t = x[t] @ params.w_c
        abar, bbar = zoh_discretize(params.a, b_t[None, :], delta_t[:, None])
        h = abar * h + bbar * x[t][:, None]
        out[t] = h @ c_t + params.d_skip * x[t]
    return out


# ---------------------------------------------------------------------------
# scene file codec: text header + binary plane/truth blocks
# ---------------------------------------------------------------------------

SCENE_MAGIC = b"GSCN1\n"


def _fmt_floats(a) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(a, dtype=np.float64).reshape(-1))


def dump_scene(scene: SyntheticScene) -> bytes:
    cfg = scene.config
    lines = [
        f"seed={scene.seed}",
        f"grid.origin={_fmt_floats(cfg.grid.origin)}",
        f"grid.voxel={_fmt_floats(cfg.grid.voxel_size)}",
        "grid.dims=" + " ".join(str(d) for d in cfg.grid.dims),
        "classes=" + ",".join(cfg.taxonomy.names),
        f"class_weights={_fmt_floats(cfg.taxonomy.class_weights)}",
        f"feature_width={cfg.feature_width}",
        f"noise_sigma={cfg.noise_sigma!r}",
        f"truth_threshold={cfg.truth_threshold!r}",
        f"blob_range={cfg.blob_range[0]} {cfg.blob_range[1]}",
        f"plane_shape={cfg.plane_shape[0]} {cfg.plane_shape[1]}",
        f"camera_shape={cfg.camera_shape[0]} {cfg.camera_shape[1]}",
        f"depth_planes={cfg.depth_planes}",
        f"stack.z_intervals={_fmt_floats(scene.stack.z_intervals)}",
        f"stack.origin_xy={_fmt_floats(scene.stack.origin_xy)}",
        f"stack.cell_size={_fmt_floats(scene.stack.cell_size)}",
        f"cameras={cfg.cameras}",
    ]
    for i, view in enumerate(scene.views.views):
        lines.append(f"cam{i}.intrinsics={_fmt_floats(view.intrinsics)}")
        lines.append(f"cam{i}.extrinsics={_fmt_floats(view.extrinsics)}")
    lines.append(f"blobs={len(scene.blob_classes)}")
    for i in range(len(scene.blob_classes)):
        row = np.concatenate(
            [scene.blob_centroids[i], scene.blob_scales[i], scene.blob_rotations[i]]
        )
        lines.append(f"blob{i}={_fmt_floats(row)} {int(scene.blob_classes[i])}")
    header = SCENE_MAGIC + ("\n".join(lines) + "\nEND_HEADER\n").encode("ascii")

    blocks = [np.ascontiguousarray(scene.stack.planes, dtype="<f4").tobytes()]
    for view in scene.views.views:
        blocks.append(np.ascontiguousarray(view.plane, dtype="<f4").tobytes())
    truth_bytes = dump_grid(scene.truth, class_count=cfg.taxonomy.c_total)
    blocks.append(len(truth_bytes).to_bytes(8, "little"))
    blocks.append(truth_bytes)
    return header + b"".join(blocks)


def save_scene(scene: SyntheticScene, path) -> None:
    Path(path).write_bytes(dump_scene(scene))


def parse_scene(data: bytes) -> SyntheticScene:
    if not data.startswith(SCENE_MAGIC):
        raise FormatError("bad scene magic", offset=0)
    try:
        end = data.index(b"END_HEADER\n")
    except ValueError:
        raise FormatError("scene header not terminated", offset=len(data)) from None
    header = data[len(SCENE_MAGIC) : end].decode("ascii")
    fields = {}
    for line in header.strip().splitlines():
        key, _, value = line.partition("=")
        fields[key] = value
    cursor = end + len(b"END_HEADER\n")

    def floats(key):
        return np.array([float(tok) for tok in fields[key].split()])

    names = tuple(fields["classes"].split(","))
    taxonomy = ClassTaxonomy(names=names, class_weights=floats("class_weights"))
    grid = GridSpec(
        origin=floats("grid.origin"),
        voxel_size=floats("grid.voxel"),
        dims=tuple(int(t) for t in fields["grid.dims"].split()),
    )
    cfg = SceneConfig(
        grid=grid,
        taxonomy=taxonomy,
        feature_width=int(fields["feature_width"]),
        depth_planes=int(fields["depth_planes"]),
        plane_shape=tuple(int(t) for t in fields["plane_shape"].split()),
        cameras=int(fields["cameras"]),
        camera_shape=tuple(int(t) for t in fields["camera_shape"].split()),
        blob_range=tuple(int(t) for t in fields["blob_range"].split()),
        noise_sigma=float(fields["noise_sigma"]),
        truth_threshold=float(fields["truth_threshold"]),
    )

    n_blobs = int(fields["blobs"])
    centroids, scales, rotations, classes = [], [], [], []
    for i in range(n_blobs):
        toks = fields[f"blob{i}"].split()
        vals = [float(t) for t in toks[:-1]]
        centroids.append(vals[0:3])
        scales.append(vals[3:6])
        rotations.append(vals[6:10])
        classes.append(int(toks[-1]))

    d, (h_l, w_l), f = cfg.depth_planes, cfg.plane_shape, cfg.feature_width

    def take(n):
        nonlocal cursor
        if cursor + n > len(data):
            raise FormatError("truncated scene payload", offset=cursor)
        chunk = data[cursor : cursor + n]
        cursor += n
        return chunk

    stack_planes = np.frombuffer(take(4 * d * h_l * w_l * f), dtype="<f4").reshape(d, h_l, w_l, f)
    stack = DepthPlaneStack(
        planes=stack_planes.astype(np.float64),
        z_intervals=floats("stack.z_intervals").reshape(d, 2),
        origin_xy=floats("stack.origin_xy"),
        cell_size=floats("stack.cell_size"),
    )
    h_c, w_c = cfg.camera_shape
    views = []
    for i in range(cfg.cameras):
        plane = np.frombuffer(take(4 * h_c * w_c * f), dtype="<f4").reshape(h_c, w_c, f)
        views.append(
            CameraView(
                plane=plane.astype(np.float64),
                intrinsics=floats(f"cam{i}.intrinsics").reshape(3, 3),
                extrinsics=floats(f"cam{i}.extrinsics").reshape(4, 4),
            )
        )
    truth_len = int.from_bytes(take(8), "little")
    truth = parse_grid(take(truth_len))
    if cursor != len(data):
        raise FormatError("trailing bytes in scene file", offset=cursor)
    return SyntheticScene(
        seed=int(fields["seed"]),
        config=cfg,
        blob_centroids=np.array(centroids),
        blob_scales=np.array(scales),
        blob_rotations=np.array(rotations),
        blob_classes=np.array(classes, dtype=np.int64),
        truth=truth,
        stack=stack,
        views=MultiViewFeatureSet(views=tuple(views)),
    )


def load_scene(path) -> SyntheticScene:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read scene {path}: {exc}") from exc
    return parse_scene(data)
