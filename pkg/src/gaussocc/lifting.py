"""Feature lifting onto Gaussian anchors.

Camera branch: anchor centroids are pinhole-projected into each view and
sampled at a small set of learned pixel offsets with softmax weights, then
averaged over the views that see the anchor.

LiDAR branch: the depth-plane stack is sampled at learned 3D keypoints
around each anchor (one feature row per depth level), the rows are chunked
under an optional random depth permutation, chunk context modulates the last
chunk through a sigmoid mask, and a learnable soft gate blends the modulated
vector with the global depth mean.

Every operation is a pure function vectorized over leading anchor axes; out
of bounds samples contribute zeros rather than clamped edge values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .params import ParameterBundle


def _sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def _softmax(x, axis=-1):
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


@dataclass(frozen=True)
class CameraView:
    """One feature plane with its pinhole calibration (world-to-camera 4x4)."""

    plane: np.ndarray
    intrinsics: np.ndarray
    extrinsics: np.ndarray

    def __post_init__(self):
        if self.plane.ndim != 3:
            raise ConfigurationError("camera plane must be H x W x F")
        if self.intrinsics.shape != (3, 3) or self.extrinsics.shape != (4, 4):
            raise ConfigurationError("camera calibration shapes must be 3x3 and 4x4")
        if self.intrinsics[0, 0] <= 0 or self.intrinsics[1, 1] <= 0:
            raise ConfigurationError("camera focal lengths must be positive")


@dataclass(frozen=True)
class MultiViewFeatureSet:
    views: tuple[CameraView, ...]

    def __post_init__(self):
        if not self.views:
            raise ConfigurationError("at least one camera view is required")
        widths = {v.plane.shape[-1] for v in self.views}
        if len(widths) != 1:
            raise ConfigurationError("all camera planes must share the feature width")
        object.__setattr__(self, "views", tuple(self.views))

    @property
    def feature_width(self) -> int:
        return self.views[0].plane.shape[-1]


@dataclass(frozen=True)
class DepthPlaneStack:
    """D stacked feature planes indexed by a z-interval each.

    ``origin_xy``/``cell_size`` geo-reference plane texels: texel (row r,
    col c) covers the cell centred at origin_xy + (c + 0.5, r + 0.5) * cell_size.
    """

    planes: np.ndarray
    z_intervals: np.ndarray
    origin_xy: np.ndarray
    cell_size: np.ndarray

    def __post_init__(self):
        if self.planes.ndim != 4 or self.planes.shape[0] < 1:
            raise ConfigurationError("depth planes must be D x H x W x F with D >= 1")
        if self.z_intervals.shape != (self.planes.shape[0], 2):
            raise ConfigurationError("z_intervals must give one interval per depth plane")

    @property
    def depth_levels(self) -> int:
        return self.planes.shape[0]

    @property
    def feature_width(self) -> int:
        return self.planes.shape[-1]

    def to_plane_coords(self, xy: np.ndarray) -> np.ndarray:
        """World (x, y) -> continuous (col, row) texel-center coordinates."""
        rel = (np.asarray(xy, dtype=np.float64) - self.origin_xy) / self.cell_size
        return rel - 0.5


@dataclass(frozen=True)
class KeypointSet:
    """Per anchor: P metric offsets and P non-negative attention weights."""

    offsets: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if self.offsets.shape[-1] != 3 or self.offsets.shape[-2] < 1:
            raise ConfigurationError("keypoint offsets must be ... x P x 3 with P >= 1")
        if self.weights.shape != self.offsets.shape[:-1]:
            raise ConfigurationError("keypoint weights must match offsets per anchor")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0):
            raise ConfigurationError("keypoint weights must be finite and non-negative")


@dataclass(frozen=True)
class DepthChunking:
    """Partition of depth levels 0..D-1 into K contiguous chunks plus a permutation."""

    chunk_count: int
    permutation: np.ndarray
    chunk_sets: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        d = len(self.permutation)
        if sorted(self.permutation.tolist()) != list(range(d)):
            raise ConfigurationError("permutation must be a bijection over depth levels")
        flat = [i for s in self.chunk_sets for i in s]
        if sorted(flat) != list(range(d)) or len(self.chunk_sets) != self.chunk_count:
            raise ConfigurationError("chunk sets must partition the depth levels")


@dataclass(frozen=True)
class CameraLiftParams:
    offsets: np.ndarray        # (P_img, 2) pixel offsets
    weight_logits: np.ndarray  # (P_img,)

    @classmethod
    def from_bundle(cls, bundle: ParameterBundle, p_img: int) -> "CameraLiftParams":
        return cls(
            offsets=bundle.get("lift.cam.offsets", (p_img, 2)),
            weight_logits=bundle.get("lift.cam.weight_logits", (p_img,)),
        )


@dataclass(frozen=True)
class KeypointParams:
    offset_w: np.ndarray  # (F, 3P)
    offset_b: np.ndarray  # (3P,)
    weight_w: np.ndarray  # (F, P)
    weight_b: np.ndarray  # (P,)

    @classmethod
    def from_bundle(cls, bundle: ParameterBundle, f: int, p: int) -> "KeypointParams":
        return cls(
            offset_w=bundle.get("lift.ldfa.offset.w", (f, 3 * p)),
            offset_b=bundle.get("lift.ldfa.offset.b", (3 * p,)),
            weight_w=bundle.get("lift.ldfa.weight.w", (f, p)),
            weight_b=bundle.get("lift.ldfa.weight.b", (p,)),
        )


@dataclass(frozen=True)
class LdfaParams:
    phi_w: np.ndarray   # ((K-1) * F, F)
    phi_b: np.ndarray   # (F,)
    gate_w: np.ndarray  # (2F,)
    gate_b: float

    @classmethod
    def from_bundle(cls, bundle: ParameterBundle, f: int, k: int) -> "LdfaParams":
        return cls(
            phi_w=bundle.get("lift.ldfa.phi.w", (max(k - 1, 1) * f, f)),
            phi_b=bundle.get("lift.ldfa.phi.b", (f,)),
            gate_w=bundle.get("lift.ldfa.gate.w", (2 * f,)),
            gate_b=float(bundle.get("lift.ldfa.gate.b", ())),
        )


def project_to_view(points: np.ndarray, view: CameraView):
    """Pinhole projection of world points into one view.

    Returns (uv, depth, valid); valid means depth > 0 and uv inside the
    texel-center domain [0, W-1] x [0, H-1].  Invalid is a flag, never an error.
    """
    pts = np.asarray(points, dtype=np.float64)
    cam = pts @ view.extrinsics[:3, :3].T + view.extrinsics[:3, 3]
    depth = cam[..., 2]
    safe = np.where(depth == 0.0, 1.0, depth)
    fx, fy = view.intrinsics[0, 0], view.intrinsics[1, 1]
    cx, cy = view.intrinsics[0, 2], view.intrinsics[1, 2]
    u = cx + fx * cam[..., 0] / safe
    v = cy + fy * cam[..., 1] / safe
    uv = np.stack([u, v], axis=-1)
    h, w = view.plane.shape[:2]
    inside = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    valid = (depth > 0) & inside
    return uv, depth, valid


def sample_bilinear(plane: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Bilinear sample of an H x W x F plane at (col, row) coordinates.

    Texels outside the plane contribute zero, so fully out-of-bounds
    coordinates return the zero vector.
    """
    plane = np.asarray(plane, dtype=np.float64)
    uv = np.asarray(uv, dtype=np.float64)
    h, w, f = plane.shape
    u, v = uv[..., 0], uv[..., 1]
    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    du, dv = u - u0, v - v0
    out = np.zeros(uv.shape[:-1] + (f,))
    for ui, vi, wgt in (
        (u0, v0, (1 - du) * (1 - dv)),
        (u0 + 1, v0, du * (1 - dv)),
        (u0, v0 + 1, (1 - du) * dv),
        (u0 + 1, v0 + 1, du * dv),
    ):
        mask = (ui >= 0) & (ui < w) & (vi >= 0) & (vi < h)
        ci = np.clip(ui, 0, w - 1)
        ri = np.clip(vi, 0, h - 1)
        out += (wgt * mask)[..., None] * plane[ri, ci]
    return out


def aggregate_camera(
    centroids: np.ndarray, views: MultiViewFeatureSet, params: CameraLiftParams
) -> np.ndarray:
    """Per-anchor camera feature: offset samples with softmax weights, view-averaged.

    Anchors with no valid projection get the zero vector.
    """
    centroids = np.asarray(centroids, dtype=np.float64)
    weights = _softmax(params.weight_logits)
    acc = np.zeros(centroids.shape[:-1] + (views.feature_width,))
    count = np.zeros(centroids.shape[:-1])
    for view in views.views:
        uv, _, valid = project_to_view(centroids, view)
        sample_uv = uv[..., None, :] + params.offsets
        samples = sample_bilinear(view.plane, sample_uv)
        feat = np.sum(weights[:, None] * samples, axis=-2)
        acc += np.where(valid[..., None], feat, 0.0)
        count += valid
    return acc / np.maximum(count, 1)[..., None]


def generate_keypoints(
    features: np.ndarray, scales: np.ndarray, params: KeypointParams
) -> KeypointSet:
    """Learned keypoints: offsets from a linear map of the feature, scaled by
    the anchor's per-axis scale; weights from a softmax head."""
    features = np.asarray(features, dtype=np.float64)
    scales = np.asarray(scales, dtype=np.float64)
    p = params.weight_w.shape[1]
    raw = features @ params.offset_w + params.offset_b
    offsets = raw.reshape(raw.shape[:-1] + (p, 3)) * scales[..., None, :]
    weights = _softmax(features @ params.weight_w + params.weight_b)
    return KeypointSet(offsets=offsets, weights=weights)


def ldfa_depth_sample(
    centroids: np.ndarray, keypoints: KeypointSet, stack: DepthPlaneStack
) -> np.ndarray:
    """Weighted keypoint samples per depth level: one D x F row block per anchor.

    Keypoints project to plane coordinates by dropping z and geo-referencing
    (x, y) against the stack's XY extent.
    """
    centroids = np.asarray(centroids, dtype=np.float64)
    positions = centroids[..., None, :] + keypoints.offsets
    uv = stack.to_plane_coords(positions[..., :2])
    rows = []
    for d in range(stack.depth_levels):
        samples = sample_bilinear(stack.planes[d], uv)
        rows.append(np.sum(keypoints.weights[..., None] * samples, axis=-2))
    return np.stack(rows, axis=-2)


def partition_depths(depth_levels: int, chunks: int, seed: int, training: bool) -> DepthChunking:
    """Contiguous chunking of the depth levels, seeded-permuted during training.

    Chunk sizes are as equal as possible; the remainder goes to the last chunk.
    """
    if not 1 <= chunks <= depth_levels:
        raise ConfigurationError(
            f"chunk count {chunks} must satisfy 1 <= K <= D={depth_levels}", field="depth_chunks"
        )
    if training:
        permutation = np.random.default_rng(seed).permutation(depth_levels)
    else:
        permutation = np.arange(depth_levels)
    base = depth_levels // chunks
    sets = []
    start = 0
    for k in range(chunks):
        size = base if k < chunks - 1 else depth_levels - base * (chunks - 1)
        sets.append(tuple(range(start, start + size)))
        start += size
    return DepthChunking(chunk_count=chunks, permutation=permutation, chunk_sets=tuple(sets))


def chunk_means(f_depth: np.ndarray, chunking: DepthChunking) -> np.ndarray:
    """Mean-pooled chunk representations C_k over the permuted depth rows."""
    f_depth = np.asarray(f_depth, dtype=np.float64)
    out = [
        np.mean(f_depth[..., chunking.permutation[list(s)], :], axis=-2)
        for s in chunking.chunk_sets
    ]
    return np.stack(out, axis=-2)


def cross_depth_modulate(chunks: np.ndarray, params: LdfaParams) -> np.ndarray:
    """Context chunks gate the last chunk: sigmoid(linear(concat)) * C_K."""
    chunks = np.asarray(chunks, dtype=np.float64)
    k = chunks.shape[-2]
    if k < 2:
        raise ConfigurationError("cross-depth modulation needs at least two chunks", field="depth_chunks")
    context = chunks[..., : k - 1, :].reshape(chunks.shape[:-2] + (-1,))
    mask = _sigmoid(context @ params.phi_w + params.phi_b)
    return mask * chunks[..., k - 1, :]


def gated_global_fusion(m: np.ndarray, f_depth: np.ndarray, params: LdfaParams) -> np.ndarray:
    """Soft-gated blend of the modulated vector with the unpermuted depth mean."""
    m = np.asarray(m, dtype=np.float64)
    g = np.mean(np.asarray(f_depth, dtype=np.float64), axis=-2)
    logit = np.concatenate([m, g], axis=-1) @ params.gate_w + params.gate_b
    alpha = _sigmoid(logit)[..., None]
    return alpha * m + (1.0 - alpha) * g


def lift_lidar(
    centroids: np.ndarray,
    features: np.ndarray,
    scales: np.ndarray,
    stack: DepthPlaneStack,
    keypoint_params: KeypointParams,
    ldfa_params: LdfaParams,
    chunking: DepthChunking,
) -> np.ndarray:
    """Full LDFA chain: keypoints, depth sampling, chunking, modulation, gating."""
    keypoints = generate_keypoints(features, scales, keypoint_params)
    f_depth = ldfa_depth_sample(centroids, keypoints, stack)
    chunks = chunk_means(f_depth, chunking)
    modulated = cross_depth_modulate(chunks, ldfa_params)
    return gated_global_fusion(modulated, f_depth, ldfa_params)
