"""Geometry of latent command trajectories.

A latent trajectory is a [T x d_z] array, one command vector per step.
Commands produced by extraction live on the sphere of radius sqrt(d_z); the
operations here never assume that silently, they either project or check.

The piecewise-constant compressor realises the budgeted approximation used by
the rollout-error bound: with a budget of m segments and total variation V it
guarantees a per-frame deviation of at most V / (m - 1).
"""

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteInput, RangeError, ShapeMismatch, ZeroNormInput

DEFAULT_NORM_FLOOR = 1e-8


def _as_traj(z) -> np.ndarray:
    """Coerce a LatentTrajectory or array-like to a validated [T x d] float array."""
    if isinstance(z, LatentTrajectory):
        return z.data
    arr = np.asarray(z, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeMismatch(f"expected a 2-D [T x d] trajectory, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput("trajectory contains non-finite entries")
    return arr


@dataclass(frozen=True)
class LatentTrajectory:
    """Temporally ordered latent commands, one row per step."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=float)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeMismatch(f"latent trajectory must be [T x d_z], got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteInput("latent trajectory contains non-finite entries")
        object.__setattr__(self, "data", arr)

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def d_z(self) -> int:
        return self.data.shape[1]

    def on_sphere(self, rtol: float = 1e-9) -> bool:
        """True when every row sits on the sphere of radius sqrt(d_z)."""
        radius = np.sqrt(self.d_z)
        norms = np.linalg.norm(self.data, axis=1)
        return bool(np.all(np.abs(norms - radius) <= rtol * radius))


@dataclass(frozen=True)
class SegmentPartition:
    """Contiguous partition of step indices 0..length-1 into segments.

    ``starts`` holds the 0-based first index of each segment; the first entry
    is always 0 and entries are strictly increasing.
    """

    starts: tuple
    length: int

    def __post_init__(self):
        starts = tuple(int(s) for s in self.starts)
        if len(starts) == 0 or starts[0] != 0:
            raise ShapeMismatch("partition must start at index 0")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ShapeMismatch("segment starts must be strictly increasing")
        if starts[-1] >= self.length:
            raise ShapeMismatch("segment start beyond trajectory length")
        object.__setattr__(self, "starts", starts)

    @property
    def segment_count(self) -> int:
        return len(self.starts)

    def segment_of(self, t: int) -> int:
        """Index of the segment containing step t."""
        if t < 0 or t >= self.length:
            raise RangeError(f"step {t} outside [0, {self.length})")
        return int(np.searchsorted(np.asarray(self.starts), t, side="right") - 1)

    def segment_slices(self):
        ends = list(self.starts[1:]) + [self.length]
        return [slice(a, b) for a, b in zip(self.starts, ends)]


def project_to_sphere(u, norm_floor: float = DEFAULT_NORM_FLOOR) -> np.ndarray:
    """Radially project a vector onto the sphere of radius sqrt(len(u)).

    Raises ZeroNormInput when ``||u|| < norm_floor``; near-zero vectors have no
    meaningful direction and silently normalising them would hide upstream bugs.
    """
    vec = np.asarray(u, dtype=float)
    if vec.ndim != 1 or vec.size == 0:
        raise ShapeMismatch(f"expected a 1-D vector, got shape {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise NonFiniteInput("cannot project a non-finite vector")
    norm = float(np.linalg.norm(vec))
    if norm < norm_floor:
        raise ZeroNormInput(f"norm {norm:.3e} below floor {norm_floor:.3e}")
    return np.sqrt(vec.size) * vec / norm


def project_rows(z, norm_floor: float = DEFAULT_NORM_FLOOR) -> np.ndarray:
    """Row-wise sphere projection of a [T x d] array."""
    arr = _as_traj(z)
    norms = np.linalg.norm(arr, axis=1)
    if np.any(norms < norm_floor):
        bad = int(np.argmin(norms))
        raise ZeroNormInput(f"row {bad} has norm {norms[bad]:.3e} below floor")
    return np.sqrt(arr.shape[1]) * arr / norms[:, None]


def total_variation(z) -> float:
    """Sum of Euclidean step lengths along the trajectory. Zero for T = 1."""
    arr = _as_traj(z)
    if arr.shape[0] == 1:
        return 0.0
    return float(np.linalg.norm(np.diff(arr, axis=0), axis=1).sum())


def max_deviation(a, b) -> float:
    """Largest per-frame Euclidean distance between two equal-shape trajectories."""
    x = _as_traj(a)
    y = _as_traj(b)
    if x.shape != y.shape:
        raise ShapeMismatch(f"shape {x.shape} vs {y.shape}")
    return float(np.linalg.norm(x - y, axis=1).max())


def piecewise_constant_approx(z, m: int):
    """Greedy m-segment piecewise-constant approximation of a trajectory.

    Walks the trajectory accumulating intra-segment variation and opens a new
    segment as soon as adding the next step would exceed the budget
    delta = TV(z) / (m - 1); a step landing exactly on the budget stays in the
    current segment.  Each segment is represented by its first frame, so the
    per-frame error is bounded by the accumulated intra-segment variation,
    hence by delta.  When m >= T every step can afford its own segment and the
    trajectory is reproduced exactly.

    Returns (approximation [T x d], SegmentPartition).
    """
    arr = _as_traj(z)
    n_steps = arr.shape[0]
    if int(m) != m or m < 2:
        raise RangeError(f"segment budget must be an integer >= 2, got {m}")
    m = int(m)

    if m >= n_steps:
        starts = tuple(range(n_steps))
        return arr.copy(), SegmentPartition(starts=starts, length=n_steps)

    variation = total_variation(arr)
    delta = variation / (m - 1)
    step_norms = np.linalg.norm(np.diff(arr, axis=0), axis=1)

    starts = [0]
    acc = 0.0
    for t in range(1, n_steps):
        step = float(step_norms[t - 1])
        if acc + step > delta:
            starts.append(t)
            acc = 0.0
        else:
            acc += step

    part = SegmentPartition(starts=tuple(starts), length=n_steps)
    if part.segment_count > m:
        raise RangeError(
            f"greedy pass used {part.segment_count} segments for budget {m}"
        )
    reps = np.empty_like(arr)
    for seg in part.segment_slices():
        reps[seg] = arr[seg.start]
    return reps, part


def blend_overlap(tail, head) -> np.ndarray:
    """Linear crossfade between the tail of one stage and the head of the next.

    Both inputs are [O x d]; blended frame o (1-based) weighs the head by
    rho_o = o / (O + 1), so the fade never fully reaches either endpoint and
    the surrounding unblended frames provide the endpoints themselves.
    """
    a = _as_traj(tail)
    b = _as_traj(head)
    if a.shape != b.shape:
        raise ShapeMismatch(f"tail {a.shape} vs head {b.shape}")
    overlap = a.shape[0]
    rho = (np.arange(1, overlap + 1) / (overlap + 1))[:, None]
    return (1.0 - rho) * a + rho * b
