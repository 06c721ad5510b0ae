"""Stitching multiple generated behavior stages into one trajectory.

A multi-clause prompt ("walk then jump then sit") is split at the separator;
each clause conditions its own program sample, the decoded latent stages are
joined with a linear crossfade at every junction, and the stitched latent
trajectory drives a single rollout.  The default junction rule consumes the
frames it blends: the last O frames of one stage and the first O of the next
are replaced by O crossfaded frames, so N stages of lengths T_n yield
sum(T_n) - (N - 1) * O frames.  An alternate in-place mode keeps every frame
and only smooths the 2O frames around each junction.
"""

from dataclasses import dataclass

import numpy as np

from .bottleneck import decode, embed_text
from .errors import (
    CountMismatch,
    EmptyClause,
    OverlapTooLarge,
    RangeError,
    ShapeMismatch,
)
from .flow import SamplerConfig, euler_sample
from .geometry import blend_overlap
from .world import rollout

DEFAULT_OVERLAP = 4


def split_prompt(token_ids, separator_id: int):
    """Clause token tuples, split at the separator; every clause must be non-empty."""
    clauses = []
    current = []
    for tok in token_ids:
        if tok == separator_id:
            if not current:
                raise EmptyClause("separator with no preceding clause tokens")
            clauses.append(tuple(current))
            current = []
        else:
            current.append(int(tok))
    if not current:
        raise EmptyClause("prompt ends on a separator" if clauses
                          else "prompt has no tokens")
    clauses.append(tuple(current))
    return tuple(clauses)


def _check_segments(segments, overlap: int):
    if len(segments) == 0:
        raise CountMismatch("nothing to compose")
    arrs = [np.asarray(s, dtype=float) for s in segments]
    d = arrs[0].shape[1] if arrs[0].ndim == 2 else -1
    for a in arrs:
        if a.ndim != 2 or a.shape[1] != d:
            raise ShapeMismatch("stages must share the latent dimension")
    if overlap < 0:
        raise RangeError(f"overlap {overlap} must be >= 0")
    return arrs


def compose_latents(segments, overlap: int = DEFAULT_OVERLAP,
                    in_place: bool = False):
    """Stitch latent stages; returns (latents, boundaries).

    ``boundaries`` holds one index per junction, placed at the midpoint of the
    blended window, so slicing at the boundaries recovers per-stage spans.
    """
    arrs = _check_segments(segments, overlap)
    n = len(arrs)
    if n == 1:
        return arrs[0].copy(), ()
    if in_place:
        return _compose_in_place(arrs, overlap)
    for i, a in enumerate(arrs):
        # a stage gives up `overlap` frames per junction it touches and must
        # keep at least one frame of its own
        junctions = 2 if 0 < i < n - 1 else 1
        need = junctions * overlap + 1
        if a.shape[0] < need:
            raise OverlapTooLarge(
                f"stage {i} has {a.shape[0]} frames; overlap {overlap} needs "
                f">= {need}"
            )
    pieces = []
    boundaries = []
    pos = 0
    for i, a in enumerate(arrs):
        lo = overlap if i > 0 else 0
        hi = a.shape[0] - (overlap if i < n - 1 else 0)
        core = a[lo:hi]
        pieces.append(core)
        pos += core.shape[0]
        if i < n - 1:
            if overlap > 0:
                blend = blend_overlap(a[hi:], arrs[i + 1][:overlap])
                pieces.append(blend)
                boundaries.append(pos + overlap // 2)
                pos += overlap
            else:
                boundaries.append(pos)
    return np.concatenate(pieces, axis=0), tuple(boundaries)


def _compose_in_place(arrs, overlap: int):
    """Keep every frame; crossfade the 2O frames straddling each junction.

    Within a junction window the departing stage is extended by holding its
    last frame and the arriving stage by holding its first, and the window
    fades linearly between the two.
    """
    n = len(arrs)
    for i, a in enumerate(arrs):
        need = 2 * overlap if 0 < i < n - 1 else overlap
        if a.shape[0] < max(need, 1):
            raise OverlapTooLarge(
                f"stage {i} has {a.shape[0]} frames; in-place overlap "
                f"{overlap} needs >= {max(need, 1)}"
            )
    out = np.concatenate(arrs, axis=0)
    lengths = [a.shape[0] for a in arrs]
    cuts = np.cumsum(lengths)
    if overlap > 0:
        for i in range(n - 1):
            cut = cuts[i]
            prev, nxt = arrs[i], arrs[i + 1]
            window = 2 * overlap
            rho = np.arange(1, window + 1) / (window + 1)
            for j in range(window):
                a_frame = prev[-overlap + j] if j < overlap else prev[-1]
                b_frame = nxt[0] if j < overlap else nxt[j - overlap]
                out[cut - overlap + j] = (1 - rho[j]) * a_frame + rho[j] * b_frame
    return out, tuple(int(c) for c in cuts[:-1])


def stage_slices(total: int, boundaries):
    """Per-stage [start, stop) latent spans implied by the junction indices."""
    edges = (0,) + tuple(int(b) for b in boundaries) + (total,)
    if any(edges[i] >= edges[i + 1] for i in range(len(edges) - 1)):
        raise RangeError(f"boundaries {boundaries} do not split {total} frames")
    return tuple(slice(edges[i], edges[i + 1]) for i in range(len(edges) - 1))


@dataclass(frozen=True)
class ComposedRollout:
    """A stitched generation: latent trajectory, rollout, stage bookkeeping."""

    latents: np.ndarray
    states: np.ndarray
    boundaries: tuple
    stage_lengths: tuple

    def __post_init__(self):
        if self.states.shape[0] != self.latents.shape[0] + 1:
            raise CountMismatch("states must have one more row than latents")


def generate_composed(flow_model, bottleneck, vocab, world, token_ids,
                      t_m: int, sampler: SamplerConfig, seed: int,
                      overlap: int = DEFAULT_OVERLAP, in_place: bool = False,
                      init_state_scale: float = 0.5) -> ComposedRollout:
    """Stage-wise generation for a multi-clause prompt.

    Each clause gets an independent child seed, a program of ``t_m`` frames,
    and a decoded latent stage; stages are stitched and rolled out once.
    """
    if t_m < 1:
        raise RangeError(f"program length {t_m} must be >= 1")
    clauses = split_prompt(token_ids, vocab.separator_id)
    seeds = np.random.SeedSequence(seed).spawn(len(clauses) + 1)
    segments = []
    for clause, child in zip(clauses, seeds[:-1]):
        rng = np.random.default_rng(child)
        y_vec = embed_text(bottleneck, vocab.embeddings[list(clause)])
        noise = rng.standard_normal((t_m, bottleneck.cfg.d_m))
        program = euler_sample(flow_model, noise, sampler, y_vec)
        segments.append(decode(bottleneck, program))
    latents, boundaries = compose_latents(segments, overlap, in_place=in_place)
    init_rng = np.random.default_rng(seeds[-1])
    s1 = init_state_scale * init_rng.standard_normal(world.state_dim)
    states = rollout(world, s1, latents)
    return ComposedRollout(latents=latents, states=states,
                           boundaries=boundaries,
                           stage_lengths=tuple(s.shape[0] for s in segments))


def generate_single_shot(flow_model, bottleneck, vocab, world, token_ids,
                         t_m: int, sampler: SamplerConfig, seed: int,
                         boundaries=None,
                         init_state_scale: float = 0.5) -> ComposedRollout:
    """One program for the whole prompt, separator tokens and all.

    The pooled text context has no notion of clause order, which is exactly
    the failure mode stage-wise stitching is meant to beat.  ``boundaries``
    (defaults to an even split per clause) only annotates where stages are
    expected, for segment-level evaluation.
    """
    if t_m < 1:
        raise RangeError(f"program length {t_m} must be >= 1")
    clauses = split_prompt(token_ids, vocab.separator_id)
    seeds = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(seeds[0])
    y_vec = embed_text(bottleneck, vocab.embeddings[list(token_ids)])
    noise = rng.standard_normal((t_m, bottleneck.cfg.d_m))
    program = euler_sample(flow_model, noise, sampler, y_vec)
    latents = decode(bottleneck, program)
    total = latents.shape[0]
    n = len(clauses)
    if boundaries is None:
        boundaries = tuple(total * k // n for k in range(1, n))
    else:
        boundaries = tuple(int(b) for b in boundaries)
    stage_slices(total, boundaries)  # validate
    init_rng = np.random.default_rng(seeds[1])
    s1 = init_state_scale * init_rng.standard_normal(world.state_dim)
    states = rollout(world, s1, latents)
    edges = (0,) + boundaries + (total,)
    lengths = tuple(edges[i + 1] - edges[i] for i in range(len(edges) - 1))
    return ComposedRollout(latents=latents, states=states,
                           boundaries=boundaries, stage_lengths=lengths)
