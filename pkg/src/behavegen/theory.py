"""Verification harness for the analytic guarantees behind the pipeline.

Three families of checks, each returning a report dict with an ``ok`` flag
and the measured margins rather than raising on a violated bound, so callers
can aggregate and surface failures:

* compression error propagation: replacing a latent trajectory by its greedy
  m-segment piecewise-constant approximation perturbs a contractive rollout
  by at most L_z * (V / (m - 1)) * sum_j L_s^j at every step;
* extraction smoothness: on full lookahead windows the pre-projection latent
  difference telescopes to an exact two-state expression, which caps the
  total variation of the projected latents;
* contrastive margin separation: a pooled-embedding gap floor and the induced
  retrieval probability floor, plus the construction that attains both.

Random instance generators and suite runners live here too; the command-line
``verify-bounds`` subcommand is a thin wrapper over ``run_suites``.
"""

import time
from dataclasses import dataclass

import numpy as np

from .errors import (
    CountMismatch,
    DegenerateRho,
    PreconditionViolated,
    RangeError,
    ShapeMismatch,
    ZeroNormInput,
)
from .geometry import (
    max_deviation,
    piecewise_constant_approx,
    project_rows,
    total_variation,
)
from .world import (
    ExtractionConfig,
    SyntheticWorld,
    lookahead_averages,
    make_world,
    rollout,
)

BOUND_TOL = 1e-9
TELESCOPE_TOL = 1e-10
TIGHTNESS_TOL = 1e-12


# ---------------------------------------------------------------------------
# compression error propagation
# ---------------------------------------------------------------------------

def verify_compression_bound(world: SyntheticWorld, z_traj, m: int, s1) -> dict:
    """Roll out a latent trajectory and its m-segment approximation and check
    the per-step and uniform error bounds."""
    z = np.asarray(z_traj, dtype=float)
    approx, partition = piecewise_constant_approx(z, m)
    v_total = total_variation(z)
    delta = v_total / (m - 1)
    dev = max_deviation(z, approx)

    states_ref = rollout(world, s1, z)
    states_hat = rollout(world, s1, approx)
    errs = np.linalg.norm(states_ref - states_hat, axis=1)

    l_s, l_z = world.L_s, world.L_z
    # e at state row i obeys e_i <= L_z * delta * sum_{k<i} L_s^k
    geo = np.cumsum(l_s ** np.arange(errs.shape[0]))
    bounds = np.concatenate([[0.0], l_z * delta * geo[:-1]])
    per_step_ok = bool(np.all(errs <= bounds + BOUND_TOL))
    worst_margin = float(np.max(errs - bounds))

    uniform = l_z * v_total / ((m - 1) * (1.0 - l_s)) if l_s < 1 else np.inf
    uniform_ok = bool(np.max(errs) <= uniform + BOUND_TOL)
    dev_ok = bool(dev <= delta + BOUND_TOL)

    return {
        "ok": per_step_ok and uniform_ok and dev_ok,
        "per_step_ok": per_step_ok,
        "uniform_ok": uniform_ok,
        "deviation_ok": dev_ok,
        "segments": partition.segment_count,
        "total_variation": float(v_total),
        "delta": float(delta),
        "max_deviation": float(dev),
        "max_error": float(np.max(errs)),
        "uniform_bound": float(uniform),
        "worst_margin": worst_margin,
        "tightness": float(np.max(errs) / uniform) if uniform > 0 else 0.0,
    }


# ---------------------------------------------------------------------------
# extraction smoothness
# ---------------------------------------------------------------------------

def verify_smoothing_bound(world: SyntheticWorld, cfg: ExtractionConfig,
                           states, rho_floor: float = 1e-8) -> dict:
    """Telescoping identity and total-variation cap on full lookahead windows.

    With a full window the averaged feature difference collapses to
    (B s_{t+L+1} - B s_{t+1}) / L exactly; combined with the sphere
    projection being (2 sqrt(d) / rho)-Lipschitz outside radius rho, the
    projected latents' total variation is capped by
    (2 sqrt(d_z) L_B / (rho L)) * sum_t ||s_{t+L+1} - s_{t+1}||.
    """
    s_arr = np.asarray(states, dtype=float)
    span = cfg.lookahead
    n_z = s_arr.shape[0] - 1
    if n_z - span < 1:
        raise ShapeMismatch(
            f"need at least {span + 2} states for two full windows"
        )
    averages = lookahead_averages(world, cfg, s_arr)
    full = averages[:n_z - span + 1]  # rows with a complete window

    feats = s_arr @ world.B_mat.T
    worst_tel = 0.0
    for i in range(full.shape[0] - 1):
        lhs = full[i + 1] - full[i]
        rhs = (feats[i + 1 + span] - feats[i + 1]) / span
        worst_tel = max(worst_tel, float(np.max(np.abs(lhs - rhs))))
    telescope_ok = worst_tel <= TELESCOPE_TOL

    rho = float(np.min(np.linalg.norm(full, axis=1)))
    if rho < rho_floor:
        raise DegenerateRho(
            f"pre-projection norms reach {rho:.3e}; cap is vacuous"
        )
    z_full = project_rows(full, cfg.norm_floor)
    tv = total_variation(z_full)
    d_z = world.d_z
    state_var = sum(
        float(np.linalg.norm(s_arr[i + 1 + span] - s_arr[i + 1]))
        for i in range(full.shape[0] - 1)
    )
    cap = (2.0 * np.sqrt(d_z) * world.L_B / (rho * span)) * state_var
    tv_ok = bool(tv <= cap + BOUND_TOL)

    return {
        "ok": telescope_ok and tv_ok,
        "telescope_ok": telescope_ok,
        "tv_ok": tv_ok,
        "worst_telescope": worst_tel,
        "rho": rho,
        "tv": float(tv),
        "tv_cap": float(cap),
        "full_windows": int(full.shape[0]),
        "tightness": float(tv / cap) if cap > 0 else 0.0,
    }


# ---------------------------------------------------------------------------
# contrastive margin separation
# ---------------------------------------------------------------------------

def _unit(v):
    v = np.asarray(v, dtype=float)
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        raise ZeroNormInput("cannot normalize a near-zero vector")
    return v / n


def verify_margin_bound(e_y, e_m, negatives, delta: float, tau: float) -> dict:
    """Gap and retrieval-probability floors for a matched pair against
    negatives that keep a cosine margin from the paired prompt.

    Preconditions: all vectors unit-norm, every negative satisfies
    <e_y, e_neg> <= 1 - delta.  The floors only bind in the margin regime
    delta > eta + sqrt(2 eta) with eta = 1 - <e_y, e_m>.
    """
    if tau <= 0:
        raise RangeError(f"temperature {tau} must be positive")
    e_y = np.asarray(e_y, dtype=float)
    e_m = np.asarray(e_m, dtype=float)
    negs = [np.asarray(n, dtype=float) for n in negatives]
    if len(negs) == 0:
        raise CountMismatch("need at least one negative")
    for v in [e_y, e_m] + negs:
        if v.shape != e_y.shape:
            raise ShapeMismatch("all embeddings must share one dimension")
        if abs(float(np.linalg.norm(v)) - 1.0) > 1e-9:
            raise PreconditionViolated("embeddings must be unit-norm")
    cos_neg = [float(e_y @ v) for v in negs]
    if max(cos_neg) > 1.0 - delta + 1e-12:
        raise PreconditionViolated(
            f"a negative has cosine {max(cos_neg):.6f} > 1 - delta"
        )

    eta = 1.0 - float(e_y @ e_m)
    margin_regime = delta > eta + np.sqrt(2.0 * eta)
    gap_floor = delta - eta - np.sqrt(2.0 * eta)
    gaps = [float(e_m @ e_y - e_m @ v) for v in negs]
    actual_gap = min(gaps)

    # softmax retrieval over the matched prompt plus the negatives
    logits = np.array([float(e_m @ e_y)] + [float(e_m @ v) for v in negs]) / tau
    logits -= logits.max()
    weights = np.exp(logits)
    p_match = float(weights[0] / weights.sum())
    n_neg = len(negs)
    p_floor = 1.0 / (1.0 + n_neg * np.exp(-gap_floor / tau))

    if margin_regime:
        gap_ok = actual_gap >= gap_floor - BOUND_TOL
        prob_ok = p_match >= p_floor - BOUND_TOL
    else:
        gap_ok = prob_ok = True  # floors are vacuous outside the regime

    return {
        "ok": bool(gap_ok and prob_ok),
        "margin_regime": bool(margin_regime),
        "eta": float(eta),
        "delta": float(delta),
        "gap_floor": float(gap_floor),
        "actual_gap": float(actual_gap),
        "gap_ok": bool(gap_ok),
        "p_match": p_match,
        "p_floor": float(p_floor),
        "prob_ok": bool(prob_ok),
        "n_negatives": n_neg,
    }


def margin_tight_instance(d: int, eta: float, n_negatives: int = 1):
    """Embeddings that attain the gap and probability floors exactly.

    The negative along (e_m - e_y) / ||e_m - e_y|| has cosine -sqrt(eta/2)
    with e_y, so delta = 1 + sqrt(eta/2) makes the precondition an equality
    and the realized gap equal to its floor.
    """
    if d < 2:
        raise RangeError("need at least two dimensions")
    if not (0.0 < eta < 2.0):
        raise RangeError(f"eta = {eta} outside (0, 2)")
    e_y = np.zeros(d)
    e_y[0] = 1.0
    # unit e_m at angle theta with cos(theta) = 1 - eta
    e_m = np.zeros(d)
    e_m[0] = 1.0 - eta
    e_m[1] = np.sqrt(1.0 - (1.0 - eta) ** 2)
    e_neg = _unit(e_m - e_y)
    delta = 1.0 + np.sqrt(eta / 2.0)
    return e_y, e_m, [e_neg] * n_negatives, delta


# ---------------------------------------------------------------------------
# random instances and suite runners
# ---------------------------------------------------------------------------

def random_sphere_walk(rng, n_steps: int, d_z: int, step: float = 0.35):
    """Correlated on-sphere trajectory: a projected Gaussian random walk."""
    raw = np.empty((n_steps, d_z))
    raw[0] = rng.standard_normal(d_z)
    for t in range(1, n_steps):
        raw[t] = raw[t - 1] + step * rng.standard_normal(d_z)
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    low = norms[:, 0] < 1e-6
    raw[low] = rng.standard_normal((int(low.sum()), d_z))
    return project_rows(raw)


def random_world(rng, ls_low: float = 0.5) -> SyntheticWorld:
    return make_world(
        state_dim=int(rng.integers(3, 8)),
        action_dim=int(rng.integers(2, 6)),
        d_z=int(rng.integers(2, 6)),
        target_L_s=float(rng.uniform(ls_low, 0.95)),
        target_L_z=float(rng.uniform(0.3, 1.5)),
        target_L_B=float(rng.uniform(0.5, 2.0)),
        seed=int(rng.integers(0, 2 ** 31)),
    )


def compression_instance(rng) -> dict:
    world = random_world(rng, ls_low=0.3)
    n_steps = int(rng.integers(20, 61))
    z = random_sphere_walk(rng, n_steps, world.d_z)
    m = int(rng.choice([2, 4, 8, 16]))
    s1 = 0.5 * rng.standard_normal(world.state_dim)
    return verify_compression_bound(world, z, m, s1)


def smoothing_instance(rng) -> dict:
    world = random_world(rng)
    span = int(rng.integers(2, 7))
    n_steps = int(rng.integers(span + 6, span + 40))
    z = random_sphere_walk(rng, n_steps, world.d_z)
    s1 = 0.5 * rng.standard_normal(world.state_dim)
    states = rollout(world, s1, z)
    cfg = ExtractionConfig(lookahead=span)
    try:
        return verify_smoothing_bound(world, cfg, states)
    except DegenerateRho:
        return {"ok": True, "degenerate_rho": True}


def margin_instance(rng) -> dict:
    d = int(rng.integers(4, 33))
    eta = float(rng.uniform(0.0005, 0.08))
    e_y = _unit(rng.standard_normal(d))
    # rotate a second unit vector to the requested eta
    perp = rng.standard_normal(d)
    perp -= (perp @ e_y) * e_y
    perp = _unit(perp)
    cos_m = 1.0 - eta
    e_m = cos_m * e_y + np.sqrt(1.0 - cos_m ** 2) * perp
    # the margin regime needs delta > eta + sqrt(2 eta); eta <= 0.08 keeps
    # room for a satisfiable delta < 1
    floor_delta = eta + np.sqrt(2.0 * eta)
    delta = float(rng.uniform(floor_delta + 0.05, min(1.3, floor_delta + 0.6)))
    n_neg = int(rng.integers(1, 9))
    negs = []
    while len(negs) < n_neg:
        v = _unit(rng.standard_normal(d))
        if float(e_y @ v) <= 1.0 - delta:
            negs.append(v)
    tau = float(rng.uniform(0.05, 1.0))
    return verify_margin_bound(e_y, e_m, negs, delta, tau)


def run_suites(seed: int = 0, n_compression: int = 500, n_smoothing: int = 200,
               n_margin: int = 500) -> dict:
    """Run every family on fresh random instances; returns counts and timing."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    results = {}
    for name, gen, count in (
        ("compression", compression_instance, n_compression),
        ("smoothing", smoothing_instance, n_smoothing),
        ("margin", margin_instance, n_margin),
    ):
        passed = 0
        failures = []
        for i in range(count):
            rep = gen(rng)
            if rep["ok"]:
                passed += 1
            elif len(failures) < 5:
                failures.append({"instance": i, **{
                    k: v for k, v in rep.items() if not isinstance(v, np.ndarray)
                }})
        results[name] = {"passed": passed, "total": count, "failures": failures}
    results["elapsed_seconds"] = time.perf_counter() - t0
    results["ok"] = all(
        results[k]["passed"] == results[k]["total"]
        for k in ("compression", "smoothing", "margin")
    )
    return results


def sweep_compression_grid(seed: int = 0, segment_counts=(2, 3, 4, 6, 8, 12),
                           n_trials: int = 10) -> list:
    """Bound-tightness rows over a grid of segment budgets, for plotting."""
    rng = np.random.default_rng(seed)
    rows = []
    for m in segment_counts:
        for trial in range(n_trials):
            world = random_world(rng)
            z = random_sphere_walk(rng, int(rng.integers(30, 61)), world.d_z)
            s1 = 0.5 * rng.standard_normal(world.state_dim)
            rep = verify_compression_bound(world, z, m, s1)
            rows.append({
                "m": m,
                "trial": trial,
                "L_s": world.L_s,
                "L_z": world.L_z,
                "total_variation": rep["total_variation"],
                "delta": rep["delta"],
                "max_error": rep["max_error"],
                "uniform_bound": rep["uniform_bound"],
                "tightness": rep["tightness"],
                "ok": rep["ok"],
            })
    return rows
