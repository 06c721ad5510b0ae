"""Variational compression of latent trajectories, aligned with text.

The encoder halves the sequence length at every strided level, so a stack of
``levels`` levels compresses time by 2^levels.  The posterior is a diagonal
Gaussian per compressed frame; sampling uses the reparameterisation
m = mu + sigma * noise so gradients reach the encoder.  The decoder mirrors
the encoder with nearest-neighbour upsampling and emits raw latent frames; it
does not re-project onto the sphere, reconstruction happens in the ambient
space.

The training loss combines reconstruction (plus a policy-divergence term that
pulls decoded latents toward action-equivalence with the originals), a KL to
the unit Gaussian prior, and a bidirectional contrastive alignment between
projected program frames and projected prompt tokens.  All gradients are
derived by hand; ``vbb_grad`` is validated against finite differences in the
test suite.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    CountMismatch,
    DegenerateBatch,
    DimensionMismatch,
    DivergenceDetected,
    LengthNotCompressible,
    NonUnitInput,
    RangeError,
    ShapeMismatch,
    ZeroNormInput,
)
from .nn import Adam, Conv1d, Linear, Module, ReLU, ResBlock, Upsample2


@dataclass(frozen=True)
class BottleneckConfig:
    """Architecture and loss weights for the behavioral bottleneck."""

    d_z: int
    d_m: int = 48
    d_e: int = 32
    width: int = 32
    levels: int = 3
    d_text: int = 32
    beta: float = 1e-4
    lambda_pi: float = 0.1
    lambda_sem: float = 0.35
    lambda_tok: float = 0.2
    lambda_frm: float = 0.2
    logit_scale_init: float = math.log(1.0 / 0.07)

    def __post_init__(self):
        for name in ("d_z", "d_m", "d_e", "width", "levels", "d_text"):
            if int(getattr(self, name)) < 1:
                raise RangeError(f"{name} must be >= 1")
        if self.beta < 0 or self.lambda_pi < 0 or self.lambda_sem < 0:
            raise RangeError("loss weights must be >= 0")
        if self.lambda_tok <= 0 or self.lambda_frm <= 0:
            raise RangeError("pooling temperatures must be > 0")

    @property
    def compression(self) -> int:
        return 2 ** self.levels

    def to_dict(self) -> dict:
        return {
            "d_z": self.d_z, "d_m": self.d_m, "d_e": self.d_e,
            "width": self.width, "levels": self.levels, "d_text": self.d_text,
            "beta": self.beta, "lambda_pi": self.lambda_pi,
            "lambda_sem": self.lambda_sem, "lambda_tok": self.lambda_tok,
            "lambda_frm": self.lambda_frm, "logit_scale_init": self.logit_scale_init,
        }

    @staticmethod
    def from_dict(d: dict) -> "BottleneckConfig":
        return BottleneckConfig(
            d_z=int(d["d_z"]), d_m=int(d["d_m"]), d_e=int(d["d_e"]),
            width=int(d["width"]), levels=int(d["levels"]), d_text=int(d["d_text"]),
            beta=float(d["beta"]), lambda_pi=float(d["lambda_pi"]),
            lambda_sem=float(d["lambda_sem"]), lambda_tok=float(d["lambda_tok"]),
            lambda_frm=float(d["lambda_frm"]),
            logit_scale_init=float(d["logit_scale_init"]),
        )


@dataclass(frozen=True)
class Posterior:
    """Diagonal Gaussian over compact program frames."""

    mu: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        if self.mu.shape != self.log_var.shape or self.mu.ndim != 2:
            raise ShapeMismatch(
                f"posterior shapes {self.mu.shape} vs {self.log_var.shape}"
            )

    @property
    def T_m(self) -> int:
        return self.mu.shape[0]

    @property
    def d_m(self) -> int:
        return self.mu.shape[1]


class Encoder(Module):
    def __init__(self, rng, cfg: BottleneckConfig):
        super().__init__()
        self.cfg = cfg
        self.in_proj = self.add_child("in", Linear(rng, cfg.d_z, cfg.width, gain=np.sqrt(2.0)))
        self.levels = []
        for i in range(cfg.levels):
            down = self.add_child(f"down{i}", Conv1d(rng, cfg.width, cfg.width, stride=2, gain=np.sqrt(2.0)))
            res = self.add_child(f"res{i}", ResBlock(rng, cfg.width))
            self.levels.append((down, res, ReLU()))
        self.mu_head = self.add_child("mu", Linear(rng, cfg.width, cfg.d_m))
        self.logvar_head = self.add_child("logvar", Linear(rng, cfg.width, cfg.d_m))
        # start the posterior tight so early reconstruction is not noise-bound
        self.logvar_head.b.value[...] = -4.0

    def forward(self, z: np.ndarray):
        h, c_in = self.in_proj.forward(z)
        caches = [c_in]
        for down, res, relu in self.levels:
            h, c_down = down.forward(h)
            h, c_relu = relu.forward(h)
            h, c_res = res.forward(h)
            caches.append((c_down, c_relu, c_res))
        mu, c_mu = self.mu_head.forward(h)
        log_var, c_lv = self.logvar_head.forward(h)
        caches.append((c_mu, c_lv))
        return mu, log_var, caches

    def backward(self, dmu: np.ndarray, dlog_var: np.ndarray, caches):
        c_mu, c_lv = caches[-1]
        dh = self.mu_head.backward(dmu, c_mu)
        dh = dh + self.logvar_head.backward(dlog_var, c_lv)
        for (down, res, relu), cache in zip(reversed(self.levels), reversed(caches[1:-1])):
            c_down, c_relu, c_res = cache
            dh = res.backward(dh, c_res)
            dh = relu.backward(dh, c_relu)
            dh = down.backward(dh, c_down)
        return self.in_proj.backward(dh, caches[0])


class Decoder(Module):
    def __init__(self, rng, cfg: BottleneckConfig):
        super().__init__()
        self.cfg = cfg
        self.in_proj = self.add_child("in", Linear(rng, cfg.d_m, cfg.width, gain=np.sqrt(2.0)))
        self.levels = []
        for i in range(cfg.levels):
            up = Upsample2()
            conv = self.add_child(f"conv{i}", Conv1d(rng, cfg.width, cfg.width, gain=np.sqrt(2.0)))
            res = self.add_child(f"res{i}", ResBlock(rng, cfg.width))
            self.levels.append((up, conv, res, ReLU()))
        self.out_head = self.add_child("out", Linear(rng, cfg.width, cfg.d_z))

    def forward(self, m: np.ndarray):
        h, c_in = self.in_proj.forward(m)
        caches = [c_in]
        for up, conv, res, relu in self.levels:
            h, c_up = up.forward(h)
            h, c_conv = conv.forward(h)
            h, c_relu = relu.forward(h)
            h, c_res = res.forward(h)
            caches.append((c_up, c_conv, c_relu, c_res))
        z_hat, c_out = self.out_head.forward(h)
        caches.append(c_out)
        return z_hat, caches

    def backward(self, dz_hat: np.ndarray, caches):
        dh = self.out_head.backward(dz_hat, caches[-1])
        for (up, conv, res, relu), cache in zip(reversed(self.levels), reversed(caches[1:-1])):
            c_up, c_conv, c_relu, c_res = cache
            dh = res.backward(dh, c_res)
            dh = relu.backward(dh, c_relu)
            dh = conv.backward(dh, c_conv)
            dh = up.backward(dh, c_up)
        return self.in_proj.backward(dh, caches[0])


class BottleneckModel(Module):
    """Encoder, decoder, the two alignment heads, and the logit scale."""

    def __init__(self, cfg: BottleneckConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.encoder = self.add_child("enc", Encoder(rng, cfg))
        self.decoder = self.add_child("dec", Decoder(rng, cfg))
        self.P_m = self.add_child("pm", Linear(rng, cfg.d_m, cfg.d_e))
        self.P_y = self.add_child("py", Linear(rng, cfg.d_text, cfg.d_e))
        self.alpha = self.add_param("alpha", np.array(cfg.logit_scale_init))

    @property
    def compression(self) -> int:
        return self.cfg.compression

    @property
    def gamma(self) -> float:
        return float(np.exp(self.alpha.value))


# ---------------------------------------------------------------------------
# encode / decode
# ---------------------------------------------------------------------------

def pad_to_multiple(z: np.ndarray, c: int):
    """Right-pad by repeating the final frame; returns (padded, n_real)."""
    n_real = z.shape[0]
    rem = n_real % c
    if rem == 0:
        return z, n_real
    extra = np.repeat(z[-1:], c - rem, axis=0)
    return np.concatenate([z, extra], axis=0), n_real


def _check_latents(model: BottleneckModel, z) -> np.ndarray:
    arr = np.asarray(z, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != model.cfg.d_z:
        raise DimensionMismatch(f"latents have shape {arr.shape}, want [T, {model.cfg.d_z}]")
    if not np.all(np.isfinite(arr)):
        raise DivergenceDetected("latents contain non-finite values")
    return arr


def encode(model: BottleneckModel, z, pad: bool = True) -> Posterior:
    """Posterior over compact program frames; T_m = ceil(T_z / compression)."""
    arr = _check_latents(model, z)
    c = model.compression
    if arr.shape[0] % c != 0:
        if not pad:
            raise LengthNotCompressible(
                f"length {arr.shape[0]} not divisible by {c} and padding is off"
            )
        arr, _ = pad_to_multiple(arr, c)
    mu, log_var, _ = model.encoder.forward(arr)
    return Posterior(mu=mu, log_var=log_var)


def sample_posterior(post: Posterior, noise: np.ndarray) -> np.ndarray:
    """Reparameterised draw m = mu + exp(log_var / 2) * noise."""
    noise = np.asarray(noise, dtype=float)
    if noise.shape != post.mu.shape:
        raise ShapeMismatch(f"noise shape {noise.shape} vs posterior {post.mu.shape}")
    return post.mu + np.exp(0.5 * post.log_var) * noise


def decode(model: BottleneckModel, m) -> np.ndarray:
    """Decode a compact program to latent frames ([T_m * compression, d_z])."""
    arr = np.asarray(m, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != model.cfg.d_m:
        raise DimensionMismatch(f"program has shape {arr.shape}, want [T_m, {model.cfg.d_m}]")
    z_hat, _ = model.decoder.forward(arr)
    return z_hat


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def reconstruction_loss(model: BottleneckModel, world, z, z_hat, states,
                        n_real: int | None = None) -> float:
    """Ambient-space MSE plus the policy divergence of decoded latents.

    Frames past ``n_real`` (padding) are masked out.  The policy term is
    teacher-forced: both latent sequences drive the policy along the same
    reference states, so per frame it is ||W_z (z_hat - z)||^2 / (2 sigma^2).
    """
    z = np.asarray(z, dtype=float)
    z_hat = np.asarray(z_hat, dtype=float)
    if z.shape != z_hat.shape:
        raise ShapeMismatch(f"latent shapes {z.shape} vs {z_hat.shape}")
    n = z.shape[0] if n_real is None else int(n_real)
    if not (1 <= n <= z.shape[0]):
        raise RangeError(f"n_real {n} outside [1, {z.shape[0]}]")
    states = np.asarray(states, dtype=float)
    if states.shape[0] < n:
        raise CountMismatch(f"need {n} states, got {states.shape[0]}")
    diff = z_hat[:n] - z[:n]
    mse = float((diff * diff).sum()) / n
    act_gap = diff @ world.W_z.T
    policy = float((act_gap * act_gap).sum()) / (2.0 * world.sigma_pi ** 2) / n
    return mse + model.cfg.lambda_pi * policy


def kl_prior_loss(post: Posterior) -> float:
    """Mean over frames and dims of the per-entry KL to the unit Gaussian."""
    var = np.exp(post.log_var)
    per_entry = 0.5 * (post.mu ** 2 + var - post.log_var - 1.0)
    return float(per_entry.mean())


def _normalize_rows(v: np.ndarray, floor: float = 1e-12):
    norms = np.linalg.norm(v, axis=1)
    if np.any(norms < floor):
        raise ZeroNormInput("projected embedding row has near-zero norm")
    return v / norms[:, None], norms


def project_program_frames(model: BottleneckModel, m) -> np.ndarray:
    """Unit-norm alignment embeddings of program frames."""
    v, _ = model.P_m.forward(np.asarray(m, dtype=float))
    unit, _ = _normalize_rows(v)
    return unit


def project_text_tokens(model: BottleneckModel, y) -> np.ndarray:
    """Unit-norm alignment embeddings of prompt token rows."""
    v, _ = model.P_y.forward(np.asarray(y, dtype=float))
    unit, _ = _normalize_rows(v)
    return unit


def _check_unit_rows(name: str, rows_list):
    for idx, rows in enumerate(rows_list):
        arr = np.asarray(rows, dtype=float)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ShapeMismatch(f"{name}[{idx}] must be a non-empty [n, d_e] array")
        norms = np.linalg.norm(arr, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise NonUnitInput(f"{name}[{idx}] rows deviate from unit norm")


def _similarity_forward(programs, texts, lambda_tok: float, lambda_frm: float):
    """R[i, j] plus the caches the backward pass needs."""
    b = len(programs)
    r_mat = np.empty((b, b))
    caches = [[None] * b for _ in range(b)]
    for i, prog in enumerate(programs):
        for j, text in enumerate(texts):
            cos = prog @ text.T  # [T, K]
            scaled = cos / lambda_tok
            peak = scaled.max(axis=1, keepdims=True)
            expd = np.exp(scaled - peak)
            mean_exp = expd.mean(axis=1)
            f_vec = lambda_tok * (peak[:, 0] + np.log(mean_exp))  # [T]
            a_mat = expd / expd.sum(axis=1, keepdims=True)  # softmax over tokens
            g = f_vec / lambda_frm
            g = g - g.max()
            w_vec = np.exp(g)
            w_vec /= w_vec.sum()
            r_mat[i, j] = float(w_vec @ f_vec)
            caches[i][j] = (a_mat, w_vec, f_vec)
    return r_mat, caches


def similarity_matrix(programs, texts, lambda_tok: float, lambda_frm: float) -> np.ndarray:
    """Frame-weighted token-pooled cosine similarity for each (program, text) pair.

    Token pooling is a soft maximum (temperature ``lambda_tok``) over the
    tokens of the text; frame weights are a softmax (temperature
    ``lambda_frm``) over the program's own pooled scores, so frames that
    match the text dominate the aggregate.
    """
    if lambda_tok <= 0 or lambda_frm <= 0:
        raise RangeError("pooling temperatures must be positive")
    if len(programs) != len(texts):
        raise CountMismatch(f"{len(programs)} programs vs {len(texts)} texts")
    if len(programs) == 0:
        raise DegenerateBatch("empty batch")
    _check_unit_rows("programs", programs)
    _check_unit_rows("texts", texts)
    r_mat, _ = _similarity_forward(
        [np.asarray(p, dtype=float) for p in programs],
        [np.asarray(t, dtype=float) for t in texts],
        lambda_tok, lambda_frm,
    )
    return r_mat


def _similarity_backward(programs, texts, caches, g_mat, lambda_tok, lambda_frm):
    """Push dL/dR back to the unit-norm program and text rows."""
    d_progs = [np.zeros_like(p) for p in programs]
    d_texts = [np.zeros_like(t) for t in texts]
    for i, prog in enumerate(programs):
        for j, text in enumerate(texts):
            g = g_mat[i, j]
            if g == 0.0:
                continue
            a_mat, w_vec, f_vec = caches[i][j]
            r_ij = float(w_vec @ f_vec)
            # dR/dF_t = w_t (1 + (F_t - R) / lambda_frm)
            dfd = g * w_vec * (1.0 + (f_vec - r_ij) / lambda_frm)  # [T]
            # dF_t/d cos_tk = a_tk
            dcos = dfd[:, None] * a_mat  # [T, K]
            d_progs[i] += dcos @ text
            d_texts[j] += dcos.T @ prog
    return d_progs, d_texts


def _softmax_rows(mat: np.ndarray) -> np.ndarray:
    shifted = mat - mat.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def contrastive_loss(r_mat: np.ndarray, gamma: float) -> float:
    """Symmetric cross-entropy over rows and columns of gamma * R."""
    loss, _, _ = _contrastive_forward(r_mat, gamma)
    return loss


def _contrastive_forward(r_mat: np.ndarray, gamma: float):
    r_mat = np.asarray(r_mat, dtype=float)
    if r_mat.ndim != 2 or r_mat.shape[0] != r_mat.shape[1]:
        raise ShapeMismatch(f"similarity matrix must be square, got {r_mat.shape}")
    b = r_mat.shape[0]
    if b < 2:
        raise DegenerateBatch("contrastive loss needs a batch of at least 2")
    if gamma <= 0:
        raise RangeError(f"logit scale must be positive, got {gamma}")
    s = gamma * r_mat
    p_rows = _softmax_rows(s)
    p_cols = _softmax_rows(s.T).T
    eye = np.arange(b)
    row_ce = -np.log(p_rows[eye, eye]).mean()
    col_ce = -np.log(p_cols[eye, eye]).mean()
    loss = 0.5 * (row_ce + col_ce)
    return float(loss), p_rows, p_cols


def _contrastive_backward(r_mat, gamma, p_rows, p_cols):
    """Returns (dL/dR, dL/dalpha) for loss = contrastive(R, gamma=e^alpha)."""
    b = r_mat.shape[0]
    identity = np.eye(b)
    ds = ((p_rows - identity) + (p_cols - identity)) / (2.0 * b)
    dr = gamma * ds
    dalpha = float((dr * r_mat).sum())
    return dr, dalpha


# ---------------------------------------------------------------------------
# assembled objective
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BatchItem:
    """One training example: latents, the states they were extracted from,
    and the prompt's token embedding rows."""

    latents: np.ndarray
    states: np.ndarray
    text_emb: np.ndarray


def batch_from_samples(samples, vocab) -> list:
    return [
        BatchItem(
            latents=s.latents,
            states=s.states,
            text_emb=vocab.embeddings[list(s.token_ids)],
        )
        for s in samples
    ]


def make_noises(model: BottleneckModel, batch, rng) -> list:
    """One standard-normal noise array per item, shaped like its posterior."""
    c = model.compression
    noises = []
    for item in batch:
        padded, _ = pad_to_multiple(item.latents, c)
        t_m = padded.shape[0] // c
        noises.append(rng.standard_normal((t_m, model.cfg.d_m)))
    return noises


def vbb_loss(model: BottleneckModel, world, batch, noises):
    """Total objective and its components for one batch (forward only)."""
    total, comps, _ = _vbb_forward(model, world, batch, noises)
    return total, comps


def _vbb_forward(model: BottleneckModel, world, batch, noises):
    cfg = model.cfg
    if len(batch) != len(noises):
        raise CountMismatch(f"{len(batch)} items vs {len(noises)} noises")
    if len(batch) < 2:
        raise DegenerateBatch("alignment needs a batch of at least 2")
    c = model.compression
    b = len(batch)

    rec_sum = 0.0
    kl_sum = 0.0
    item_caches = []
    prog_units = []
    text_units = []
    for item, noise in zip(batch, noises):
        z = _check_latents(model, item.latents)
        z_pad, n_real = pad_to_multiple(z, c)
        mu, log_var, enc_cache = model.encoder.forward(z_pad)
        if noise.shape != mu.shape:
            raise ShapeMismatch(f"noise {noise.shape} vs posterior {mu.shape}")
        sigma = np.exp(0.5 * log_var)
        m = mu + sigma * noise
        z_hat, dec_cache = model.decoder.forward(m)

        rec_sum += reconstruction_loss(model, world, z_pad, z_hat, item.states, n_real)
        var = np.exp(log_var)
        kl_sum += float((0.5 * (mu ** 2 + var - log_var - 1.0)).mean())

        v_m, pm_cache = model.P_m.forward(m)
        m_unit, m_norms = _normalize_rows(v_m)
        v_y, py_cache = model.P_y.forward(np.asarray(item.text_emb, dtype=float))
        y_unit, y_norms = _normalize_rows(v_y)
        prog_units.append(m_unit)
        text_units.append(y_unit)
        item_caches.append({
            "z_pad": z_pad, "n_real": n_real, "mu": mu, "log_var": log_var,
            "sigma": sigma, "noise": noise, "m": m, "z_hat": z_hat,
            "enc_cache": enc_cache, "dec_cache": dec_cache,
            "pm_cache": pm_cache, "m_norms": m_norms, "m_unit": m_unit,
            "py_cache": py_cache, "y_norms": y_norms, "y_unit": y_unit,
        })

    r_mat, sim_caches = _similarity_forward(prog_units, text_units,
                                            cfg.lambda_tok, cfg.lambda_frm)
    gamma = model.gamma
    sem, p_rows, p_cols = _contrastive_forward(r_mat, gamma)

    rec = rec_sum / b
    kl = kl_sum / b
    total = rec + cfg.beta * kl + cfg.lambda_sem * sem
    if not np.isfinite(total):
        raise DivergenceDetected("objective is non-finite")
    comps = {"total": float(total), "rec": float(rec), "kl": float(kl), "sem": float(sem)}
    fwd = {
        "item_caches": item_caches, "prog_units": prog_units,
        "text_units": text_units, "r_mat": r_mat, "sim_caches": sim_caches,
        "gamma": gamma, "p_rows": p_rows, "p_cols": p_cols,
    }
    return float(total), comps, fwd


def vbb_grad(model: BottleneckModel, world, batch, noises):
    """Forward plus hand-derived backward; accumulates into param grads."""
    cfg = model.cfg
    total, comps, fwd = _vbb_forward(model, world, batch, noises)
    b = len(batch)

    # semantic head: dL/dR and dL/dalpha
    dr, dalpha = _contrastive_backward(fwd["r_mat"], fwd["gamma"],
                                       fwd["p_rows"], fwd["p_cols"])
    dr = cfg.lambda_sem * dr
    model.alpha.grad += cfg.lambda_sem * dalpha
    d_prog_units, d_text_units = _similarity_backward(
        fwd["prog_units"], fwd["text_units"], fwd["sim_caches"], dr,
        cfg.lambda_tok, cfg.lambda_frm,
    )

    w_zt_w_z = world.W_z.T @ world.W_z
    inv_two_var = 1.0 / (2.0 * world.sigma_pi ** 2)
    for item, cache, d_munit, d_yunit in zip(batch, fwd["item_caches"],
                                             d_prog_units, d_text_units):
        n_real = cache["n_real"]
        diff = cache["z_hat"][:n_real] - cache["z_pad"][:n_real]
        dz_hat = np.zeros_like(cache["z_hat"])
        dz_hat[:n_real] = (2.0 * diff + cfg.lambda_pi * 2.0 * inv_two_var * (diff @ w_zt_w_z)) / n_real
        dz_hat /= b
        dm = model.decoder.backward(dz_hat, cache["dec_cache"])

        # unit-normalisation backward: dL/dv = (g - (g . u) u) / ||v||
        u = cache["m_unit"]
        g = d_munit
        dv_m = (g - (g * u).sum(axis=1, keepdims=True) * u) / cache["m_norms"][:, None]
        dm = dm + model.P_m.backward(dv_m, cache["pm_cache"])

        uy = cache["y_unit"]
        gy = d_yunit
        dv_y = (gy - (gy * uy).sum(axis=1, keepdims=True) * uy) / cache["y_norms"][:, None]
        model.P_y.backward(dv_y, cache["py_cache"])

        mu, log_var, sigma, noise = (cache["mu"], cache["log_var"],
                                     cache["sigma"], cache["noise"])
        n_entries = mu.size
        kl_scale = cfg.beta / (b * n_entries)
        dmu = dm + kl_scale * mu
        dlog_var = dm * noise * 0.5 * sigma + kl_scale * 0.5 * (np.exp(log_var) - 1.0)
        model.encoder.backward(dmu, dlog_var, cache["enc_cache"])

    return total, comps


# ---------------------------------------------------------------------------
# embeddings reused by generation, metrics and retrieval
# ---------------------------------------------------------------------------

def embed_program(model: BottleneckModel, m) -> np.ndarray:
    """Single unit vector for a whole program: normalised mean of frame embeddings."""
    frames = project_program_frames(model, m)
    mean = frames.mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm < 1e-12:
        raise ZeroNormInput("program embedding collapsed to zero")
    return mean / norm


def embed_text(model: BottleneckModel, y) -> np.ndarray:
    """Single unit vector for a prompt: normalised mean of token embeddings."""
    tokens = project_text_tokens(model, y)
    mean = tokens.mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm < 1e-12:
        raise ZeroNormInput("text embedding collapsed to zero")
    return mean / norm


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-5
    weight_decay: float = 5e-4
    warmup: int = 200
    batch_size: int = 32
    steps: int = 1000

    def __post_init__(self):
        if self.lr <= 0 or self.steps < 1 or self.batch_size < 2:
            raise RangeError("invalid training configuration")

    def to_dict(self) -> dict:
        return {"lr": self.lr, "weight_decay": self.weight_decay,
                "warmup": self.warmup, "batch_size": self.batch_size,
                "steps": self.steps}


def train_bottleneck(model: BottleneckModel, world, vocab, samples,
                     train_cfg: TrainConfig, seed: int, history_hook=None):
    """Adam training loop; deterministic for a fixed seed.

    Returns the per-step loss history as a list of dicts.  ``history_hook``
    (if given) is called with each record as it is produced.
    """
    if len(samples) < train_cfg.batch_size:
        raise DegenerateBatch(
            f"{len(samples)} samples cannot fill batches of {train_cfg.batch_size}"
        )
    items = batch_from_samples(samples, vocab)
    rng = np.random.default_rng(seed)
    opt = Adam(model.params(), lr=train_cfg.lr, weight_decay=train_cfg.weight_decay,
               warmup=train_cfg.warmup)
    history = []
    n = len(items)
    for step_idx in range(train_cfg.steps):
        idx = rng.choice(n, size=train_cfg.batch_size, replace=False)
        batch = [items[i] for i in idx]
        noises = make_noises(model, batch, rng)
        opt.zero_grad()
        total, comps = vbb_grad(model, world, batch, noises)
        if not np.isfinite(total):
            raise DivergenceDetected(f"loss diverged at step {step_idx}")
        opt.step()
        record = {"step": step_idx, **comps}
        history.append(record)
        if history_hook is not None:
            history_hook(record)
    return history
