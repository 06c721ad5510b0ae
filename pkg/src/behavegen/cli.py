"""Command-line interface for the text-to-behavior pipeline.

Subcommands::

    gen-data           draw the synthetic corpus and write it as JSON
    train-vbb          train the variational bottleneck on a corpus
    train-flow         train the flow generator against a frozen bottleneck
    generate           one program for the whole prompt (single shot)
    compose            stage-wise generation with junction crossfades
    eval               reconstruction / retrieval / prototype report
    verify-bounds      run the analytic-guarantee suites
    sweep-compression  action-mismatch cost across compression factors

Exit codes: 0 success, 2 configuration or artifact error, 3 numeric failure,
4 a verified bound was violated.  All commands are deterministic for a fixed
seed; BEHAVE_SEED overrides the config seed.
"""

import argparse
import dataclasses
import sys

import numpy as np

from .bottleneck import (
    BottleneckConfig,
    BottleneckModel,
    decode,
    embed_text,
    encode,
    project_program_frames,
    project_text_tokens,
    similarity_matrix,
    train_bottleneck,
)
from .composition import generate_composed, generate_single_shot, split_prompt
from .config import load_run_config
from .errors import (
    BehavegenError,
    BoundaryOutOfRange,
    ConfigInvalid,
    CountMismatch,
    DegenerateBatch,
    DimensionMismatch,
    EmptyClause,
    InvalidSpec,
    LengthNotCompressible,
    MissingArtifact,
    OverlapTooLarge,
    RangeError,
    ShapeMismatch,
    TooFewSamples,
    UnknownToken,
)
from .flow import FlowConfig, FlowModel, euler_sample, train_flow
from .metrics import EvalReport, diversity, prototype_match_rate
from .serialization import (
    append_jsonl,
    load_checkpoint,
    read_json,
    save_checkpoint,
    write_json,
)
from .theory import run_suites, sweep_compression_grid
from .world import (
    DatasetSpec,
    ExtractionConfig,
    action_kl,
    dataset_from_dict,
    dataset_to_dict,
    generate_dataset,
    make_vocabulary,
    make_world,
    world_from_config,
)

_CONFIG_ERRORS = (
    ConfigInvalid, InvalidSpec, MissingArtifact, UnknownToken, EmptyClause,
    RangeError, OverlapTooLarge, CountMismatch, ShapeMismatch,
    DimensionMismatch, LengthNotCompressible, DegenerateBatch, TooFewSamples,
    BoundaryOutOfRange, OSError,
)


def _fmt_cell(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _write_csv(path: str, rows, columns) -> None:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt_cell(row[c]) for c in columns))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _read_dataset(path: str):
    return dataset_from_dict(read_json(path))


def _build_world_and_vocab(cfg):
    world = make_world(**dataclasses.asdict(cfg.world))
    spec = cfg.dataset
    vocab = make_vocabulary(spec.behaviors, spec.separator, spec.d_text,
                            spec.embed_seed)
    return world, spec, vocab


def _load_bottleneck(prefix: str):
    """Rebuild the bottleneck plus its self-describing data context."""
    manifest, params = load_checkpoint(prefix)
    hyper = manifest["hyperparams"]
    if hyper.get("kind") != "bottleneck":
        raise MissingArtifact(f"{prefix} is not a bottleneck checkpoint")
    bcfg = BottleneckConfig.from_dict(hyper["config"])
    model = BottleneckModel(bcfg, seed=0)
    model.load_values(params)
    world = world_from_config(hyper["world"])
    spec = DatasetSpec.from_dict(hyper["dataset"])
    extraction = ExtractionConfig(
        lookahead=int(hyper["extraction"]["lookahead"]),
        norm_floor=float(hyper["extraction"]["norm_floor"]),
    )
    vocab = make_vocabulary(spec.behaviors, spec.separator, spec.d_text,
                            spec.embed_seed)
    return model, world, spec, extraction, vocab


def _load_flow(prefix: str) -> FlowModel:
    manifest, params = load_checkpoint(prefix)
    hyper = manifest["hyperparams"]
    if hyper.get("kind") != "flow":
        raise MissingArtifact(f"{prefix} is not a flow checkpoint")
    model = FlowModel(FlowConfig.from_dict(hyper["config"]), seed=0)
    model.load_values(params)
    return model


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = load_run_config(args.config)
    world, spec, vocab = _build_world_and_vocab(cfg)
    samples = generate_dataset(world, cfg.extraction, spec, vocab,
                               seed=cfg.seed, workers=args.threads)
    write_json(args.out, dataset_to_dict(world, cfg.extraction, spec,
                                         cfg.seed, samples))
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def _train_split(samples, holdout: int):
    if holdout < 0 or holdout >= len(samples):
        raise RangeError(
            f"holdout {holdout} out of range for {len(samples)} samples")
    return samples[:len(samples) - holdout]


def cmd_train_vbb(args) -> int:
    cfg = load_run_config(args.config)
    world, extraction, spec, vocab, _, samples = _read_dataset(args.data)
    train_samples = _train_split(samples, args.holdout)
    bcfg = cfg.bottleneck_config(d_z=world.d_z, d_text=spec.d_text)
    model = BottleneckModel(bcfg, seed=cfg.seed)
    hook = (lambda rec: append_jsonl(args.history, rec)) if args.history else None
    history = train_bottleneck(model, world, vocab, train_samples,
                               cfg.vbb_train, seed=cfg.seed, history_hook=hook)
    save_checkpoint(args.out, model.export_values(), {
        "kind": "bottleneck",
        "config": bcfg.to_dict(),
        "world": world.to_config(),
        "dataset": spec.to_dict(),
        "extraction": extraction.to_dict(),
        "train": dataclasses.asdict(cfg.vbb_train),
        "seed": cfg.seed,
    })
    print(f"trained bottleneck for {len(history)} steps; "
          f"final loss {history[-1]['total']:.6f}; saved to {args.out}")
    return 0


def cmd_train_flow(args) -> int:
    cfg = load_run_config(args.config)
    _, _, spec, vocab, _, samples = _read_dataset(args.data)
    train_samples = _train_split(samples, args.holdout)
    bottleneck, world, _, _, _ = _load_bottleneck(args.vbb)
    fcfg = cfg.flow_config(d_z=world.d_z, d_text=spec.d_text)
    model = FlowModel(fcfg, seed=cfg.seed)
    hook = (lambda rec: append_jsonl(args.history, rec)) if args.history else None
    history = train_flow(model, bottleneck, vocab, train_samples,
                         cfg.flow_train, seed=cfg.seed, history_hook=hook)
    save_checkpoint(args.out, model.export_values(), {
        "kind": "flow",
        "config": fcfg.to_dict(),
        "train": dataclasses.asdict(cfg.flow_train),
        "seed": cfg.seed,
    })
    print(f"trained flow for {len(history)} steps; "
          f"final loss {history[-1]['total']:.6f}; saved to {args.out}")
    return 0


def _rollout_to_dict(prompt: str, mode: str, seed: int, out) -> dict:
    return {
        "prompt": prompt,
        "mode": mode,
        "seed": seed,
        "boundaries": list(out.boundaries),
        "stage_lengths": list(out.stage_lengths),
        "latents": out.latents,
        "states": out.states,
    }


def cmd_generate(args) -> int:
    cfg = load_run_config(args.config)
    bottleneck, world, _, _, vocab = _load_bottleneck(args.vbb)
    flow = _load_flow(args.flow)
    ids = vocab.encode(args.prompt)
    n_clauses = len(split_prompt(ids, vocab.separator_id))
    seed = cfg.seed if args.seed is None else args.seed
    gen = cfg.generation
    out = generate_single_shot(
        flow, bottleneck, vocab, world, ids, t_m=gen.t_m * n_clauses,
        sampler=cfg.sampler, seed=seed, init_state_scale=gen.init_state_scale,
    )
    write_json(args.out, _rollout_to_dict(args.prompt, "single-shot", seed, out))
    print(f"generated {out.latents.shape[0]} latent frames "
          f"({n_clauses} clauses, single shot) -> {args.out}")
    return 0


def cmd_compose(args) -> int:
    cfg = load_run_config(args.config)
    bottleneck, world, _, _, vocab = _load_bottleneck(args.vbb)
    flow = _load_flow(args.flow)
    ids = vocab.encode(args.prompt)
    seed = cfg.seed if args.seed is None else args.seed
    gen = cfg.generation
    out = generate_composed(
        flow, bottleneck, vocab, world, ids, t_m=gen.t_m,
        sampler=cfg.sampler, seed=seed, overlap=gen.overlap,
        in_place=gen.in_place, init_state_scale=gen.init_state_scale,
    )
    write_json(args.out, _rollout_to_dict(args.prompt, "composed", seed, out))
    print(f"composed {len(out.stage_lengths)} stages into "
          f"{out.latents.shape[0]} latent frames -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def reconstruction_mse(model: BottleneckModel, samples) -> float:
    """Mean squared latent reconstruction error through the posterior mean."""
    total = 0.0
    count = 0
    for s in samples:
        post = encode(model, s.latents)
        z_hat = decode(model, post.mu)[:s.latents.shape[0]]
        diff = z_hat - s.latents
        total += float((diff * diff).sum())
        count += diff.size
    return total / count


def distinct_prompt_subset(samples, limit: int):
    """First ``limit`` samples with pairwise-distinct prompt multisets.

    Mean-pooled text embeddings cannot tell apart two orderings of the same
    words, so retrieval is scored over prompts that differ as bags of tokens.
    """
    seen = set()
    out = []
    for s in samples:
        key = tuple(sorted(s.token_ids))
        if key in seen:
            continue
        seen.add(key)
        out.append(s)
        if len(out) == limit:
            break
    if len(out) < limit:
        raise TooFewSamples(
            f"only {len(out)} distinct prompts available, need {limit}"
        )
    return out


def retrieval_scores(model: BottleneckModel, vocab, samples) -> np.ndarray:
    """Pairwise program-text scores in the learned joint space.

    Uses the same token-soft-max / frame-soft-max pooled similarity the
    alignment objective trains, with posterior means as the program side.
    """
    progs = []
    texts = []
    for s in samples:
        post = encode(model, s.latents)
        progs.append(project_program_frames(model, post.mu))
        texts.append(project_text_tokens(model, vocab.embeddings[list(s.token_ids)]))
    return similarity_matrix(progs, texts, model.cfg.lambda_tok,
                             model.cfg.lambda_frm)


def training_prototypes(samples, n_behaviors: int, d_z: int) -> np.ndarray:
    """Per-behavior reference directions: the normalised mean latent over each
    behavior's single-stage training samples."""
    sums = np.zeros((n_behaviors, d_z))
    counts = np.zeros(n_behaviors, dtype=int)
    for s in samples:
        if len(s.token_ids) == 1:
            b = s.token_ids[0]
            sums[b] += s.latents.mean(axis=0)
            counts[b] += 1
    if (counts == 0).any():
        missing = [b for b in range(n_behaviors) if counts[b] == 0]
        raise TooFewSamples(f"no single-stage samples for behaviors {missing}")
    norms = np.linalg.norm(sums, axis=1, keepdims=True)
    if (norms < 1e-12).any():
        raise TooFewSamples("a behavior's mean latent collapsed to zero")
    return sums / norms


def generation_study(flow, bottleneck, vocab, world, spec, sampler, t_m: int,
                     seed: int, protos: np.ndarray, per_behavior: int = 16):
    """Generate each single-behavior prompt repeatedly and score how often the
    decoded latents' nearest training prototype is the prompted one, plus the
    spread of the generations in the joint embedding space."""
    mean_latents = []
    expected = []
    embeddings = []
    rng = np.random.default_rng(seed)
    for b, word in enumerate(spec.behaviors):
        y_vec = embed_text(bottleneck, vocab.embeddings[list(vocab.encode(word))])
        for _ in range(per_behavior):
            noise = rng.standard_normal((t_m, bottleneck.cfg.d_m))
            m = euler_sample(flow, noise, sampler, y_vec=y_vec)
            z = decode(bottleneck, m)
            mean_latents.append(z.mean(axis=0))
            expected.append(b)
            frames = project_program_frames(bottleneck, m)
            embeddings.append(frames.mean(axis=0))
    match = prototype_match_rate(np.stack(mean_latents), expected, protos)
    div = diversity(np.stack(embeddings))
    return match, div


def _ranked_hits(sims: np.ndarray, k: int) -> float:
    order = np.argsort(-sims, axis=1, kind="stable")
    hits = sum(int(i in order[i, :k]) for i in range(sims.shape[0]))
    return hits / sims.shape[0]


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config)
    _, _, _, _, _, samples = _read_dataset(args.data)
    bottleneck, world, spec, extraction, vocab = _load_bottleneck(args.vbb)
    flow = _load_flow(args.flow)

    if args.n_eval < 1 or args.n_eval > len(samples):
        raise RangeError(f"n_eval {args.n_eval} out of range")
    eval_samples = samples[-args.n_eval:]
    recon = reconstruction_mse(bottleneck, eval_samples)
    baseline_model = BottleneckModel(bottleneck.cfg, seed=cfg.seed)
    baseline = reconstruction_mse(baseline_model, eval_samples)

    retrieval_set = distinct_prompt_subset(samples, args.retrieval_batch)
    sims = retrieval_scores(bottleneck, vocab, retrieval_set)
    top1 = _ranked_hits(sims, 1)
    top5 = _ranked_hits(sims, min(5, len(retrieval_set)))

    protos = training_prototypes(_train_split(samples, args.holdout),
                                 len(spec.behaviors), world.d_z)
    match, div = generation_study(flow, bottleneck, vocab, world, spec,
                                  cfg.sampler, cfg.generation.t_m, cfg.seed,
                                  protos)

    report = EvalReport(
        n_samples=len(eval_samples),
        recon_mse=recon,
        baseline_mse=baseline,
        retrieval_top1=top1,
        retrieval_top5=top5,
        prototype_match=match,
        diversity=div,
    )
    write_json(args.out, report.to_dict())
    if args.emit_plot_data:
        rows = []
        for i, s in enumerate(eval_samples):
            post = encode(bottleneck, s.latents)
            z_hat = decode(bottleneck, post.mu)[:s.latents.shape[0]]
            rows.append({
                "index": i,
                "frames": s.latents.shape[0],
                "recon_mse": float(((z_hat - s.latents) ** 2).mean()),
            })
        _write_csv(args.emit_plot_data, rows, ("index", "frames", "recon_mse"))
    print(f"recon {recon:.5f} (baseline {baseline:.5f}), "
          f"top-1 {top1:.3f}, top-5 {top5:.3f}, "
          f"prototype match {match:.3f}, diversity {div:.4f}")
    return 0


def cmd_verify_bounds(args) -> int:
    out = run_suites(seed=args.seed, n_compression=args.n_compression,
                     n_smoothing=args.n_smoothing, n_margin=args.n_margin)
    for name in ("compression", "smoothing", "margin"):
        rep = out[name]
        flag = "PASS" if rep["passed"] == rep["total"] else "FAIL"
        print(f"{flag} {name} {rep['passed']}/{rep['total']}")
    print(f"elapsed {out['elapsed_seconds']:.2f}s")
    if args.out:
        write_json(args.out, out)
    if args.emit_plot_data:
        rows = sweep_compression_grid(seed=args.seed)
        _write_csv(args.emit_plot_data, rows,
                   ("m", "trial", "L_s", "L_z", "total_variation", "delta",
                    "max_error", "uniform_bound", "tightness", "ok"))
    return 0 if out["ok"] else 4


def compression_sweep(cfg, world, spec, vocab, train_samples, eval_samples,
                      budgets):
    """Train one bottleneck per compression factor under an identical budget
    and measure the policy mismatch its reconstructions cause."""
    rows = []
    for c in budgets:
        levels = int(np.log2(c))
        if 2 ** levels != c or levels < 1:
            raise ConfigInvalid(f"compression {c} is not a power of two >= 2")
        base = cfg.bottleneck_config(d_z=world.d_z, d_text=spec.d_text).to_dict()
        base["levels"] = levels
        bcfg = BottleneckConfig.from_dict(base)
        model = BottleneckModel(bcfg, seed=cfg.seed)
        history = train_bottleneck(model, world, vocab, train_samples,
                                   cfg.vbb_train, seed=cfg.seed)
        kls = []
        for s in eval_samples:
            post = encode(model, s.latents)
            z_hat = decode(model, post.mu)[:s.latents.shape[0]]
            kls.append(action_kl(world, s.states, s.latents, z_hat))
        rows.append({
            "compression": c,
            "levels": levels,
            "mean_action_kl": float(np.mean(kls)),
            "final_loss": history[-1]["total"],
            "n_eval": len(kls),
        })
    return rows


def cmd_sweep_compression(args) -> int:
    cfg = load_run_config(args.config)
    world, extraction, spec, vocab, _, samples = _read_dataset(args.data)
    budgets = []
    for tok in args.budgets.split(","):
        try:
            budgets.append(int(tok))
        except ValueError as exc:
            raise ConfigInvalid(f"bad compression budget {tok!r}") from exc
    train_samples = _train_split(samples, args.holdout)
    if args.n_eval < 1 or args.n_eval > len(samples):
        raise RangeError(f"n_eval {args.n_eval} out of range")
    rows = compression_sweep(cfg, world, spec, vocab, train_samples,
                             samples[-args.n_eval:], budgets)
    write_json(args.out, {"budgets": budgets, "rows": rows})
    if args.emit_plot_data:
        _write_csv(args.emit_plot_data, rows,
                   ("compression", "levels", "mean_action_kl", "final_loss",
                    "n_eval"))
    for row in rows:
        print(f"compression {row['compression']:3d}: "
              f"action KL {row['mean_action_kl']:.6f}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="behavegen",
        description="text-conditioned behavior generation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="draw the synthetic corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-vbb", help="train the variational bottleneck")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--history", default=None, help="loss history JSONL path")
    p.add_argument("--holdout", type=int, default=0,
                   help="exclude the last N samples from training")
    p.set_defaults(func=cmd_train_vbb)

    p = sub.add_parser("train-flow", help="train the program generator")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--vbb", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--history", default=None)
    p.add_argument("--holdout", type=int, default=0,
                   help="exclude the last N samples from training")
    p.set_defaults(func=cmd_train_flow)

    p = sub.add_parser("generate", help="single-shot generation for a prompt")
    p.add_argument("--config", required=True)
    p.add_argument("--vbb", required=True)
    p.add_argument("--flow", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("compose", help="stage-wise generation for a prompt")
    p.add_argument("--config", required=True)
    p.add_argument("--vbb", required=True)
    p.add_argument("--flow", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("eval", help="reconstruction / retrieval / prototype report")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--vbb", required=True)
    p.add_argument("--flow", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-eval", type=int, default=64)
    p.add_argument("--retrieval-batch", type=int, default=32)
    p.add_argument("--holdout", type=int, default=0,
                   help="prototype references come from the first N-holdout samples")
    p.add_argument("--emit-plot-data", default=None, help="per-sample CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify-bounds", help="run the analytic-guarantee suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-compression", type=int, default=500)
    p.add_argument("--n-smoothing", type=int, default=200)
    p.add_argument("--n-margin", type=int, default=500)
    p.add_argument("--out", default=None, help="JSON report path")
    p.add_argument("--emit-plot-data", default=None, help="tightness CSV path")
    p.set_defaults(func=cmd_verify_bounds)

    p = sub.add_parser("sweep-compression",
                       help="action mismatch across compression factors")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--budgets", default="8,16",
                   help="comma-separated compression factors")
    p.add_argument("--out", required=True)
    p.add_argument("--n-eval", type=int, default=32)
    p.add_argument("--holdout", type=int, default=0,
                   help="exclude the last N samples from training")
    p.add_argument("--emit-plot-data", default=None)
    p.set_defaults(func=cmd_sweep_compression)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BehavegenError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
