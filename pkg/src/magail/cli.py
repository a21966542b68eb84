"""Batch entry points: ``python -m magail <command> ...``.

Exit codes: 0 success, 1 other failure, 2 invalid config, 3 missing
dataset, 4 dimension mismatch, 5 index out of range. ``MAGAIL_RUN_DIR``
replaces the working directory as the root for relative output paths.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import agents, evaluation, training
from . import memory as mem
from .config import RunConfig, load_config
from .laneworld import PERSONAS, DimensionError, TrackSpec, load_dataset, record_demos, track_from_header
from .numerics import ad
from .training import ConfigError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DATASET, EXIT_DIMS, EXIT_INDEX = 0, 1, 2, 3, 4, 5


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def output_root() -> Path:
    return Path(os.environ.get("MAGAIL_RUN_DIR", "."))


def out_path(p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else output_root() / p


def _load_demos(path):
    if path is None:
        raise CommandError(EXIT_DATASET, "no dataset given")
    path = Path(path)
    if not path.is_file():
        raise CommandError(EXIT_DATASET, f"dataset not found: {path}")
    try:
        return load_dataset(path)
    except DimensionError as exc:
        raise CommandError(EXIT_DIMS, str(exc)) from None


def _config(path) -> RunConfig:
    try:
        return load_config(path)
    except ConfigError as exc:
        raise CommandError(EXIT_CONFIG, f"invalid config field {exc}") from None
    except OSError as exc:
        raise CommandError(EXIT_CONFIG, str(exc)) from None


def _override(cfg: RunConfig, args) -> RunConfig:
    changes = {k: getattr(args, k) for k in ("iterations", "seed", "ablation")
               if getattr(args, k, None) is not None}
    if not changes:
        return cfg
    try:
        return replace(cfg, train=replace(cfg.train, **changes).validate())
    except ConfigError as exc:
        raise CommandError(EXIT_CONFIG, f"invalid config field {exc}") from None


# ---------------------------------------------------------------------------
# commands


def cmd_demo(args) -> int:
    names = [n.strip() for n in args.personas.split(",") if n.strip()]
    bad = [n for n in names if n not in PERSONAS]
    if bad or not names:
        raise CommandError(EXIT_FAIL, f"unknown persona(s) {bad}; choose from {sorted(PERSONAS)}")
    if args.episodes < 0 or args.steps < 1:
        raise CommandError(EXIT_FAIL, "--episodes must be >= 0 and --steps >= 1")
    path = out_path(args.out)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        ds = record_demos(TrackSpec(), [PERSONAS[n] for n in names], args.episodes, args.steps,
                          args.seed, path)
    except OSError as exc:
        raise CommandError(EXIT_FAIL, f"cannot write {path}: {exc}") from None
    print(f"wrote {len(ds)} trajectories to {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _override(_config(args.config), args)
    dataset = Path(args.dataset) if args.dataset else cfg.dataset
    ds = _load_demos(dataset)
    run_dir = out_path(args.run_dir or cfg.run_dir or
                       f"runs/{cfg.train.ablation}-seed{cfg.train.seed}")
    track = track_from_header(ds.header)
    _check_dataset(ds, cfg.train.episode_len)
    res = training.train(cfg.train, ds.trajectories, track, run_dir, dataset)
    (run_dir / "run_config.json").write_text(json.dumps(_run_config_dict(cfg, dataset, run_dir),
                                                        indent=2, sort_keys=True) + "\n")
    print(f"trained {cfg.train.ablation} for {len(res.metrics)} iterations -> {run_dir}")
    return EXIT_OK


def _run_config_dict(cfg: RunConfig, dataset, run_dir) -> dict:
    d = cfg.to_dict()
    d["paths"] = {"dataset": str(dataset), "run_dir": str(run_dir)}
    return d


def _check_dataset(ds, T: int) -> None:
    short = [i for i, t in enumerate(ds.trajectories) if len(t) < T]
    if short:
        raise CommandError(EXIT_DIMS, f"trajectories {short[:5]} are shorter than episode_len={T}")


def _policy(args):
    try:
        return training.load_policy(args.checkpoint)
    except FileNotFoundError:
        raise CommandError(EXIT_FAIL, f"checkpoint not found: {args.checkpoint}") from None


def cmd_eval(args) -> int:
    ds = _load_demos(args.dataset)
    track = track_from_header(ds.header)
    if args.expert:
        if args.expert not in PERSONAS:
            raise CommandError(EXIT_FAIL, f"unknown persona {args.expert!r}")
        trajs = record_demos(track, [PERSONAS[args.expert]], args.episodes, args.steps,
                             args.seed).trajectories
        label = args.expert
    else:
        if not args.checkpoint:
            raise CommandError(EXIT_FAIL, "eval needs --checkpoint or --expert")
        policy = _policy(args)
        try:
            training.check_dimensions(policy, ds.header.get("feature_dim"), ds.header.get("action_dim"))
            if args.config:
                cfg = _config(args.config).train
                if (cfg.embed_dim, cfg.global_slots) != (policy.config.embed_dim,
                                                         policy.config.global_slots):
                    raise ad.ShapeError(
                        f"config wants embed_dim={cfg.embed_dim}, k_global={cfg.global_slots}; "
                        f"checkpoint has {policy.config.embed_dim}, {policy.config.global_slots}")
        except ad.ShapeError as exc:
            raise CommandError(EXIT_DIMS, f"dimension mismatch: {exc}") from None
        trajs = training.simulate(policy, track, args.episodes, args.steps, args.seed, args.greedy)
        label = policy.config.ablation
    rep = evaluation.report(trajs, ds.trajectories)
    rep.meta.update({"episodes": args.episodes, "steps": args.steps, "seed": args.seed,
                     "greedy": bool(args.greedy), "source": label})
    out = out_path(args.out)
    training.write_report(out, rep, label)
    print(rep.to_table(label))
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _override(_config(args.config), args)
    dataset = Path(args.dataset) if args.dataset else cfg.dataset
    ds = _load_demos(dataset)
    _check_dataset(ds, cfg.train.episode_len)
    out = out_path(args.out or cfg.run_dir or "runs/ablation")
    steps = args.steps or cfg.eval["steps"] or cfg.train.episode_len
    episodes = args.episodes or cfg.eval["episodes"]
    try:
        training.ablate(cfg.train, ds.trajectories, track_from_header(ds.header), out, episodes,
                        steps, cfg.eval["seed"], dataset)
    except training.AblationError as exc:
        raise CommandError(EXIT_FAIL, str(exc)) from None
    print((out / "ablation.csv").read_text(), end="")
    return EXIT_OK


INSPECT_HEADER = ("step", "alpha_entropy", "top_slot", "dispersion")


def inspect_rows(policy: training.Policy, traj) -> list[tuple]:
    """Per-step local attention entropy, most attended slot and dispersion penalty."""
    spec = policy.spec
    if not spec.use_local:
        raise CommandError(EXIT_FAIL, f"variant {policy.config.ablation!r} has no local memory")
    global_M = None if policy.global_state is None else policy.global_state.M
    feats = traj.features[None]
    _, m_local, alphas = agents.encode(policy.params.view(), spec, feats, global_M, keep_alpha=True)
    disp = training.dispersion_series(m_local)[0]
    rows = []
    for t, alpha in enumerate(alphas):
        a = alpha[0]
        rows.append((t, float(mem.entropy(a)), int(np.argmax(a)), float(disp[t])))
    return rows


def cmd_inspect_memory(args) -> int:
    ds = _load_demos(args.dataset)
    policy = _policy(args)
    try:
        training.check_dimensions(policy, ds.header.get("feature_dim"), ds.header.get("action_dim"))
    except ad.ShapeError as exc:
        raise CommandError(EXIT_DIMS, f"dimension mismatch: {exc}") from None
    if not 0 <= args.index < len(ds):
        raise CommandError(EXIT_INDEX, f"trajectory index {args.index} out of range [0, {len(ds)})")
    rows = inspect_rows(policy, ds.trajectories[args.index])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(INSPECT_HEADER)
    for t, h, j, d in rows:
        w.writerow((t, repr(h), j, repr(d)))
    if args.out:
        path = out_path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="magail", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("demo", help="record scripted expert demonstrations")
    p.add_argument("--personas", default="aggressive,yielding")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_demo)

    for name, func, help_ in (("train", cmd_train, "BC initialisation plus adversarial training"),
                              ("ablate", cmd_ablate, "train and evaluate the ablation variants")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config")
        p.add_argument("--dataset")
        p.add_argument("--ablation", choices=training.ABLATIONS)
        p.add_argument("--iterations", type=int)
        p.add_argument("--seed", type=int)
        if name == "train":
            p.add_argument("--run-dir")
        else:
            p.add_argument("--out")
            p.add_argument("--episodes", type=int)
            p.add_argument("--steps", type=int)
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="closed-loop evaluation against a demo dataset")
    p.add_argument("--checkpoint")
    p.add_argument("--expert", help="evaluate a scripted persona instead of a checkpoint")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config")
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--out", default="eval")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect-memory", help="per-step local memory diagnostics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_inspect_memory)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
