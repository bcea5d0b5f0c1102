"""Command-line entry point: ``python -m kiras <subcommand> ...``.

Errors are reported on stderr as a single line ``kiras: error: <kind>: <message>``
with a nonzero exit code (2 for usage errors, 1 otherwise).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import sim
from .checkpoint import CheckpointError
from .config import load_config, preset
from .keyframes import OutOfWorkspace, load_keyframes
from .trainer import Trainer, TrainingAborted, evaluate, replay


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message.replace("\n", " "))


def _skill_index(tr: Trainer, skill: str) -> int:
    for k in tr.keyframes:
        if k.name == skill:
            return tr.keyframes.index(k)
    if skill.isdigit() and int(skill) < tr.n_skills:
        return int(skill)
    raise ValueError(f"unknown skill {skill!r}; known: {[k.name for k in tr.keyframes]}")


def cmd_train(a):
    if a.resume:
        tr = Trainer.load(a.resume)
    else:
        cfg = load_config(a.config) if a.config else preset("desk")
        tr = Trainer(cfg)
    out = a.out_dir or tr.cfg.out_dir
    tr.train(iterations=a.iterations, out_dir=out)
    print(json.dumps({"checkpoint": os.path.join(out, "last.kira"), "iteration": tr.iteration}))


def cmd_eval(a):
    tr = Trainer.load(a.ckpt)
    rep = evaluate(tr, _skill_index(tr, a.skill), n_episodes=a.episodes, terrain=a.terrain, level=a.level,
                   seed=a.seed)
    print(json.dumps(rep))


def cmd_replay(a):
    tr = Trainer.load(a.ckpt)
    replay(tr, a.script, a.out)
    print(json.dumps({"out": a.out}))


def cmd_add_skill(a):
    tr = Trainer.load(a.ckpt)
    new = load_keyframes(a.keyframe, start_index=tr.n_skills)
    if len(new) != 1:
        raise ValueError(f"keyframe file must define exactly one skill, found {len(new)}")
    tr.add_skill(new[0], a.t1, a.t2)
    out = a.out_dir or os.path.join(os.path.dirname(os.path.abspath(a.ckpt)), f"skill{tr.n_skills - 1}")
    os.makedirs(out, exist_ok=True)
    widened = os.path.join(out, "widened.kira")
    tr.save(widened)
    if not a.no_train:
        tr.train(out_dir=out)
    print(json.dumps({"widened": widened, "checkpoint": os.path.join(out, "last.kira") if not a.no_train else widened,
                      "n_skills": tr.n_skills}))


def cmd_export_terrain(a):
    sim.generate_terrain(a.type, a.level, a.seed).to_csv(a.out)
    print(json.dumps({"out": a.out}))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kiras", description="Keyframe-guided multi-skill locomotion training on a planar toy robot.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="run (or resume) two-stage training")
    t.add_argument("--config", help="YAML config; omitted keys take desk-preset defaults")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--iterations", type=int, help="stop after this many iterations (default: run to T2)")
    t.add_argument("--out-dir")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="deterministic evaluation of one skill")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--skill", required=True, help="skill name or index")
    e.add_argument("--terrain", default="flat", choices=sim.TERRAIN_TYPES)
    e.add_argument("--level", type=int, default=0)
    e.add_argument("--episodes", type=int, default=16)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(fn=cmd_eval)

    r = sub.add_parser("replay", help="scripted skill/command switching in one episode")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--script", required=True, help="lines of: time_s skill_index target_vx")
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_replay)

    s = sub.add_parser("add-skill", help="widen a trained policy with one new keyframe skill and continue training")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--keyframe", required=True)
    s.add_argument("--t1", type=int, default=1000, help="skill-learning iterations for the extension")
    s.add_argument("--t2", type=int, default=1000, help="terrain finetuning iterations after that")
    s.add_argument("--out-dir")
    s.add_argument("--no-train", action="store_true", help="only write the widened checkpoint")
    s.set_defaults(fn=cmd_add_skill)

    x = sub.add_parser("export-terrain", help="write a terrain height profile as CSV")
    x.add_argument("--type", required=True, choices=sim.TERRAIN_TYPES)
    x.add_argument("--level", type=int, required=True)
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--out", required=True)
    x.set_defaults(fn=cmd_export_terrain)
    return p


def _fail(kind, msg, code):
    print(f"kiras: error: {kind}: {' '.join(str(msg).split())}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        a = build_parser().parse_args(argv)
    except UsageError as e:
        return _fail("usage", e, 2)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(message)s")
    try:
        a.fn(a)
    except CheckpointError as e:
        return _fail("checkpoint", e, 1)
    except OutOfWorkspace as e:
        return _fail("keyframe", e, 1)
    except TrainingAborted as e:
        return _fail("aborted", f"{e} (last checkpoint: {e.last_checkpoint})", 1)
    except FileNotFoundError as e:
        return _fail("file", e, 1)
    except (ValueError, KeyError, TypeError) as e:
        return _fail("invalid", e, 1)
    return 0
