"""Desk-scale stage-1 training runs shared by the acceptance suite.

Each seed trains the desk preset through stage 1, then evaluates every skill on
flat ground. Results are cached as JSON keyed by a hash of the package source and
the run config, so an unchanged tree does not retrain. Populate the cache ahead of
time with ``python3 tests/desk_run.py 0 1 2``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

import kiras
from kiras import Trainer, evaluate, preset

CACHE_DIR = Path(os.environ.get("KIRAS_DESK_CACHE", Path(__file__).parent / ".desk_cache"))
SEEDS = (0, 1, 2)
EVAL_EPISODES = 8


def desk_config(seed: int):
    return preset("desk", seed=seed)


def source_hash(cfg) -> str:
    h = hashlib.sha256()
    src = Path(kiras.__file__).parent
    for p in sorted(src.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    h.update(json.dumps(cfg.to_dict(), sort_keys=True).encode())
    h.update(str(EVAL_EPISODES).encode())
    return h.hexdigest()[:16]


def _run(seed: int) -> dict:
    cfg = desk_config(seed)
    with tempfile.TemporaryDirectory() as out:
        tr = Trainer(cfg)
        tr.train(iterations=cfg.t1, out_dir=out, checkpoint_every=0)
        with open(os.path.join(out, "metrics.csv")) as f:
            rows = list(csv.DictReader(f))
    probs = np.array([[float(r[f"p_skill{s}"]) for s in range(tr.n_skills)] for r in rows])
    evals = [evaluate(tr, s, n_episodes=EVAL_EPISODES) for s in range(tr.n_skills)]
    return {"seed": seed, "iterations": tr.iteration, "stage": tr.stage(),
            "final_probs": probs[-1].tolist(), "min_prob": float(probs.min()), "evals": evals}


def desk_result(seed: int) -> dict:
    cfg = desk_config(seed)
    path = CACHE_DIR / f"seed{seed}_{source_hash(cfg)}.json"
    if path.exists():
        return json.loads(path.read_text())
    res = _run(seed)
    CACHE_DIR.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(res, indent=1))
    return res


if __name__ == "__main__":
    for s in sys.argv[1:] or SEEDS:
        r = desk_result(int(s))
        print(json.dumps({k: r[k] for k in ("seed", "final_probs", "min_prob")}), flush=True)
