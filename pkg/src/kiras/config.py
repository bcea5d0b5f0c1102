"""Training configuration: a flat key set, every key defaulted, two presets."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import yaml


@dataclass
class TrainConfig:
    preset: str = "desk"
    seed: int = 0
    t1: int = 2000                  # skill-learning iterations
    t2: int = 8000                  # end of terrain finetuning
    stage_offset: int = 0           # iteration at which the current T1/T2 schedule started
    num_envs: int = 64
    horizon: int = 24
    keyframe_file: str = ""         # empty: the five built-in skills
    terrain_mix: tuple = ("flat", "slope", "bars", "discrete_footholds", "stairs")
    hidden: tuple = (64, 64)
    disc_hidden: tuple = (64, 64)
    enc_hidden: tuple = (64, 64)
    dec_hidden: tuple = (64, 64)
    # PPO
    lr: float = 1e-3
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    epochs: int = 5
    minibatches: int = 4
    entropy_coef: float = 0.005
    max_grad_norm: float = 1.0
    init_log_std: float = -1.0
    omega_sigma: float = 0.8
    # self-imitation
    premium_T: int = 50
    premium_capacity: int = 8
    dtw_weight: float = 1.0
    eq1_verbatim_sign: bool = False
    disc_minibatches: int = 4
    disc_epochs: int = 1
    omega_si: float = 1.0
    # estimator
    history_len: int = 4
    latent_dim: int = 8
    ece_beta: float = 0.1
    ece_minibatches: int = 4
    # skill scheduler
    coverage_window: int = 200
    cross_skill_prob: float = 0.25
    init_joint_noise: float = 0.05
    init_height_noise: float = 0.02
    init_pitch_noise_deg: float = 2.0
    ref_command: float = 0.2
    # environment
    episode_steps: int = 300
    command_min: float = -0.6
    command_max: float = 1.0
    randomize: bool = True
    checkpoint_every: int = 500
    out_dir: str = "runs/desk"

    def __post_init__(self):
        self.terrain_mix = tuple(self.terrain_mix)
        for k in ("hidden", "disc_hidden", "enc_hidden", "dec_hidden"):
            setattr(self, k, tuple(int(v) for v in getattr(self, k)))
        self.validate()

    def validate(self):
        if not 0 < self.t1 < self.t2:
            raise ValueError(f"need 0 < t1 < t2, got t1={self.t1} t2={self.t2}")
        if self.num_envs < 1 or self.horizon < 1:
            raise ValueError("num_envs and horizon must be positive")
        if self.premium_T < 2:
            raise ValueError("premium_T must be >= 2")
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


PRESETS = {
    "desk": {},
    # the published Solo-8 scale; used for dimension audits, not run at desk scale
    "solo8-dims": {"t1": 6000, "t2": 30000, "num_envs": 4096, "hidden": (128, 128, 128),
                   "disc_hidden": (512, 256), "enc_hidden": (128, 64), "dec_hidden": (64, 128)},
}

# appendix network table: name -> (in, out, hidden)
SOLO8_NETWORKS = {
    "actor": (42, 8, (128, 128, 128)),
    "task_critic": (107, 1, (128, 128, 128)),
    "imitation_critic": (107, 1, (128, 128, 128)),
    "ece_encoder": (124, 19, (128, 64)),
    "ece_decoder": (13, 31, (64, 128)),
    "discriminator": (38, 1, (512, 256)),
}
SOLO8_PROP_DIM = 31
SOLO8_CONTEXT_DIM = 11   # 3 velocity + 8 latent
SOLO8_HISTORY = 4
SOLO8_SKILLS = 5


def preset(name: str, **overrides) -> TrainConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}")
    kw = dict(PRESETS[name])
    kw.update(overrides)
    return TrainConfig(preset=name, **kw)


def load_config(path) -> TrainConfig:
    with open(path) as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ValueError("config file must hold a flat mapping")
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    name = data.pop("preset", "desk")
    return preset(name, **data)


def save_config(cfg: TrainConfig, path) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(cfg.to_dict(), f, sort_keys=False)
