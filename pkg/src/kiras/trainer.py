"""Two-stage training loop, checkpointing, evaluation, scripted replay and skill extension.

Stage 1 (``t < T1``) learns the skills on flat ground with the self-imitation
channel on; at ``T1`` the actor is frozen as the reference for the residual
penalty; stage 2 continues the same actor on the terrain mix with the
curriculum, the imitation channel off and the residual penalty on.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import replace

import numpy as np

from . import checkpoint as ckpt
from . import rewards as R
from . import sim
from .config import TrainConfig, preset
from .ece import ECE, adaboot_gate
from .env import ObservationBundle, VecEnv, observe, priv_dim, prop_dim, skill_slice
from .keyframes import Keyframe, builtin_keyframes, frame_dim, keyframe_frame, keyframe_trajectory, load_keyframes, onehot
from .numerics import Adam, AdamState, DenseNet, NonFiniteError, ParamVector, check_finite
from .ppo import GaussianPolicy, MultiCriticPPO, PPOConfig, gae, mix_advantages, omega_schedule
from .self_imitation import Discriminator, FrameNormalizer, PremiumBuffer, cosine_similarity, dtw_batch, dtw_distance
from .skills import SkillSampler

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    def __init__(self, msg, last_checkpoint=None):
        super().__init__(msg)
        self.last_checkpoint = last_checkpoint


class Trainer:
    def __init__(self, cfg: TrainConfig, keyframes: list[Keyframe] | None = None):
        self.cfg = cfg
        if keyframes is None:
            keyframes = load_keyframes(cfg.keyframe_file) if cfg.keyframe_file else builtin_keyframes()
        self.keyframes = list(keyframes)
        self.default_q = builtin_keyframes()[0].as_array()
        ss = np.random.SeedSequence(cfg.seed)
        init_seed, env_seed, act_seed, upd_seed, reset_seed = ss.spawn(5)
        init_rng = np.random.default_rng(init_seed)
        self.act_rng = np.random.default_rng(act_seed)
        self.upd_rng = np.random.default_rng(upd_seed)
        self.reset_rng = np.random.default_rng(reset_seed)
        self.env_seed = int(env_seed.generate_state(1)[0])
        n = self.n_skills
        self.ece = ECE(prop_dim(n), cfg.history_len, n, vel_dim=2, latent_dim=cfg.latent_dim,
                       enc_hidden=cfg.enc_hidden, dec_hidden=cfg.dec_hidden, rng=init_rng,
                       lr=cfg.lr, beta=cfg.ece_beta, max_grad_norm=cfg.max_grad_norm)
        pcfg = PPOConfig(clip=cfg.clip, epochs=cfg.epochs, minibatches=cfg.minibatches, entropy_coef=cfg.entropy_coef,
                         gamma=cfg.gamma, lam=cfg.lam, lr=cfg.lr, max_grad_norm=cfg.max_grad_norm)
        self.ppo = MultiCriticPPO(prop_dim(n) + self.ece.context_dim, priv_dim(n), 4, cfg.hidden, init_rng, pcfg)
        self.ppo.actor.log_std.value[:] = cfg.init_log_std
        self.disc = Discriminator(frame_dim(n), cfg.disc_hidden, init_rng, cfg.lr, cfg.max_grad_norm)
        self.normalizer = FrameNormalizer(frame_dim(n))
        self.buffer = PremiumBuffer([keyframe_trajectory(k, cfg.premium_T, n) for k in self.keyframes],
                                    cfg.premium_capacity)
        self.sampler = SkillSampler(self.keyframes, cfg.coverage_window, cfg.cross_skill_prob,
                                    cfg.init_joint_noise, cfg.init_height_noise, cfg.init_pitch_noise_deg)
        self.flat_actor: GaussianPolicy | None = None
        self.iteration = 0
        self.best_task_reward = -np.inf
        self.metrics_path = None
        self._metric_header = None
        self._build_env()

    # ------------------------------------------------------------ setup

    @property
    def skill_joints(self) -> np.ndarray:
        """(N, 4) keyframe joint angles; the stand-still reference of each skill."""
        return np.stack([k.as_array() for k in self.keyframes])

    @property
    def n_skills(self) -> int:
        return len(self.keyframes)

    @property
    def t1(self) -> int:
        return self.cfg.stage_offset + self.cfg.t1

    @property
    def t2(self) -> int:
        return self.cfg.stage_offset + self.cfg.t2

    def stage(self, t=None) -> int:
        t = self.iteration if t is None else t
        return 1 if t < self.t1 else 2

    def _build_env(self):
        cfg = self.cfg
        self.env = VecEnv(cfg.num_envs, self.n_skills, self.default_q, cfg.history_len, seed=self.env_seed,
                          episode_steps=cfg.episode_steps, randomize=cfg.randomize,
                          command_range=(cfg.command_min, cfg.command_max))
        fd = frame_dim(self.n_skills)
        self.seg_frames = np.zeros((cfg.num_envs, cfg.premium_T, fd))
        self.seg_rc = np.zeros((cfg.num_envs, cfg.premium_T))
        self.seg_len = np.zeros(cfg.num_envs, dtype=np.int64)
        self._reset(np.arange(cfg.num_envs))
        self.obs = self.env.observe()

    def _terrain_for(self, ids):
        if self.stage() == 1:
            return np.zeros(len(ids), dtype=np.int64), np.zeros(len(ids), dtype=np.int64)
        mix = [sim.TERRAIN_TYPES.index(t) for t in self.cfg.terrain_mix]
        types = np.array([mix[i % len(mix)] for i in ids], dtype=np.int64)
        return types, self.env.level[ids]

    def _reset(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        skills = np.empty(len(ids), dtype=np.int64)
        states = []
        for j, _ in enumerate(ids):
            sk = self.sampler.sample_skill(self.reset_rng)
            st, _pose = self.sampler.initialize_state(sk, self.reset_rng)
            skills[j] = sk
            states.append(st)
        batched = sim.RobotState(**{f: np.concatenate([getattr(s, f) for s in states])
                                    for f in sim.RobotState.__dataclass_fields__})
        types, levels = self._terrain_for(ids)
        self.env.reset_envs(ids, skills, batched, types, levels)
        self.seg_len[ids] = 0

    def reference_priv_obs(self) -> np.ndarray:
        """Privileged observations of every keyframe standing still on flat ground."""
        kfs = self.keyframes
        st = sim.make_state(np.zeros(len(kfs)), [k.base_height for k in kfs], [k.pitch for k in kfs],
                            np.stack([k.as_array() for k in kfs]))
        flat = np.zeros((len(kfs), self.env.maps.shape[1]))
        return observe(st, self.cfg.ref_command, onehot(np.arange(len(kfs)), len(kfs)), flat,
                       np.zeros((len(kfs), 4)), self.default_q).priv

    def actor_input(self, obs: ObservationBundle, skills) -> np.ndarray:
        ctx = self.ece.context(obs.history, onehot(skills, self.n_skills))
        return np.concatenate([obs.prop, ctx], axis=1)

    # -------------------------------------------------------- one iteration

    def train_iteration(self) -> dict:
        cfg = self.cfg
        env = self.env
        t = self.iteration
        stage1 = t < self.t1
        w1, w2 = omega_schedule(t - cfg.stage_offset, cfg.t1, cfg.omega_sigma)
        check_finite(self.ppo.actor.net.params() + self.ppo.actor.log_std.params() + self.ppo.task_critic.params() + self.ppo.imit_critic.params())
        ref_values = self.ppo.task_critic(self.reference_priv_obs())[:, 0]
        probs = self.sampler.set_values(ref_values)

        H, n = cfg.horizon, env.n
        A = {k: [] for k in ("actor_in", "priv", "actions", "logp", "r_task", "r_imit", "done", "v_task", "v_imit",
                             "f_prev", "f_cur", "skill", "hist", "v_true", "next_prop", "valid", "v_hat")}
        term_sums = {k: 0.0 for k in R.REG_TERMS}
        chan = {"r_T": 0.0, "r_R": 0.0, "r_res": 0.0, "r_SI": 0.0, "r_c": 0.0}
        admitted = 0
        progress_log = []
        obs = self.obs
        for _ in range(H):
            skills = env.skill.copy()
            actor_in = self.actor_input(obs, skills)
            a, logp, _mu = self.ppo.actor.sample(actor_in, self.act_rng)
            vt, vi = self.ppo.values(obs.priv)
            v_true = np.stack([env.state.base_vx, env.state.base_vz], axis=1)
            nxt, info = env.step(a)
            if stage1:
                r_res = np.zeros(n)
                f0, f1 = self.normalizer(obs.frame), self.normalizer(nxt.frame)
                r_si = self.disc.reward(f0, f1)
            else:
                a_flat = self.flat_actor.mean(actor_in)
                r_res = R.residual_reward(a, a_flat, t - cfg.stage_offset, cfg.t1)
                r_si = np.zeros(n)
            rin = R.RewardInputs(
                base_vx=env.state.base_vx, pitch_rate=env.state.pitch_rate, command=env.command,
                action=a, prev_action=info["prev_action"], torque=info["torque"], prev_torque=info["prev_torque"],
                joint_vel=env.state.joint_vel, prev_joint_vel=info["prev_joint_vel"], joint_pos=env.state.joint_pos,
                default_joint_pos=self.skill_joints[skills], foot_force=info["foot_force"], foot_vx=info["foot_vx"],
                contact=info["contact"], control_dt=env.control_dt)
            rb = R.compute_rewards(rin, info["collision"] | info["diverged"], r_res, r_si, cfg.omega_si)
            done = info["collision"] | info["diverged"] | info["timeout"]
            r_task = rb.r_c.copy()
            r_imit = rb.r_SI.copy()
            tout = np.flatnonzero(info["timeout"] & ~info["collision"] & ~info["diverged"])
            if len(tout):
                bt, bi = self.ppo.values(nxt.priv[tout])
                r_task[tout] += cfg.gamma * bt
                r_imit[tout] += cfg.gamma * bi

            for k, v in rb.terms.items():
                term_sums[k] += float(np.sum(v))
            for k in chan:
                chan[k] += float(np.sum(getattr(rb, k)))
            A["actor_in"].append(actor_in)
            A["priv"].append(obs.priv)
            A["actions"].append(a)
            A["logp"].append(logp)
            A["r_task"].append(r_task)
            A["r_imit"].append(r_imit)
            A["done"].append(done.astype(float))
            A["v_task"].append(vt)
            A["v_imit"].append(vi)
            A["f_prev"].append(obs.frame)
            A["f_cur"].append(nxt.frame)
            A["skill"].append(skills)
            A["hist"].append(obs.history)
            A["v_true"].append(v_true)
            A["next_prop"].append(nxt.prop)
            A["valid"].append(~done)
            A["v_hat"].append(actor_in[:, prop_dim(self.n_skills):prop_dim(self.n_skills) + 2])

            if stage1:
                admitted += self._premium_step(nxt.frame, rb.r_c, skills, done)
            ids = np.flatnonzero(done)
            if len(ids):
                for i in ids:
                    dist = env.state.base_x[i] - env.ep_start_x[i]
                    p = sim.traversal_progress(dist, env.command[i], env.ep_step[i] * env.control_dt,
                                               bool(info["collision"][i] or info["diverged"][i]))
                    progress_log.append(p)
                    if not stage1:
                        env.level[i] = sim.update_curriculum(int(env.level[i]), p)
                self._reset(ids)
                nxt = env.observe()
            obs = nxt
        self.obs = obs

        # ---- advantages
        B = {k: np.asarray(v) for k, v in A.items()}
        bt, bi = self.ppo.values(obs.priv)
        adv_t, ret_t = gae(B["r_task"], B["v_task"], B["done"], bt, cfg.gamma, cfg.lam)
        adv_i, ret_i = gae(B["r_imit"], B["v_imit"], B["done"], bi, cfg.gamma, cfg.lam)
        a_muc = mix_advantages(adv_t.ravel(), adv_i.ravel(), w1, w2)
        flat = lambda x: x.reshape((H * n,) + x.shape[2:])
        batch = {"actor_obs": flat(B["actor_in"]), "critic_obs": flat(B["priv"]), "actions": flat(B["actions"]),
                 "logp": flat(B["logp"]), "adv": a_muc, "ret_task": ret_t.ravel(), "ret_imit": ret_i.ravel()}

        # ---- discriminator (stage 1 only)
        disc_loss = float("nan")
        if stage1:
            disc_loss = self._update_discriminator(flat(B["f_prev"]), flat(B["f_cur"]), flat(B["skill"]))

        # ---- PPO
        losses = self.ppo.update(batch, self.upd_rng)

        # ---- estimator with reward-ratio gating
        mean_rc = chan["r_c"] / (H * n)
        self.best_task_reward = max(self.best_task_reward, mean_rc)
        p_ece = adaboot_gate(mean_rc, self.best_task_reward)
        do_ece = bool(self.upd_rng.random() < p_ece)
        ece_parts = {"loss": float("nan"), "mse_v": float("nan"), "mse_o": float("nan"), "kl": float("nan")}
        valid = flat(B["valid"])
        if do_ece and valid.any():
            ece_parts = self._update_ece(flat(B["hist"])[valid], flat(B["skill"])[valid],
                                         flat(B["v_true"])[valid], flat(B["next_prop"])[valid])
        vel_rmse = float(np.sqrt(np.mean((flat(B["v_hat"]) - flat(B["v_true"])) ** 2)))

        if stage1:
            self.normalizer.update(flat(B["f_cur"]))

        self.iteration += 1
        if self.iteration == self.t1:
            self.flat_actor = self.ppo.actor.copy()
            self.normalizer.frozen = True

        m = {"iteration": t, "stage": 1 if stage1 else 2, "omega1": w1, "omega2": w2}
        for k in R.REG_TERMS:
            m[f"rew_{k}"] = term_sums[k] / (H * n)
        for k, v in chan.items():
            m[k] = v / (H * n)
        for s in range(self.n_skills):
            m[f"p_skill{s}"] = float(probs[s])
        for s in range(self.n_skills):
            m[f"eps_skill{s}"] = self.buffer.best_score(s)
        for s in range(self.n_skills):
            m[f"value_skill{s}"] = float(ref_values[s])
        m["admitted"] = admitted
        m["disc_loss"] = disc_loss
        m.update({f"ece_{k}": v for k, v in ece_parts.items()})
        m["ece_update_prob"] = p_ece
        m["ece_updated"] = int(do_ece)
        m["vel_rmse"] = vel_rmse
        m.update(losses)
        m["log_std_mean"] = float(np.mean(self.ppo.actor.log_std.value))
        m["adv_task_mean"] = float(adv_t.mean())
        m["adv_task_std"] = float(adv_t.std())
        m["adv_imit_mean"] = float(adv_i.mean())
        m["adv_imit_std"] = float(adv_i.std())
        m["episodes"] = len(progress_log)
        m["progress"] = float(np.mean(progress_log)) if progress_log else float("nan")
        for ti, name in enumerate(sim.TERRAIN_TYPES):
            sel = env.terrain_type == ti
            m[f"level_{name}"] = float(env.level[sel].mean()) if sel.any() else 0.0
        return m

    def _premium_step(self, frames, r_c, skills, done) -> int:
        """Accumulate T-step segments; score completed ones and offer them to the buffer."""
        idx = np.arange(len(frames))
        self.seg_frames[idx, self.seg_len] = frames
        self.seg_rc[idx, self.seg_len] = r_c
        self.seg_len += 1
        full = np.flatnonzero(self.seg_len >= self.cfg.premium_T)
        admitted = 0
        if len(full):
            trajs = self.seg_frames[full]
            kf = np.stack([self.buffer.slots[s].keyframe_trajectory for s in skills[full]])
            d = dtw_batch(self.normalizer(trajs), self.normalizer(kf))
            sign = 1.0 if self.cfg.eq1_verbatim_sign else -1.0
            scores = self.seg_rc[full].sum(axis=1) + sign * self.cfg.dtw_weight * d
            for j, i in enumerate(full):
                admitted += self.buffer.maybe_admit(int(skills[i]), trajs[j], float(scores[j]))
            self.seg_len[full] = 0
        self.seg_len[done] = 0
        return admitted

    def _update_discriminator(self, f_prev, f_cur, skills) -> float:
        cfg = self.cfg
        n = len(f_prev)
        mb = max(1, n // cfg.disc_minibatches)
        losses = []
        for _ in range(cfg.disc_epochs):
            perm = self.upd_rng.permutation(n)
            for k in range(cfg.disc_minibatches):
                idx = perm[k * mb:(k + 1) * mb]
                rp, rc = self.buffer.sample_transitions(skills[idx], self.upd_rng)
                losses.append(self.disc.update(self.normalizer(rp), self.normalizer(rc),
                                               self.normalizer(f_prev[idx]), self.normalizer(f_cur[idx])))
        return float(losses[0])

    def _update_ece(self, hist, skills, v_true, next_prop) -> dict:
        n = len(hist)
        k = self.cfg.ece_minibatches
        mb = max(1, n // k)
        perm = self.upd_rng.permutation(n)
        parts = None
        oh = onehot(skills, self.n_skills)
        for j in range(k):
            idx = perm[j * mb:(j + 1) * mb]
            if len(idx) == 0:
                continue
            p = self.ece.update(hist[idx], oh[idx], v_true[idx], next_prop[idx], self.upd_rng)
            parts = parts or p
        return parts

    # ------------------------------------------------------------- driver

    def train(self, iterations: int | None = None, out_dir: str | None = None, checkpoint_every: int | None = None) -> dict:
        """Run until T2 (or ``iterations`` more). Metrics append to ``out_dir/metrics.csv``."""
        out_dir = out_dir or self.cfg.out_dir
        every = self.cfg.checkpoint_every if checkpoint_every is None else checkpoint_every
        os.makedirs(out_dir, exist_ok=True)
        if self.metrics_path is None:
            self.metrics_path = os.path.join(out_dir, "metrics.csv")
        end = self.t2 if iterations is None else min(self.t2, self.iteration + iterations)
        last_ckpt = None
        m = {}
        while self.iteration < end:
            try:
                m = self.train_iteration()
            except (NonFiniteError, FloatingPointError) as e:
                raise TrainingAborted(f"non-finite value at iteration {self.iteration}: {e}", last_ckpt) from e
            self._write_metrics(m)
            if every and self.iteration % every == 0:
                last_ckpt = os.path.join(out_dir, f"ckpt_{self.iteration:06d}.kira")
                self.save(last_ckpt)
            if self.iteration % 50 == 0:
                log.info("it %d stage %d r_c %.3f r_SI %.3f p %s", self.iteration, m["stage"], m["r_c"], m["r_SI"],
                         np.round([m[f"p_skill{s}"] for s in range(self.n_skills)], 3))
        self.save(os.path.join(out_dir, "last.kira"))
        return m

    def _write_metrics(self, m: dict) -> None:
        new = not os.path.exists(self.metrics_path)
        if self._metric_header is None:
            self._metric_header = list(m)
        if not new:
            with open(self.metrics_path) as f:
                if next(csv.reader(f), None) != self._metric_header:
                    raise ValueError(f"{self.metrics_path} has a different column layout; use another output directory")
        with open(self.metrics_path, "a", newline="") as f:
            w = csv.writer(f)
            if new:
                w.writerow(self._metric_header)
            w.writerow([_fmt(m.get(k)) for k in self._metric_header])

    # --------------------------------------------------------- checkpoints

    def state_sections(self) -> dict:
        s = {}
        nets = {"actor": self.ppo.actor.net, "task_critic": self.ppo.task_critic, "imit_critic": self.ppo.imit_critic,
                "disc": self.disc.net, "ece_enc": self.ece.encoder, "ece_dec": self.ece.decoder, "ece_prior": self.ece.prior}
        if self.flat_actor is not None:
            nets["flat_actor"] = self.flat_actor.net
            s["flat_actor/log_std"] = self.flat_actor.log_std.value
        for name, net in nets.items():
            for k, p in enumerate(net.params()):
                s[f"{name}/p{k}"] = p
        s["actor/log_std"] = self.ppo.actor.log_std.value
        opts = {"actor": self.ppo.actor_opt, "task_critic": self.ppo.task_opt, "imit_critic": self.ppo.imit_opt,
                "disc": self.disc.opt, "ece": self.ece.opt}
        for name, opt in opts.items():
            st = opt.state
            for k in range(len(st.first_moment)):
                s[f"adam/{name}/m{k}"] = st.first_moment[k]
                s[f"adam/{name}/v{k}"] = st.second_moment[k]
            s[f"adam/{name}/step"] = np.array([st.step_count])
        for k, v in self.normalizer.state_dict().items():
            s[f"normalizer/{k}"] = v
        for i, slot in enumerate(self.buffer.slots):
            s[f"buffer/{i}/keyframe"] = slot.keyframe_trajectory
            s[f"buffer/{i}/premium"] = np.array(slot.premium).reshape((-1,) + slot.keyframe_trajectory.shape)
            s[f"buffer/{i}/best"] = np.array([slot.best_score])
        for k, v in self.sampler.state_dict().items():
            s[f"sampler/{k}"] = v
        env = self.env
        for f in sim.RobotState.__dataclass_fields__:
            s[f"env/state/{f}"] = getattr(env.state, f)
        for f in ("friction_coeff", "payload_kg", "com_shift", "push_velocity", "actuation_delay_s",
                  "pd_stiffness_mult", "pd_damping_mult"):
            s[f"env/rnd/{f}"] = getattr(env.rnd, f)
        for f in ("command", "skill", "prev_action", "prev_torque", "prev_joint_vel", "history", "ep_step",
                  "ep_start_x", "terrain_type", "level"):
            s[f"env/{f}"] = getattr(env, f)
        s["seg/frames"] = self.seg_frames
        s["seg/rc"] = self.seg_rc
        s["seg/len"] = self.seg_len
        meta = {
            "config": self.cfg.to_dict(),
            "keyframes": [{"skill_index": k.skill_index, "joint_pos": list(k.joint_pos), "base_height": k.base_height,
                           "pitch": k.pitch, "name": k.name} for k in self.keyframes],
            "iteration": self.iteration,
            "best_task_reward": self.best_task_reward if np.isfinite(self.best_task_reward) else None,
            "rng": {"act": self.act_rng.bit_generator.state, "upd": self.upd_rng.bit_generator.state,
                    "reset": self.reset_rng.bit_generator.state, "env": env.rng.bit_generator.state},
            "env_seed": self.env_seed,
            "metric_header": self._metric_header,
        }
        s["meta.json"] = ckpt.pack_json(meta)
        return s

    def save(self, path) -> None:
        ckpt.save(path, self.state_sections())

    @classmethod
    def from_sections(cls, s: dict) -> "Trainer":
        meta = ckpt.unpack_json(s["meta.json"])
        cfg_d = meta["config"]
        cfg = preset(cfg_d.pop("preset"), **cfg_d)
        kfs = [Keyframe(k["skill_index"], tuple(k["joint_pos"]), k["base_height"], k["pitch"], k["name"])
               for k in meta["keyframes"]]
        tr = cls(cfg, kfs)
        tr._load_sections(s, meta)
        return tr

    @classmethod
    def load(cls, path) -> "Trainer":
        return cls.from_sections(ckpt.load(path))

    def _load_sections(self, s, meta):
        def load_net(name, net):
            k = 0
            params = []
            while f"{name}/p{k}" in s:
                params.append(s[f"{name}/p{k}"])
                k += 1
            net.set_params(params)
        load_net("actor", self.ppo.actor.net)
        load_net("task_critic", self.ppo.task_critic)
        load_net("imit_critic", self.ppo.imit_critic)
        load_net("disc", self.disc.net)
        load_net("ece_enc", self.ece.encoder)
        load_net("ece_dec", self.ece.decoder)
        load_net("ece_prior", self.ece.prior)
        self.ppo.actor.log_std.value = s["actor/log_std"].copy()
        if "flat_actor/p0" in s:
            self.flat_actor = self.ppo.actor.copy()
            load_net("flat_actor", self.flat_actor.net)
            self.flat_actor.log_std.value = s["flat_actor/log_std"].copy()
        opts = {"actor": self.ppo.actor_opt, "task_critic": self.ppo.task_opt, "imit_critic": self.ppo.imit_opt,
                "disc": self.disc.opt, "ece": self.ece.opt}
        for name, opt in opts.items():
            st = opt.state
            for k in range(len(st.first_moment)):
                st.first_moment[k] = s[f"adam/{name}/m{k}"].copy()
                st.second_moment[k] = s[f"adam/{name}/v{k}"].copy()
            st.step_count = int(s[f"adam/{name}/step"][0])
        self.normalizer.load_state_dict({k: s[f"normalizer/{k}"] for k in ("mean", "var", "count", "frozen")})
        for i, slot in enumerate(self.buffer.slots):
            slot.keyframe_trajectory = s[f"buffer/{i}/keyframe"].copy()
            slot.premium = [p.copy() for p in s[f"buffer/{i}/premium"]]
            slot.best_score = float(s[f"buffer/{i}/best"][0])
        self.sampler.load_state_dict({k: s[f"sampler/{k}"] for k in ("counts", "recent", "probs")})
        env = self.env
        env.state = sim.RobotState(**{f: s[f"env/state/{f}"].copy() for f in sim.RobotState.__dataclass_fields__})
        env.state.in_contact = env.state.in_contact.astype(bool)
        for f in ("friction_coeff", "payload_kg", "com_shift", "push_velocity", "actuation_delay_s",
                  "pd_stiffness_mult", "pd_damping_mult"):
            setattr(env.rnd, f, s[f"env/rnd/{f}"].copy())
        for f in ("command", "skill", "prev_action", "prev_torque", "prev_joint_vel", "history", "ep_step",
                  "ep_start_x", "terrain_type", "level"):
            setattr(env, f, s[f"env/{f}"].copy())
        for i in range(env.n):
            env.maps[i] = env.terrain_map(env.terrain_type[i], env.level[i])
        self.seg_frames = s["seg/frames"].copy()
        self.seg_rc = s["seg/rc"].copy()
        self.seg_len = s["seg/len"].copy()
        self.iteration = int(meta["iteration"])
        b = meta["best_task_reward"]
        self.best_task_reward = -np.inf if b is None else float(b)
        self.act_rng.bit_generator.state = meta["rng"]["act"]
        self.upd_rng.bit_generator.state = meta["rng"]["upd"]
        self.reset_rng.bit_generator.state = meta["rng"]["reset"]
        env.rng.bit_generator.state = meta["rng"]["env"]
        self._metric_header = meta.get("metric_header")
        self.obs = env.observe()

    # --------------------------------------------------------- skill growth

    def add_skill(self, kf: Keyframe, t1_extra: int, t2_extra: int) -> None:
        """Grow every skill-conditioned input by one zero-initialized column and restart the schedule."""
        if t1_extra <= 0:
            raise ValueError("t1 for a new skill must be positive: the skill is learned with self-imitation on")
        if t2_extra <= 0:
            raise ValueError("t2 for a new skill must be positive")
        n_old = self.n_skills
        kf = replace(kf, skill_index=n_old)
        pd_old = prop_dim(n_old)
        at = skill_slice(n_old).stop
        self.ppo.actor.net.widen_input(1, at)
        if self.flat_actor is not None:
            self.flat_actor.net.widen_input(1, at)
        self.ppo.task_critic.widen_input(1, at)
        self.ppo.imit_critic.widen_input(1, at)
        # history is H stacked proprioceptive vectors
        for h in reversed(range(self.cfg.history_len)):
            self.ece.encoder.widen_input(1, h * pd_old + at)
        self.ece.decoder.widen_input(1)
        self.ece.decoder.widen_output(1, at)
        self.ece.prior.widen_input(1)
        fd_old = frame_dim(n_old)
        self.disc.net.widen_input(1, fd_old + 1 + n_old)
        self.disc.net.widen_input(1, 1 + n_old)
        self.disc.frame_dim += 1
        self.ece.n_skills += 1
        self.ece.prop_dim += 1
        self.keyframes.append(kf)
        self.sampler.add_skill(kf)
        # imitation frames gain one one-hot entry
        old_slots = self.buffer.slots
        self.buffer = PremiumBuffer([_insert_col(sl.keyframe_trajectory, 1 + n_old) for sl in old_slots]
                                    + [keyframe_trajectory(kf, self.cfg.premium_T, n_old + 1)], self.cfg.premium_capacity)
        for new, old in zip(self.buffer.slots, old_slots):
            new.premium = [_insert_col(p, 1 + n_old) for p in old.premium]
            new.best_score = old.best_score
        nm = self.normalizer
        nm.mean = np.insert(nm.mean, 1 + n_old, 0.0)
        nm.var = np.insert(nm.var, 1 + n_old, 1.0)
        nm.frozen = False
        for opt in (self.ppo.actor_opt, self.ppo.task_opt, self.ppo.imit_opt, self.disc.opt, self.ece.opt):
            opt.state = AdamState.for_params(opt._params(), learning_rate=opt.state.learning_rate)
        self.cfg = replace(self.cfg, stage_offset=self.iteration, t1=t1_extra, t2=t1_extra + t2_extra)
        self.best_task_reward = -np.inf
        self._metric_header = None
        self.metrics_path = None
        self._build_env()


def _insert_col(a, at):
    return np.insert(np.asarray(a), at, 0.0, axis=-1)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# ------------------------------------------------------------------ evaluation

def rollout_skill(tr: Trainer, skill: int, n_episodes: int = 16, steps: int = 120, terrain: str = "flat",
                  level: int = 0, seed: int = 0, command=None):
    """Deterministic mean-action episodes from the exact keyframe pose. Returns raw frames and flags."""
    n = n_episodes
    env = VecEnv(n, tr.n_skills, tr.default_q, tr.cfg.history_len, seed=seed, episode_steps=steps,
                 randomize=False, command_range=(tr.cfg.command_min, tr.cfg.command_max))
    env.terrain_seed = tr.env_seed
    kf = tr.keyframes[skill]
    st = sim.make_state(np.zeros(n), kf.base_height, kf.pitch, kf.as_array())
    env.reset_envs(np.arange(n), np.full(n, skill), st, np.full(n, sim.TERRAIN_TYPES.index(terrain)), np.full(n, level))
    if command is not None:
        env.command[:] = command
    obs = env.observe()
    frames = np.zeros((n, steps, frame_dim(tr.n_skills)))
    alive = np.ones(n, dtype=bool)
    collided = np.zeros(n, dtype=bool)
    lengths = np.zeros(n, dtype=np.int64)
    for k in range(steps):
        a = tr.ppo.actor.mean(tr.actor_input(obs, env.skill))
        obs, info = env.step(a)
        frames[:, k] = obs.frame
        hit = (info["collision"] | info["diverged"]) & alive
        collided |= hit
        lengths += alive
        alive &= ~hit
    dist = env.state.base_x - env.ep_start_x
    return {"frames": frames, "lengths": lengths, "collided": collided, "distance": dist,
            "command": env.command.copy(), "duration": steps * env.control_dt}


def evaluate(tr: Trainer, skill: int, n_episodes: int = 16, terrain: str = "flat", level: int = 0,
             steps: int = 120, seed: int = 0, command=None) -> dict:
    """Posture, similarity to the keyframe trajectory and traversal success for one skill."""
    ro = rollout_skill(tr, skill, n_episodes, steps, terrain, level, seed, command)
    kf_frame = keyframe_frame(tr.keyframes[skill], tr.n_skills)
    heights, pitches, cos, dtws = [], [], [], []
    success = []
    for i in range(n_episodes):
        L = int(ro["lengths"][i])
        fr = ro["frames"][i, :L]
        heights.append(fr[:, -1].mean())
        pitches.append(fr[:, 0].mean())
        ref = np.repeat(kf_frame[None], L, axis=0)
        cos.append(cosine_similarity(fr, ref))
        dtws.append(dtw_distance(fr, ref))
        p = sim.traversal_progress(ro["distance"][i], ro["command"][i], ro["duration"], bool(ro["collided"][i]))
        success.append((not ro["collided"][i]) and p >= sim.PROMOTE_AT)
    kf = tr.keyframes[skill]
    return {
        "skill": skill, "name": kf.name, "terrain": terrain, "level": level, "episodes": n_episodes,
        "mean_base_height": float(np.mean(heights)), "target_base_height": kf.base_height,
        "mean_pitch_deg": float(np.degrees(np.mean(pitches))), "target_pitch_deg": float(np.degrees(kf.pitch)),
        "cosine_similarity": float(np.mean(cos)), "dtw": float(np.mean(dtws)),
        "success_rate": float(np.mean(success)), "collision_rate": float(np.mean(ro["collided"])),
    }


# ---------------------------------------------------------------------- replay

def parse_script(path):
    """Lines of ``time_s skill_index target_vx`` (commas or whitespace; '#' comments)."""
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            try:
                if len(parts) != 3:
                    raise ValueError
                rows.append((float(parts[0]), int(parts[1]), float(parts[2])))
            except ValueError:
                raise ValueError(f"malformed script line {lineno}: {line!r}") from None
    if not rows:
        raise ValueError("empty script")
    rows.sort(key=lambda r: r[0])
    return rows


def replay(tr: Trainer, script, out_csv, hold_s: float = 3.0) -> None:
    """One continuous episode following scripted skill/command switches; one CSV row per control step."""
    rows = parse_script(script) if isinstance(script, (str, os.PathLike)) else list(script)
    for _, sk, _ in rows:
        if not 0 <= sk < tr.n_skills:
            raise ValueError(f"skill index {sk} out of range")
    dt = sim.DT * sim.DECIMATION
    steps = int(round((rows[-1][0] + hold_s) / dt))
    env = VecEnv(1, tr.n_skills, tr.default_q, tr.cfg.history_len, seed=0, episode_steps=steps + 1, randomize=False)
    first = tr.keyframes[rows[0][1]]
    env.reset_envs([0], [rows[0][1]], sim.make_state([0.0], first.base_height, first.pitch, first.as_array()), [0], [0])
    obs = env.observe()
    q_names = ["front_hip", "front_knee", "rear_hip", "rear_knee"]
    with open(out_csv, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["time", "base_height", "pitch", *q_names, "skill", "target_vx", "r_c", "r_si"])
        r = 0
        for k in range(steps):
            time = k * dt
            while r + 1 < len(rows) and rows[r + 1][0] <= time + 1e-9:
                r += 1
            if rows[r][0] <= time + 1e-9:
                env.skill[0] = rows[r][1]
                env.command[0] = rows[r][2]
            # refresh skill/command inside the current observation
            obs = observe(env.state, env.command, onehot(env.skill, tr.n_skills), env.maps, env.prev_action,
                          tr.default_q, None)
            obs.history = env.history.copy()
            obs.history[:, -1] = obs.prop
            a = tr.ppo.actor.mean(tr.actor_input(obs, env.skill))
            prev_frame = obs.frame
            nxt, info = env.step(a)
            rin = R.RewardInputs(
                base_vx=env.state.base_vx, pitch_rate=env.state.pitch_rate, command=env.command, action=a,
                prev_action=info["prev_action"], torque=info["torque"], prev_torque=info["prev_torque"],
                joint_vel=env.state.joint_vel, prev_joint_vel=info["prev_joint_vel"], joint_pos=env.state.joint_pos,
                default_joint_pos=tr.skill_joints[env.skill], foot_force=info["foot_force"], foot_vx=info["foot_vx"],
                contact=info["contact"], control_dt=dt)
            r_si = tr.disc.reward(tr.normalizer(prev_frame), tr.normalizer(nxt.frame))
            rb = R.compute_rewards(rin, info["collision"], np.zeros(1), r_si)
            fr = nxt.frame[0]
            w.writerow([f"{time + dt:.2f}", repr(float(fr[-1])), repr(float(fr[0])),
                        *[repr(float(v)) for v in env.state.joint_pos[0]],
                        int(env.skill[0]), repr(float(env.command[0])), repr(float(rb.r_c[0])), repr(float(rb.r_SI[0]))])
            obs = nxt
