"""Soft actor-critic over (primitive, parameters) actions.

The primitive is drawn from a categorical head and the parameters from a
tanh-squashed Gaussian head specific to that primitive. Expectations over the
primitive are computed exactly; parameters use the reparameterization trick.
Two temperatures regulate the discrete and continuous entropies separately.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from ..config import TrainConfig
from ..primitives import N_PRIMITIVES, PrimitiveId
from .action import THETA_DIM, HybridAction, ParamSpace
from .networks import Actor, QNet

_LOG_2PI = math.log(2 * math.pi)


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class CheckpointCorrupt(RuntimeError):
    """Checkpoint unreadable or producing non-finite actions."""


@dataclass
class Batch:
    obs: torch.Tensor
    prim: torch.Tensor  # long
    theta: torch.Tensor  # unit box
    reward: torch.Tensor
    next_obs: torch.Tensor
    done: torch.Tensor  # float 0/1
    cost: torch.Tensor


class HybridSAC:
    def __init__(self, obs_dim: int, cfg: TrainConfig, space: ParamSpace, obs_scale: np.ndarray,
                 seed: int = 0, dtype: torch.dtype = torch.float32):
        self.cfg = cfg
        self.space = space
        self.dtype = dtype
        torch.manual_seed(seed)
        n, d = N_PRIMITIVES, THETA_DIM
        self.actor = Actor(obs_dim, cfg.hidden, n, d).to(dtype)
        self.q1 = QNet(obs_dim, cfg.hidden, n, d).to(dtype)
        self.q2 = QNet(obs_dim, cfg.hidden, n, d).to(dtype)
        self.q1_targ = copy.deepcopy(self.q1)
        self.q2_targ = copy.deepcopy(self.q2)
        for p in list(self.q1_targ.parameters()) + list(self.q2_targ.parameters()):
            p.requires_grad_(False)
        self.log_alpha_h = torch.tensor(math.log(cfg.init_alpha), dtype=dtype, requires_grad=True)
        self.log_alpha_l = torch.tensor(math.log(cfg.init_alpha), dtype=dtype, requires_grad=True)
        self.opt_actor = torch.optim.Adam(self.actor.parameters(), lr=cfg.lr)
        self.opt_critic = torch.optim.Adam(list(self.q1.parameters()) + list(self.q2.parameters()), lr=cfg.lr)
        self.opt_alpha = torch.optim.Adam([self.log_alpha_h, self.log_alpha_l], lr=cfg.lr)
        self.mask = torch.tensor(space.mask, dtype=dtype)
        self.eye = torch.eye(n, dtype=dtype)
        self.target_h = cfg.target_entropy_discrete * math.log(n)
        self.target_l = -cfg.target_entropy_scale * self.mask.sum(dim=1)
        self.obs_scale = torch.tensor(obs_scale, dtype=dtype)
        self.gen = torch.Generator().manual_seed(seed)
        self.alpha_active = True
        self.updates = 0

    # ------------------------------------------------------------------ policy

    def _scale(self, obs: torch.Tensor) -> torch.Tensor:
        return obs * self.obs_scale

    def _squash(self, mean: torch.Tensor, log_std: torch.Tensor, noise: torch.Tensor
                ) -> tuple[torch.Tensor, torch.Tensor]:
        """Squashed sample and masked log-density for every primitive head."""
        std = log_std.exp()
        u = mean + std * noise
        theta = torch.tanh(u)
        logp = -0.5 * noise.pow(2) - log_std - 0.5 * _LOG_2PI
        logp = logp - 2.0 * (math.log(2.0) - u - F.softplus(-2.0 * u))
        return theta, (logp * self.mask).sum(dim=-1)

    def _q_all(self, q1, q2, obs: torch.Tensor, theta: torch.Tensor) -> torch.Tensor:
        """min(Q1, Q2) for every primitive with its own parameters; (B, n)."""
        b, n = obs.shape[0], N_PRIMITIVES
        o = obs.unsqueeze(1).expand(b, n, obs.shape[1]).reshape(b * n, -1)
        hot = self.eye.unsqueeze(0).expand(b, n, n).reshape(b * n, n)
        th = (theta * self.mask).reshape(b * n, -1)
        return torch.min(q1(o, hot, th), q2(o, hot, th)).view(b, n)

    def policy_terms(self, obs_scaled: torch.Tensor, noise: torch.Tensor):
        logits, mean, log_std = self.actor(obs_scaled)
        logp_h = torch.log_softmax(logits, dim=-1)
        probs = logp_h.exp()
        theta, logp_l = self._squash(mean, log_std, noise)
        return probs, logp_h, theta, logp_l

    def policy_loss(self, obs_scaled: torch.Tensor, noise: torch.Tensor, values: Optional[torch.Tensor] = None
                    ) -> tuple[torch.Tensor, dict]:
        """Soft policy loss with the primitive expectation taken exactly.

        Under ``head_weighting="uniform"`` the categorical head weighs per-primitive soft
        values held constant (``values``, (B, n); the current ones when omitted) and every
        parameter head is trained with weight 1/n. A head's optimum maximizes its own soft
        value whatever the primitive's probability, so this keeps rarely chosen primitives
        improving instead of starving their heads of gradient.
        """
        alpha_h, alpha_l = self.log_alpha_h.exp().detach(), self.log_alpha_l.exp().detach()
        probs, logp_h, theta, logp_l = self.policy_terms(obs_scaled, noise)
        q = self._q_all(self.q1, self.q2, obs_scaled, theta)
        per_prim = alpha_l * logp_l - q
        ent_h = -(probs * logp_h).sum(dim=-1)
        if self.cfg.head_weighting == "uniform":
            fixed = per_prim.detach() if values is None else values
            inner = (probs * fixed).sum(dim=-1) + per_prim.mean(dim=-1)
        else:
            inner = (probs * per_prim).sum(dim=-1)
        loss = (inner - alpha_h * ent_h).mean()
        return loss, {"probs": probs, "logp_h": logp_h, "logp_l": logp_l, "ent_h": ent_h,
                      "values": per_prim.detach()}

    # ------------------------------------------------------------------ update

    def _noise(self, b: int) -> torch.Tensor:
        return torch.randn((b, N_PRIMITIVES, THETA_DIM), generator=self.gen, dtype=self.dtype)

    def critic_target(self, batch: Batch) -> torch.Tensor:
        with torch.no_grad():
            nxt = self._scale(batch.next_obs)
            probs, logp_h, theta, logp_l = self.policy_terms(nxt, self._noise(nxt.shape[0]))
            q = self._q_all(self.q1_targ, self.q2_targ, nxt, theta)
            alpha_h, alpha_l = self.log_alpha_h.exp(), self.log_alpha_l.exp()
            v = (probs * (q - alpha_l * logp_l)).sum(-1) - alpha_h * (probs * logp_h).sum(-1)
            if self.cfg.discount_mode == "atomic":
                disc = torch.pow(torch.as_tensor(self.cfg.discount, dtype=self.dtype), batch.cost)
            else:
                disc = torch.full_like(batch.reward, self.cfg.discount)
            return torch.where(batch.done > 0.5, batch.reward, batch.reward + disc * v)

    def taken_q(self, obs_scaled: torch.Tensor, prim: torch.Tensor, theta: torch.Tensor):
        hot = self.eye[prim]
        th = theta * self.mask[prim]
        return self.q1(obs_scaled, hot, th), self.q2(obs_scaled, hot, th)

    def update(self, batch: Batch) -> dict:
        obs = self._scale(batch.obs)
        y = self.critic_target(batch)
        q1, q2 = self.taken_q(obs, batch.prim, batch.theta)
        q_loss = 0.5 * ((q1 - y).pow(2).mean() + (q2 - y).pow(2).mean())
        self.opt_critic.zero_grad()
        q_loss.backward()
        self.opt_critic.step()

        # the critics are frozen for the policy step so no gradient is computed for them
        self._critics_trainable(False)
        try:
            pi_loss, aux = self.policy_loss(obs, self._noise(obs.shape[0]))
            self.opt_actor.zero_grad()
            pi_loss.backward()
        finally:
            self._critics_trainable(True)
        self.opt_actor.step()

        ent_h = aux["ent_h"].detach()
        ent_l = -(aux["probs"] * (aux["logp_l"] + self.target_l)).sum(-1).detach()
        if self.alpha_active:
            a_loss = (self.log_alpha_h * (ent_h - self.target_h)).mean() + (self.log_alpha_l * ent_l).mean()
            self.opt_alpha.zero_grad()
            a_loss.backward()
            self.opt_alpha.step()
        self.polyak()
        self.updates += 1
        diag = {"q_loss": float(q_loss.detach()), "policy_loss": float(pi_loss.detach()),
                "alpha_h": float(self.log_alpha_h.detach().exp()), "alpha_l": float(self.log_alpha_l.detach().exp()),
                "entropy_h": float(ent_h.mean()), "q_mean": float(q1.detach().mean())}
        if not all(math.isfinite(v) for v in diag.values()):
            raise TrainingDiverged(f"non-finite loss after {self.updates} updates", diag)
        return diag

    def _critics_trainable(self, flag: bool) -> None:
        for p in list(self.q1.parameters()) + list(self.q2.parameters()):
            p.requires_grad_(flag)

    @torch.no_grad()
    def polyak(self) -> None:
        tau = self.cfg.tau_net
        for net, targ in ((self.q1, self.q1_targ), (self.q2, self.q2_targ)):
            for p, tp in zip(net.parameters(), targ.parameters()):
                tp.copy_((1.0 - tau) * tp + tau * p)

    # ------------------------------------------------------------------ acting

    @torch.no_grad()
    def select_action(self, obs: np.ndarray, mode: str = "explore", uniform: bool = False) -> tuple[HybridAction, np.ndarray]:
        """Returns the action in physical units and the unit-box parameters."""
        if uniform:
            p = int(torch.randint(N_PRIMITIVES, (1,), generator=self.gen))
            unit = (torch.rand(THETA_DIM, generator=self.gen, dtype=self.dtype) * 2 - 1).numpy().astype(float)
            return HybridAction(PrimitiveId(p), self.space.to_physical(unit)), unit
        o = self._scale(torch.as_tensor(np.asarray(obs), dtype=self.dtype).unsqueeze(0))
        logits, mean, log_std = self.actor(o)
        if not (torch.isfinite(logits).all() and torch.isfinite(mean).all() and torch.isfinite(log_std).all()):
            raise CheckpointCorrupt("policy produced non-finite outputs")
        if mode == "greedy":
            p = int(torch.argmax(logits[0]))
            unit = torch.tanh(mean[0, p])
        elif mode == "explore":
            p = int(torch.multinomial(torch.softmax(logits[0], -1), 1, generator=self.gen))
            noise = torch.randn(THETA_DIM, generator=self.gen, dtype=self.dtype)
            unit = torch.tanh(mean[0, p] + log_std[0, p].exp() * noise)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        unit_np = unit.numpy().astype(float)
        return HybridAction(PrimitiveId(p), self.space.to_physical(unit_np)), unit_np

    # ------------------------------------------------------------------ state

    def state_tree(self) -> dict:
        return {
            "actor": self.actor.state_dict(), "q1": self.q1.state_dict(), "q2": self.q2.state_dict(),
            "q1_targ": self.q1_targ.state_dict(), "q2_targ": self.q2_targ.state_dict(),
            "log_alpha_h": self.log_alpha_h.detach().clone(), "log_alpha_l": self.log_alpha_l.detach().clone(),
            "opt_actor": self.opt_actor.state_dict(), "opt_critic": self.opt_critic.state_dict(),
            "opt_alpha": self.opt_alpha.state_dict(), "gen": self.gen.get_state(),
            "alpha_active": self.alpha_active, "updates": self.updates,
        }

    def load_state_tree(self, tree: dict) -> None:
        for name in ("actor", "q1", "q2", "q1_targ", "q2_targ"):
            getattr(self, name).load_state_dict(tree[name])
        with torch.no_grad():
            self.log_alpha_h.copy_(tree["log_alpha_h"])
            self.log_alpha_l.copy_(tree["log_alpha_l"])
        self.opt_actor.load_state_dict(tree["opt_actor"])
        self.opt_critic.load_state_dict(tree["opt_critic"])
        self.opt_alpha.load_state_dict(tree["opt_alpha"])
        self.gen.set_state(tree["gen"])
        self.alpha_active = bool(tree["alpha_active"])
        self.updates = int(tree["updates"])
