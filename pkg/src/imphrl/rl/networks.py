"""Actor and critic networks for the hybrid action space."""

from __future__ import annotations

from typing import Sequence

import torch
from torch import nn

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0


def mlp(inp: int, hidden: Sequence[int], out: int) -> nn.Sequential:
    layers: list[nn.Module] = []
    last = inp
    for h in hidden:
        layers += [nn.Linear(last, h), nn.ReLU()]
        last = h
    layers.append(nn.Linear(last, out))
    return nn.Sequential(*layers)


class Actor(nn.Module):
    """Shared trunk with a categorical head over primitives and one Gaussian
    head (mean, log-std) per primitive over the full parameter vector."""

    def __init__(self, obs_dim: int, hidden: Sequence[int], n_prim: int, theta_dim: int):
        super().__init__()
        self.n_prim, self.theta_dim = n_prim, theta_dim
        self.trunk = mlp(obs_dim, hidden[:-1], hidden[-1])
        self.logits = nn.Linear(hidden[-1], n_prim)
        self.mean = nn.Linear(hidden[-1], n_prim * theta_dim)
        self.log_std = nn.Linear(hidden[-1], n_prim * theta_dim)

    def forward(self, obs: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        h = torch.relu(self.trunk(obs))
        shape = (obs.shape[0], self.n_prim, self.theta_dim)
        log_std = self.log_std(h).view(shape).clamp(LOG_STD_MIN, LOG_STD_MAX)
        return self.logits(h), self.mean(h).view(shape), log_std


class QNet(nn.Module):
    """Q(obs, one-hot primitive, masked parameters)."""

    def __init__(self, obs_dim: int, hidden: Sequence[int], n_prim: int, theta_dim: int):
        super().__init__()
        self.net = mlp(obs_dim + n_prim + theta_dim, hidden, 1)

    def forward(self, obs: torch.Tensor, onehot: torch.Tensor, theta: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([obs, onehot, theta], dim=-1)).squeeze(-1)
