"""FIFO replay buffer of hybrid-action transitions."""

from __future__ import annotations

import numpy as np
import torch

from .action import THETA_DIM
from .sac import Batch

_FIELDS = ("obs", "prim", "theta", "reward", "next_obs", "done", "cost")


class ReplayBuffer:
    """Ring buffer; storage grows by doubling so small runs stay small."""

    def __init__(self, obs_dim: int, capacity: int, initial: int = 1024):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.obs_dim = obs_dim
        self.capacity = int(capacity)
        self.size = 0
        self.head = 0  # next write slot once full
        self._alloc(min(initial, self.capacity))

    def _alloc(self, n: int) -> None:
        new = {
            "obs": np.zeros((n, self.obs_dim)), "prim": np.zeros(n, dtype=np.int64),
            "theta": np.zeros((n, THETA_DIM)), "reward": np.zeros(n), "next_obs": np.zeros((n, self.obs_dim)),
            "done": np.zeros(n), "cost": np.zeros(n),
        }
        if hasattr(self, "data"):
            for k in _FIELDS:
                new[k][: self.size] = self.data[k][: self.size]
        self.data = new

    def __len__(self) -> int:
        return self.size

    def add(self, obs, prim: int, theta, reward: float, next_obs, done: bool, cost: int) -> None:
        if self.size < self.capacity:
            if self.size == len(self.data["reward"]):
                self._alloc(min(2 * self.size, self.capacity))
            i = self.size
            self.size += 1
        else:
            i = self.head
            self.head = (self.head + 1) % self.capacity
        row = (obs, prim, theta, reward, next_obs, float(done), cost)
        for k, v in zip(_FIELDS, row):
            self.data[k][i] = v

    def ordered(self, field: str) -> np.ndarray:
        """Stored values oldest first."""
        arr = self.data[field][: self.size]
        return np.concatenate([arr[self.head:], arr[: self.head]]) if self.size == self.capacity else arr

    def sample(self, batch_size: int, rng: np.random.Generator, dtype: torch.dtype = torch.float32) -> Batch:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        t = {k: torch.as_tensor(self.data[k][idx]) for k in _FIELDS}
        return Batch(obs=t["obs"].to(dtype), prim=t["prim"], theta=t["theta"].to(dtype),
                     reward=t["reward"].to(dtype), next_obs=t["next_obs"].to(dtype), done=t["done"].to(dtype),
                     cost=t["cost"].to(dtype))

    def state_tree(self) -> dict:
        return {"capacity": self.capacity, "size": self.size, "head": self.head,
                **{k: self.data[k][: self.size].copy() for k in _FIELDS}}

    def load_state_tree(self, tree: dict) -> None:
        self.capacity = int(tree["capacity"])
        self.size = 0
        del self.data
        self._alloc(max(1, int(tree["size"])))
        self.size = int(tree["size"])
        self.head = int(tree["head"])
        for k in _FIELDS:
            self.data[k][: self.size] = tree[k]
