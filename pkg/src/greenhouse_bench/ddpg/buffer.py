from __future__ import annotations

from typing import NamedTuple

import numpy as np


class Batch(NamedTuple):
    s: np.ndarray         # (N, n_obs)
    a: np.ndarray         # (N, n_act)
    r: np.ndarray         # (N,)
    s_next: np.ndarray    # (N, n_obs)
    terminal: np.ndarray  # (N,) bool


class ReplayBuffer:
    """Fixed-capacity FIFO of transitions with uniform minibatch sampling."""

    def __init__(self, capacity: int = 10_000, n_obs: int = 10, n_act: int = 3):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.s = np.zeros((capacity, n_obs))
        self.a = np.zeros((capacity, n_act))
        self.r = np.zeros(capacity)
        self.s_next = np.zeros((capacity, n_obs))
        self.terminal = np.zeros(capacity, dtype=bool)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(self, s, a, r, s_next, terminal) -> None:
        i = self._next
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.s_next[i] = s_next
        self.terminal[i] = terminal
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def indices_oldest_first(self) -> np.ndarray:
        if self._size < self.capacity:
            return np.arange(self._size)
        return (self._next + np.arange(self.capacity)) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniform draw of distinct transitions."""
        if batch_size > self._size:
            raise ValueError(f"cannot sample {batch_size} from {self._size} transitions")
        idx = rng.choice(self._size, size=batch_size, replace=False)
        return self.batch(idx)

    def batch(self, idx) -> Batch:
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.terminal[idx])

    def state_arrays(self) -> dict:
        order = self.indices_oldest_first()
        return {"s": self.s[order], "a": self.a[order], "r": self.r[order],
                "s_next": self.s_next[order], "terminal": self.terminal[order]}

    @classmethod
    def from_arrays(cls, capacity: int, arrays: dict) -> "ReplayBuffer":
        s = arrays["s"]
        buf = cls(capacity, s.shape[1] if s.ndim == 2 else 10, arrays["a"].shape[1] if arrays["a"].ndim == 2 else 3)
        for i in range(len(s)):
            buf.add(s[i], arrays["a"][i], arrays["r"][i], arrays["s_next"][i], arrays["terminal"][i])
        return buf
