"""Deterministic sample stream over several data sources."""

from __future__ import annotations

from pathlib import Path
from typing import Callable, Generic, Iterator, Sequence, TypeVar

import numpy as np

from app.core.errors import ConfigurationError
from app.core.logging import get_logger
from app.modules.dialog_data import read_records
from app.modules.train_engine.models import MixerConfig

logger = get_logger(__name__)

T = TypeVar("T")


class MixtureStream(Generic[T]):
    """Infinite stream of ``(source_name, item)``.

    Unweighted: all sources are concatenated and reshuffled every epoch, so each
    source is drawn in proportion to its size. Weighted: every draw picks a
    source by weight, then takes the next item of that source's own reshuffled
    cycle. The stream is a pure function of ``(seed, position)``.
    """

    def __init__(
        self, pools: dict[str, Sequence[T]], seed: int, weights: dict[str, float] | None = None
    ) -> None:
        if not pools:
            raise ConfigurationError("mixture needs at least one source")
        for name, pool in pools.items():
            if len(pool) == 0:
                raise ConfigurationError(f"source {name!r} is empty")
        self.names = list(pools)
        self.pools = pools
        self.seed = seed
        self.weights = None
        if weights is not None:
            w = np.array([weights[n] for n in self.names], dtype=np.float64)
            if (w <= 0).any():
                raise ConfigurationError("mixture weights must be positive")
            self.weights = w / w.sum()
        self._flat = [(n, i) for n in self.names for i in range(len(pools[n]))]
        self.position = 0
        self._reset()

    def __len__(self) -> int:
        """Items per epoch."""
        return len(self._flat)

    def _perm(self, key: int, epoch: int, n: int) -> np.ndarray:
        return np.random.default_rng([self.seed, key, epoch]).permutation(n)

    def _reset(self) -> None:
        self._picker = np.random.default_rng([self.seed, 0xC0FFEE])
        self._cursor = {n: 0 for n in self.names}
        self._cached_perm: dict[tuple[int, int], np.ndarray] = {}

    def _perm_cached(self, key: int, epoch: int, n: int) -> np.ndarray:
        ck = (key, epoch)
        if ck not in self._cached_perm:
            # only the current epoch of each key is needed
            self._cached_perm = {k: v for k, v in self._cached_perm.items() if k[0] != key}
            self._cached_perm[ck] = self._perm(key, epoch, n)
        return self._cached_perm[ck]

    def _draw(self) -> tuple[str, T]:
        if self.weights is None:
            n = len(self._flat)
            epoch, offset = divmod(self.position, n)
            name, idx = self._flat[int(self._perm_cached(0, epoch, n)[offset])]
        else:
            s = int(self._picker.choice(len(self.names), p=self.weights))
            name = self.names[s]
            n = len(self.pools[name])
            epoch, offset = divmod(self._cursor[name], n)
            idx = int(self._perm_cached(s + 1, epoch, n)[offset])
            self._cursor[name] += 1
        self.position += 1
        return name, self.pools[name][idx]

    def __iter__(self) -> Iterator[tuple[str, T]]:
        while True:
            yield self._draw()

    def take(self, n: int) -> list[tuple[str, T]]:
        return [self._draw() for _ in range(n)]

    def seek(self, position: int) -> None:
        """Jump to an absolute draw count; weighted streams replay their picks."""
        if position < 0:
            raise ConfigurationError("stream position must be >= 0")
        if self.weights is None:
            self.position = position
            return
        self._reset()
        self.position = 0
        for _ in range(position):
            s = int(self._picker.choice(len(self.names), p=self.weights))
            self._cursor[self.names[s]] += 1
            self.position += 1


def build_mixture(
    mixer: MixerConfig,
    seed: int,
    *,
    loader: Callable[[Path], Sequence[T]] = read_records,  # type: ignore[assignment]
    base_dir: Path | None = None,
) -> MixtureStream[T]:
    pools: dict[str, Sequence[T]] = {}
    for src in mixer.sources:
        path = Path(src.path)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        pools[src.name] = loader(path)
        logger.info("mixture source %s: %d samples from %s", src.name, len(pools[src.name]), path)
    weights = {s.name: float(s.weight) for s in mixer.sources} if mixer.weighted else None  # type: ignore[arg-type]
    return MixtureStream(pools, seed, weights)
