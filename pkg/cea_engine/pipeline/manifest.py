"""
Run manifest: what the batch pipeline analyses and where it writes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from cea_engine.exceptions import ConfigurationError
from cea_engine.glmm.densities import CostKind
from cea_engine.imputation.spec import Strategy


def parse_lambda_grid(text) -> Tuple[float, ...]:
    """
    Parse ``start:stop:step`` (inclusive) or a comma-separated list.

    Example:
        >>> parse_lambda_grid("0:3000:1000")
        (0.0, 1000.0, 2000.0, 3000.0)
    """
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    text = str(text).strip()
    try:
        if ":" in text:
            start, stop, step = (float(v) for v in text.split(":"))
            if step <= 0 or stop < start:
                raise ValueError("step must be positive and stop >= start")
            count = int(round((stop - start) / step)) + 1
            return tuple(start + i * step for i in range(count))
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as e:
        raise ConfigurationError(f"Invalid willingness-to-pay grid {text!r}: {e}") from e


@dataclass(frozen=True)
class RunManifest:
    """
    Inputs, strategies, cost distributions, grid, seed and output directory.

    ``cells()`` enumerates strategy x distribution in a fixed order, the
    layout of the per-arm and incremental result tables.
    """
    input_path: str
    out: str
    spec: Optional[str] = None
    strategies: Tuple[Strategy, ...] = tuple(Strategy)
    dists: Tuple[CostKind, ...] = tuple(CostKind)
    lambda_grid: Tuple[float, ...] = ()
    seed: int = 20121
    level: float = 0.95
    reference_lambda: float = 20000.0

    def __post_init__(self):
        object.__setattr__(self, "strategies", tuple(Strategy.parse(s) for s in self.strategies))
        object.__setattr__(self, "dists", tuple(CostKind.parse(d) for d in self.dists))
        object.__setattr__(self, "lambda_grid", tuple(float(v) for v in self.lambda_grid))
        if not self.strategies or not self.dists:
            raise ConfigurationError("A run needs at least one strategy and one cost distribution")
        if len(set(self.strategies)) != len(self.strategies) or len(set(self.dists)) != len(self.dists):
            raise ConfigurationError("Strategies and distributions must not repeat")

    def cells(self) -> List[Tuple[Strategy, CostKind]]:
        return [(s, d) for s in self.strategies for d in self.dists]

    @staticmethod
    def strategy_key(strategy: Strategy) -> int:
        """Stable index of a strategy, mixed into its imputation seeds."""
        return list(Strategy).index(Strategy.parse(strategy))

    @classmethod
    def from_values(cls, input_path: str, out: str, spec: Optional[str] = None,
                    strategies: Optional[Sequence] = None, dists: Optional[Sequence] = None,
                    lambda_grid=None, seed: Optional[int] = None, defaults=None) -> "RunManifest":
        """Combine command-line values with an ``EngineConfig`` (``defaults``) for anything left unset."""
        kwargs = dict(input_path=input_path, out=out, spec=spec)
        if strategies:
            kwargs["strategies"] = tuple(strategies)
        if dists:
            kwargs["dists"] = tuple(dists)
        if lambda_grid is not None:
            kwargs["lambda_grid"] = parse_lambda_grid(lambda_grid)
        elif defaults is not None:
            kwargs["lambda_grid"] = tuple(defaults.lambda_grid())
        if seed is not None:
            kwargs["seed"] = int(seed)
        elif defaults is not None:
            kwargs["seed"] = int(defaults.seed)
        if defaults is not None:
            kwargs["level"] = float(defaults.confidence_level)
            kwargs["reference_lambda"] = float(defaults.reference_lambda)
        return cls(**kwargs)
