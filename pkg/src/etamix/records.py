from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class RunRecord:
    """Per-episode metric series of one (config, seed) run."""

    config_id: str
    seed: int
    series: list[float]
    params: dict = field(default_factory=dict)
    duration: float = 0.0
    failed: bool = False
    error: str = ""
