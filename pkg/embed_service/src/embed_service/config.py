"""Service configuration.

Advertised dims are fixed at construction and constant for the process
lifetime; clients may cache them from /v1/health.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class ServiceConfig:
    # model identifiers; "deterministic" selects the seeded stub backend,
    # anything else must match a registered loader or startup is refused
    dense_model: str = "deterministic"
    fused_model: str = "deterministic"
    scorer_model: str = "deterministic"
    generator_model: str = "deterministic"
    device: str = "cpu"
    max_batch: int = 64
    max_text_chars: int = 8192
    port: int = 8080
    dense_dims: int = 256
    fused_dims: int = 64
    fused_rows: int = field(default=32, init=False)  # protocol constant

    def __post_init__(self) -> None:
        if self.max_batch < 1:
            raise ValueError("max_batch must be >= 1")
        if self.dense_dims < 1 or self.fused_dims < 1:
            raise ValueError("dims must be >= 1")
        if self.max_text_chars < 1:
            raise ValueError("max_text_chars must be >= 1")
