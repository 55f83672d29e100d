"""Engine configuration with documented defaults.

All thresholds and pool sizes live here so tests and the CLI share a single
source of truth. ``EngineConfig.validate`` enforces the cross-field
invariants; everything else treats the config as immutable.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError


@dataclass(frozen=True)
class EngineConfig:
    """Knobs for memory construction, topic evolution and retrieval."""

    tau_merge: float = 0.7        # redundancy threshold for Merge
    tau_link: float = 0.5         # complementarity threshold for Link
    k_topic: int = 3              # topic centroids probed per query
    k_key: int = 10               # keyword matches per query key
    k_final: int = 20             # fused evidence pool budget
    i_max: int = 3                # refinement-loop hard stop
    expansion_hops: int = 1       # related-edge traversal depth
    rrf_k: float = 60.0           # rank-fusion damping constant
    delta_min: int = 2            # topic cardinality lower bound
    delta_max: int = 50           # topic cardinality upper bound
    evolve_every: int = 50        # ingests between automatic topic passes
    candidate_pool: int = 10      # consolidation candidate cap
    embedding_dim: int = 256
    temperature_general: float = 0.7
    temperature_adversarial: float = 0.5
    seed: int = 0                 # drives topic-evolution determinism
    index_mode: str = "auto"      # "exact", "approx", or "auto"
    exact_index_threshold: int = 4096
    confidence_stop: float | None = None  # optional early-stop on verdict confidence

    def validate(self) -> None:
        if not (0.0 < self.tau_link <= self.tau_merge < 1.0):
            raise ConfigError(
                f"need 0 < tau_link <= tau_merge < 1, got "
                f"tau_link={self.tau_link}, tau_merge={self.tau_merge}"
            )
        for name in ("k_topic", "k_key", "k_final", "i_max", "expansion_hops",
                     "evolve_every", "candidate_pool", "embedding_dim"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.rrf_k <= 0:
            raise ConfigError("rrf_k must be positive")
        if not (0 < self.delta_min <= self.delta_max):
            raise ConfigError(
                f"need 0 < delta_min <= delta_max, got "
                f"delta_min={self.delta_min}, delta_max={self.delta_max}"
            )
        if self.index_mode not in ("exact", "approx", "auto"):
            raise ConfigError(f"unknown index_mode: {self.index_mode!r}")
        if self.confidence_stop is not None and not (0.0 <= self.confidence_stop <= 1.0):
            raise ConfigError("confidence_stop must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EngineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg


@dataclass
class ProviderConfig:
    """Where embeddings and chat completions come from.

    ``mode="mock"`` needs no network settings; ``mode="remote"`` requires
    both endpoints.
    """

    mode: str = "mock"                      # "mock" or "remote"
    llm_base_url: str = ""
    llm_model: str = ""
    embed_base_url: str = ""
    embed_model: str = ""
    hash_seed: int = 0
    request_timeout: float = 30.0
    answer_template: str = (
        "Answer the question using only the evidence below. "
        "Reply with the shortest exact answer.\n\n"
        "Evidence:\n{context}\n\nQuestion: {question}\n\nAnswer:"
    )

    def validate(self) -> None:
        if self.mode not in ("mock", "remote"):
            raise ConfigError(f"unknown provider mode: {self.mode!r}")
        if self.mode == "remote":
            missing = [
                name for name in
                ("llm_base_url", "llm_model", "embed_base_url", "embed_model")
                if not getattr(self, name)
            ]
            if missing:
                raise ConfigError(f"remote mode requires: {missing}")
