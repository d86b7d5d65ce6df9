"""Model configuration and the named-parameter registry shared by the
context encoder, goal heads, and rollout decoder."""

from __future__ import annotations

from dataclasses import dataclass, asdict

from . import encoder, goals, numerics, rollout


@dataclass
class ModelConfig:
    context_slots: int = 14          # surrounding-agent polyline slots
    max_lanes: int = 6               # future-lane path slots per agent
    goals_per_lane: int = 200
    top_k: int = 5                   # goal modes kept per agent
    graph_layers: int = 3
    graph_width: int = 16            # first graph layer width; doubles per layer
    head_hidden: int = 128
    gru_hidden: int = 128
    gru_layers: int = 2
    pos_scale: float = 0.1           # meters -> network input units
    nms_radius: float = 2.0
    traj_loss_mask_nonbest: bool = False

    @property
    def total_goals(self) -> int:
        return self.max_lanes * self.goals_per_lane

    @property
    def local_dim(self) -> int:
        # node width doubles each layer: final polyline feature width
        return self.graph_width * (2 ** self.graph_layers)

    @property
    def agent_feature_dim(self) -> int:
        return 2 * self.local_dim

    @property
    def goal_feature_dim(self) -> int:
        return 3 * self.local_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def init_parameters(cfg: ModelConfig, seed: int = 0) -> numerics.ParameterStore:
    """Create every trainable parameter, seeded so values depend only on
    (seed, name)."""
    store = numerics.ParameterStore(seed=seed)
    encoder.init_params(store, cfg)
    goals.init_params(store, cfg)
    rollout.init_params(store, cfg)
    return store


# Parameter groups for the staged optimizer updates.
GROUP_PREFIXES = {
    "encoder": ("enc.local.", "enc.att."),
    "seg_a": ("goal.A.seg.",),
    "reg_a": ("goal.A.reg.",),
    "seg_b": ("goal.B.seg.",),
    "reg_b": ("goal.B.reg.",),
    "enc_gru": ("enc.gru.",),
    "dec_gru": ("dec.gru.", "dec.init."),
    "traj_head": ("dec.traj.",),
}


def group_names(store: numerics.ParameterStore, *groups: str) -> list[str]:
    prefixes = tuple(p for g in groups for p in GROUP_PREFIXES[g])
    return [n for n in store.names() if n.startswith(prefixes)]
