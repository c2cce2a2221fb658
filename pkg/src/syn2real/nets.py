"""Desk-scale networks: the dual-head optimizee with its frozen reference
copy, the coordinate partition driving per-group learning rates, and the
recurrent controller network.

The optimizee backbone is three 3x3 conv stages (stride 1, 2, 2), a global
mean pool and a dense trunk producing a feature vector that both heads
consume. No batch normalization anywhere: the frozen reference copy must
behave identically regardless of input history. Coordinates: one group per
resolution stage (the trunk joins the last stage), plus one group per head;
the frozen old head contributes an empty group, so scale actions on it are
no-ops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError, ShapeError, ValidationError
from .tensor import Tensor, init_lstm_weights, lstm_cell, no_grad, ops

F32 = np.float32

NUM_ACTIONS = 11  # learning-rate scale factors 0.0, 0.1, ..., 1.0
ACTION_SCALES = np.arange(NUM_ACTIONS, dtype=np.float64) / 10.0


@dataclass(frozen=True)
class ArchSpec:
    name: str
    dense_task: bool
    image_size: int = 16
    in_channels: int = 1
    channels: tuple = (16, 32, 32)
    strides: tuple = (1, 2, 2)
    ksize: int = 3
    feature_dim: int = 64
    num_old_classes: int = 4
    num_new_classes: int = 4


ARCHITECTURES = {
    "toy_cnn": ArchSpec(name="toy_cnn", dense_task=False),
    "toy_dense_net": ArchSpec(name="toy_dense_net", dense_task=True, num_new_classes=2),
}


class CoordinateMap:
    """Ordered, named partition of the trainable parameters."""

    def __init__(self, groups: list[tuple[str, list[Tensor]]]):
        if len(groups) < 2:
            raise ValidationError(f"need at least 2 coordinates, got {len(groups)}")
        seen: set[int] = set()
        for name, params in groups:
            for p in params:
                if not p.requires_grad:
                    raise ValidationError(
                        f"frozen parameter {p.name!r} assigned to coordinate {name!r}")
                if id(p) in seen:
                    raise ValidationError(f"parameter {p.name!r} in two coordinates")
                seen.add(id(p))
        self.groups = groups

    def __len__(self) -> int:
        return len(self.groups)

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.groups]

    def all_params(self) -> list[Tensor]:
        return [p for _, params in self.groups for p in params]


def _he_conv(rng, out_c, in_c, k):
    std = np.sqrt(2.0 / (in_c * k * k))
    return (rng.standard_normal((out_c, in_c, k, k)) * std).astype(F32)


def _dense_init(rng, fan_in, fan_out, gain=2.0):
    std = np.sqrt(gain / fan_in)
    return (rng.standard_normal((fan_in, fan_out)) * std).astype(F32)


class DualHeadModel:
    """Shared backbone with a new-task head, a frozen old-task head, and a
    fully frozen reference copy of the backbone."""

    def __init__(self, arch: ArchSpec, seed: int):
        self.arch = arch
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        cs, ks = arch.channels, arch.ksize
        in_chs = (arch.in_channels,) + cs[:-1]

        self.backbone: list[Tensor] = []
        for i, (ci, co) in enumerate(zip(in_chs, cs), start=1):
            self.backbone.append(Tensor(_he_conv(rng, co, ci, ks),
                                        requires_grad=True, name=f"backbone.conv{i}.w"))
            self.backbone.append(Tensor(np.zeros(co, dtype=F32),
                                        requires_grad=True, name=f"backbone.conv{i}.b"))
        self.backbone.append(Tensor(_dense_init(rng, cs[-1], arch.feature_dim),
                                    requires_grad=True, name="backbone.trunk.w"))
        self.backbone.append(Tensor(np.zeros(arch.feature_dim, dtype=F32),
                                    requires_grad=True, name="backbone.trunk.b"))

        self.old_head = [
            Tensor(_dense_init(rng, arch.feature_dim, arch.num_old_classes, gain=1.0),
                   requires_grad=False, name="old_head.w"),
            Tensor(np.zeros(arch.num_old_classes, dtype=F32),
                   requires_grad=False, name="old_head.b"),
        ]
        self.new_head = self._init_new_head(rng)
        self.ref_backbone = [
            Tensor(p.data.copy(), requires_grad=False, name="ref." + p.name.split(".", 1)[1])
            for p in self.backbone
        ]
        self.coord_map = self._build_coord_map()

    def _init_new_head(self, rng) -> list[Tensor]:
        arch = self.arch
        if arch.dense_task:
            # per-pixel head: 3x3 conv over the full-resolution stage-1 features
            w = _he_conv(rng, arch.num_new_classes, arch.channels[0], arch.ksize)
        else:
            w = _dense_init(rng, arch.feature_dim, arch.num_new_classes, gain=1.0)
        return [
            Tensor(w, requires_grad=True, name="new_head.w"),
            Tensor(np.zeros(arch.num_new_classes, dtype=F32),
                   requires_grad=True, name="new_head.b"),
        ]

    def _build_coord_map(self) -> CoordinateMap:
        groups: list[tuple[str, list[Tensor]]] = []
        n_stages = len(self.arch.channels)
        for i in range(n_stages):
            groups.append((f"stage{i + 1}", self.backbone[2 * i:2 * i + 2]))
        groups[-1] = (groups[-1][0], groups[-1][1] + self.backbone[2 * n_stages:])
        groups.append(("new_head", list(self.new_head)))
        groups.append(("old_head", []))  # frozen params belong to no group
        return CoordinateMap(groups)

    # -- forward passes --------------------------------------------------------

    def _features(self, x: Tensor, params: list[Tensor]) -> tuple[Tensor, Tensor]:
        """Returns (full-resolution stage-1 activation, trunk feature)."""
        if x.data.ndim != 4 or x.shape[1] != self.arch.in_channels:
            raise ShapeError(
                f"{self.arch.name}: input shape {x.shape} does not match "
                f"(N, {self.arch.in_channels}, H, W)")
        a = x
        first = None
        for i, stride in enumerate(self.arch.strides):
            a = ops.relu(ops.conv2d(a, params[2 * i], bias=params[2 * i + 1],
                                    stride=stride, padding="same"))
            if first is None:
                first = a
        pooled = ops.flatten(ops.mean_pool2d(a, a.shape[2], a.shape[3]))
        feat = ops.relu(ops.matmul(pooled, params[-2], bias=params[-1]))
        return first, feat

    def _apply_new_head(self, stage1: Tensor, feat: Tensor) -> Tensor:
        if self.arch.dense_task:
            return ops.conv2d(stage1, self.new_head[0], bias=self.new_head[1],
                              stride=1, padding="same")
        return ops.matmul(feat, self.new_head[0], bias=self.new_head[1])

    def forward_new(self, x: Tensor) -> Tensor:
        s1, feat = self._features(x, self.backbone)
        return self._apply_new_head(s1, feat)

    def forward_old(self, x: Tensor) -> Tensor:
        _, feat = self._features(x, self.backbone)
        return ops.matmul(feat, self.old_head[0], bias=self.old_head[1])

    def forward_dual(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """(new logits, live old logits, frozen-reference old logits); the
        two live branches share one backbone pass, the reference branch
        records no gradient."""
        s1, feat = self._features(x, self.backbone)
        new_logits = self._apply_new_head(s1, feat)
        old_live = ops.matmul(feat, self.old_head[0], bias=self.old_head[1])
        with no_grad():
            _, feat_ref = self._features(x, self.ref_backbone)
            old_ref = ops.matmul(feat_ref, self.old_head[0], bias=self.old_head[1])
        return new_logits, old_live, old_ref

    def forward_proxy(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """(live old logits, frozen-reference old logits) without the new head."""
        _, feat = self._features(x, self.backbone)
        old_live = ops.matmul(feat, self.old_head[0], bias=self.old_head[1])
        with no_grad():
            _, feat_ref = self._features(x, self.ref_backbone)
            old_ref = ops.matmul(feat_ref, self.old_head[0], bias=self.old_head[1])
        return old_live, old_ref

    # -- parameter management --------------------------------------------------

    def trainable_params(self) -> list[Tensor]:
        return self.backbone + self.new_head

    def frozen_params(self) -> list[Tensor]:
        return self.ref_backbone + self.old_head

    def named_params(self) -> dict[str, Tensor]:
        out = {}
        for p in self.backbone + self.new_head + self.old_head + self.ref_backbone:
            out[p.name] = p
        return out

    def zero_grad(self) -> None:
        for p in self.trainable_params():
            p.grad = None

    def set_old_head_trainable(self, flag: bool) -> None:
        """Pretraining is the only caller; the old head is frozen otherwise."""
        for p in self.old_head:
            p.requires_grad = flag
            p.grad = None

    def snapshot_reference(self, new_head_rng: np.random.Generator) -> None:
        """Freeze the current backbone as the reference copy and start a
        fresh new-task head."""
        for live, ref in zip(self.backbone, self.ref_backbone):
            ref.data = live.data.copy()
        rng = new_head_rng
        fresh = self._init_new_head(rng)
        for cur, new in zip(self.new_head, fresh):
            cur.data = new.data
            cur.grad = None

    def reset_to_reference(self, new_head_rng: np.random.Generator) -> None:
        """Restart transfer training: live backbone back to the reference
        weights, fresh new head, grads cleared."""
        for live, ref in zip(self.backbone, self.ref_backbone):
            live.data = ref.data.copy()
            live.grad = None
        fresh = self._init_new_head(new_head_rng)
        for cur, new in zip(self.new_head, fresh):
            cur.data = new.data
            cur.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_params().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        named = self.named_params()
        missing = sorted(set(named) - set(state))
        extra = sorted(set(state) - set(named))
        if missing or extra:
            raise ValidationError(
                f"checkpoint does not match model: missing={missing} extra={extra}")
        for name, p in named.items():
            arr = np.asarray(state[name], dtype=F32)
            if arr.shape != p.data.shape:
                raise ShapeError(
                    f"checkpoint tensor {name!r} has shape {arr.shape}, "
                    f"model expects {p.data.shape}")
            p.data = arr.copy()
            p.grad = None

    def reference_bytes(self) -> bytes:
        """Concatenated frozen-parameter payload, for immutability checks."""
        return b"".join(p.data.tobytes() for p in self.frozen_params())


def build_optimizee(arch: str, rng_seed: int) -> DualHeadModel:
    """Construct a registered architecture with seeded, reproducible init."""
    spec = ARCHITECTURES.get(arch)
    if spec is None:
        raise ValidationError(
            f"unknown architecture {arch!r}; registered: {sorted(ARCHITECTURES)}")
    return DualHeadModel(spec, rng_seed)


# --------------------------------------------------------------------------
# controller network


class PolicyNetwork:
    """Observation -> linear embedding -> tanh -> LSTM (hidden 20) ->
    one categorical head of NUM_ACTIONS logits per coordinate."""

    def __init__(self, obs_dim: int, num_coords: int, num_actions: int = NUM_ACTIONS,
                 hidden: int = 20, seed: int = 0):
        self.obs_dim = obs_dim
        self.num_coords = num_coords
        self.num_actions = num_actions
        self.hidden = hidden
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        self.embed_w = Tensor(_dense_init(rng, obs_dim, hidden, gain=1.0),
                              requires_grad=True, name="policy.embed.w")
        self.embed_b = Tensor(np.zeros(hidden, dtype=F32),
                              requires_grad=True, name="policy.embed.b")
        self.lstm = init_lstm_weights(hidden, hidden, rng, prefix="policy.lstm")
        self.heads: list[tuple[Tensor, Tensor]] = []
        for c in range(num_coords):
            w = Tensor(_dense_init(rng, hidden, num_actions, gain=1.0),
                       requires_grad=True, name=f"policy.head{c}.w")
            b = Tensor(np.zeros(num_actions, dtype=F32),
                       requires_grad=True, name=f"policy.head{c}.b")
            self.heads.append((w, b))

    def initial_state(self) -> tuple[Tensor, Tensor]:
        z = np.zeros((1, self.hidden), dtype=F32)
        return Tensor(z.copy()), Tensor(z.copy())

    def parameters(self) -> list[Tensor]:
        ps = [self.embed_w, self.embed_b,
              self.lstm["wx"], self.lstm["wh"], self.lstm["b"]]
        for w, b in self.heads:
            ps.extend([w, b])
        return ps

    def named_params(self) -> dict[str, Tensor]:
        return {p.name: p for p in self.parameters()}

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_params().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        named = self.named_params()
        missing = sorted(set(named) - set(state))
        extra = sorted(set(state) - set(named))
        if missing or extra:
            raise ValidationError(
                f"policy checkpoint mismatch: missing={missing} extra={extra}")
        for name, p in named.items():
            arr = np.asarray(state[name], dtype=F32)
            if arr.shape != p.data.shape:
                raise ShapeError(f"policy tensor {name!r} shape {arr.shape} unexpected")
            p.data = arr.copy()
            p.grad = None

    def weights_bytes(self) -> bytes:
        return b"".join(p.data.tobytes() for p in self.parameters())

    def step(self, obs: np.ndarray, state: tuple[Tensor, Tensor],
             rng: np.random.Generator | None = None, greedy: bool = False,
             ) -> tuple[np.ndarray, Tensor, tuple[Tensor, Tensor]]:
        """Advance one step: sample (or argmax) one category per coordinate.

        Returns (action indices, joint log-probability tensor, new state).
        The joint log-probability is the sum of the per-coordinate terms and
        is differentiable through the recurrent state.
        """
        obs = np.asarray(obs, dtype=F32).reshape(1, -1)
        if obs.shape[1] != self.obs_dim:
            raise ShapeError(
                f"observation dim {obs.shape[1]} != policy input dim {self.obs_dim}")
        if not np.all(np.isfinite(obs)):
            raise NonFiniteError("policy observation contains non-finite entries")
        if not greedy and rng is None:
            raise ValidationError("sampled policy step requires an rng")
        x = ops.tanh(ops.matmul(Tensor(obs), self.embed_w, bias=self.embed_b))
        h, c = lstm_cell(x, state[0], state[1], self.lstm)
        actions = np.empty(self.num_coords, dtype=np.int64)
        logp_terms = []
        for ci, (w, b) in enumerate(self.heads):
            logits = ops.matmul(h, w, bias=b)
            lsm = ops.log_softmax(logits, axis=1)
            probs = np.exp(lsm.data.astype(np.float64)[0])
            probs = probs / probs.sum()
            if greedy:
                a = int(np.argmax(probs))
            else:
                a = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
                a = min(a, self.num_actions - 1)
            actions[ci] = a
            logp_terms.append(ops.slice_(lsm, 1, a, a + 1))
        log_prob = ops.sum(ops.concat(logp_terms, axis=1))
        return actions, log_prob, (h, c)


def policy_step(pi: PolicyNetwork, obs: np.ndarray, state: tuple[Tensor, Tensor],
                rng: np.random.Generator):
    """Sampled controller step (argmax variant: ``pi.step(..., greedy=True)``)."""
    return pi.step(obs, state, rng=rng, greedy=False)
