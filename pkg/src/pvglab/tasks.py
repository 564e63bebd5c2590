"""Task definitions: data generators and agent builders.

Two tasks share one interface.  ``BECTask`` is the neural erasure
channel: the input is a single bit, the prover emits one of K tokens,
and the channel optionally forbids the two revealing tokens on the wrong
inputs.  ``PlusTask`` is the simplified find-the-plus search: binary
10x10 images contain exactly one 3x3 plus, drawn either as ones on a
zero background ("blue", label 1) or zeros on a one background ("red",
label 0); the prover points at a grid coordinate and the verifier sees
only the 3x3 crop there.

Label convention for find-the-plus follows the protocol framing: label 1
means a blue plus is present and that is the answer the prover defends.
The generators take explicit RNG streams and are pure given them.
"""

from dataclasses import dataclass, field

import numpy as np

from . import nnkit as nn
from .errors import ConfigError, UsageError


@dataclass
class Batch:
    inputs: np.ndarray  # (n, input_dim) float
    y: np.ndarray  # (n,) int in {0,1}
    y_prime: np.ndarray  # (n,) int in {0,1}, the defended labels
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (len(self.inputs) == len(self.y) == len(self.y_prime)):
            raise ConfigError("batch fields must have aligned lengths")

    def __len__(self):
        return len(self.y)


@dataclass
class Network:
    spec: nn.NetworkSpec
    params: dict

    def forward(self, x):
        return nn.forward(self.spec, self.params, x)

    def copy(self) -> "Network":
        return Network(self.spec, {k: v.copy() for k, v in self.params.items()})


@dataclass
class AgentPair:
    """Prover trunk + message head, a verifier, and the channel wiring.

    The trunk/head split exists so pretraining can attach auxiliary
    heads to the trunk while leaving the message head untouched.
    """

    prover_trunk: Network
    prover_head: Network
    verifier: Network
    message_count: int
    defended_label: int = 1

    def prover_logits(self, inputs):
        hidden, trunk_cache = self.prover_trunk.forward(inputs)
        logits, head_cache = self.prover_head.forward(hidden)
        return logits, (trunk_cache, head_cache, hidden)

    def prover_backward(self, cache, dlogits):
        trunk_cache, head_cache, _ = cache
        head_grads, dhidden = nn.backward(
            self.prover_head.spec, self.prover_head.params, head_cache, dlogits
        )
        trunk_grads, _ = nn.backward(
            self.prover_trunk.spec, self.prover_trunk.params, trunk_cache, dhidden
        )
        return trunk_grads, head_grads

    def copy(self) -> "AgentPair":
        return AgentPair(
            prover_trunk=self.prover_trunk.copy(),
            prover_head=self.prover_head.copy(),
            verifier=self.verifier.copy(),
            message_count=self.message_count,
            defended_label=self.defended_label,
        )


@dataclass(frozen=True)
class BECTaskConfig:
    tokens: int = 16
    restrict_channel: bool = True
    verifier_sees_input: bool = False
    width: int = 100

    def __post_init__(self):
        if self.tokens < 2:
            raise ConfigError("need at least 2 communication tokens")


@dataclass(frozen=True)
class PlusTaskConfig:
    grid: int = 10
    plus_size: int = 3
    crop: int = 3
    width: int = 100

    def __post_init__(self):
        if self.plus_size != 3 or self.crop < self.plus_size:
            raise ConfigError("plus must be 3x3 and the crop at least as large")
        if self.grid < self.plus_size + 2:
            raise ConfigError("plus must fit strictly inside the grid")

    @property
    def centers_per_side(self) -> int:
        return self.grid - (self.plus_size - 1)

    @property
    def coordinate_count(self) -> int:
        return self.centers_per_side**2


PLUS_OFFSETS = ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1))


class BECTask:
    name = "bec"

    def __init__(self, config: BECTaskConfig = BECTaskConfig()):
        self.config = config

    @property
    def message_count(self):
        return self.config.tokens

    def sample_batch(self, n: int, rng, collaborative: bool = False) -> Batch:
        if n < 0:
            raise UsageError("n must be >= 0")
        bits = rng.integers(0, 2, size=n)
        inputs = np.zeros((n, 2))
        inputs[np.arange(n), bits] = 1.0
        y = bits.astype(int)
        y_prime = y.copy() if collaborative else np.ones(n, dtype=int)
        return Batch(inputs=inputs, y=y, y_prime=y_prime, meta={"bits": bits})

    def mask_logits(self, logits, batch: Batch):
        """Forbid token 1 on input 0 and token 0 on input 1."""
        if not self.config.restrict_channel:
            return logits
        return mask_forbidden(logits, batch.meta["bits"])

    def legal_tokens(self, batch: Batch):
        """Per-example boolean (n, K) map of channel-admissible tokens."""
        n = len(batch)
        legal = np.ones((n, self.config.tokens), dtype=bool)
        if self.config.restrict_channel:
            bits = batch.meta["bits"]
            legal[bits == 0, 1] = False
            legal[bits == 1, 0] = False
        return legal

    def verifier_features(self, batch: Batch, message_onehot):
        if self.config.verifier_sees_input:
            feats = np.concatenate([message_onehot, batch.inputs], axis=1)

            def backward(dfeats):
                return dfeats[:, : self.config.tokens]

            return feats, backward
        return message_onehot, lambda dfeats: dfeats

    def verifier_input_dim(self):
        return self.config.tokens + (2 if self.config.verifier_sees_input else 0)

    def build_agents(self, rng) -> AgentPair:
        k, w = self.config.tokens, self.config.width
        trunk = nn.NetworkSpec(
            (
                nn.Linear(2, w),
                nn.LayerNorm(w),
                nn.LeakyRelu(),
                nn.Linear(w, w),
                nn.LayerNorm(w),
                nn.LeakyRelu(),
            )
        )
        head = nn.NetworkSpec((nn.Linear(w, k),))
        verifier = nn.NetworkSpec(
            (
                nn.Linear(self.verifier_input_dim(), w),
                nn.LayerNorm(w),
                nn.LeakyRelu(),
                nn.Linear(w, 2),
            )
        )
        return AgentPair(
            prover_trunk=Network(trunk, nn.init_params(trunk, rng)),
            prover_head=Network(head, nn.init_params(head, rng)),
            verifier=Network(verifier, nn.init_params(verifier, rng)),
            message_count=k,
        )

    def probe_logits(self, agents: AgentPair):
        """Prover logits per input bit and verifier scores per token.

        The verifier score for a token is its label-1 logit minus its
        label-0 logit on that token alone; snapshots of these drive the
        training-dynamics checks.
        """
        eye2 = np.eye(2)
        logits, _ = agents.prover_logits(eye2)
        tokens = np.eye(self.config.tokens)
        if self.config.verifier_sees_input:
            return {"prover": logits.tolist(), "verifier": None}
        vlogits, _ = agents.verifier.forward(tokens)
        score = (vlogits[:, 1] - vlogits[:, 0]).tolist()
        return {"prover": logits.tolist(), "verifier": score}


def mask_forbidden(logits, bits):
    """-inf the revealing token the channel forbids for each input bit."""
    logits = np.array(logits, dtype=np.float64, copy=True)
    bits = np.asarray(bits)
    logits[bits == 0, 1] = -np.inf
    logits[bits == 1, 0] = -np.inf
    return logits


class PlusTask:
    name = "plus"

    def __init__(self, config: PlusTaskConfig = PlusTaskConfig()):
        self.config = config

    @property
    def message_count(self):
        return self.config.coordinate_count

    def sample_batch(self, n: int, rng, collaborative: bool = False) -> Batch:
        if n < 0:
            raise UsageError("n must be >= 0")
        cfg = self.config
        side = cfg.centers_per_side
        rows = rng.integers(0, side, size=n) + 1
        cols = rng.integers(0, side, size=n) + 1
        blue = rng.integers(0, 2, size=n).astype(bool)
        images = np.zeros((n, cfg.grid, cfg.grid))
        images[~blue] = 1.0
        idx = np.arange(n)
        for dr, dc in PLUS_OFFSETS:
            images[idx, rows + dr, cols + dc] = blue.astype(float)
        y = blue.astype(int)
        y_prime = y.copy() if collaborative else np.ones(n, dtype=int)
        return Batch(
            inputs=images.reshape(n, -1),
            y=y,
            y_prime=y_prime,
            meta={"row": rows, "col": cols, "blue": blue},
        )

    def mask_logits(self, logits, batch: Batch):
        return logits

    def legal_tokens(self, batch: Batch):
        return np.ones((len(batch), self.message_count), dtype=bool)

    def all_crops(self, batch: Batch) -> np.ndarray:
        """(n, coordinates, crop*crop) stack of zero-padded crops."""
        cfg = self.config
        n = len(batch)
        images = batch.inputs.reshape(n, cfg.grid, cfg.grid)
        half = cfg.crop // 2
        padded = np.pad(images, ((0, 0), (half, half), (half, half)))
        side = cfg.centers_per_side
        crops = np.empty((n, side * side, cfg.crop * cfg.crop))
        for i, (r, c) in enumerate(
            (r, c) for r in range(1, side + 1) for c in range(1, side + 1)
        ):
            # padded coordinates: center (r, c) maps to (r + half, c + half)
            window = padded[
                :, r + half - half : r + half + half + 1, c + half - half : c + half + half + 1
            ]
            crops[:, i] = window.reshape(n, -1)
        return crops

    def verifier_features(self, batch: Batch, message_onehot):
        crops = self.all_crops(batch)
        feats = np.einsum("nc,ncp->np", message_onehot, crops)

        def backward(dfeats):
            return np.einsum("np,ncp->nc", dfeats, crops)

        return feats, backward

    def verifier_input_dim(self):
        return self.config.crop**2

    def build_agents(self, rng) -> AgentPair:
        cfg = self.config
        w = cfg.width
        trunk = nn.NetworkSpec(
            (
                nn.Linear(cfg.grid**2, w),
                nn.LayerNorm(w),
                nn.LeakyRelu(),
                nn.Linear(w, w),
                nn.LayerNorm(w),
                nn.LeakyRelu(),
            )
        )
        head = nn.NetworkSpec((nn.Linear(w, cfg.coordinate_count),))
        verifier = nn.NetworkSpec(
            (
                nn.Linear(cfg.crop**2, w),
                nn.LayerNorm(w),
                nn.LeakyRelu(),
                nn.Linear(w, 2),
            )
        )
        return AgentPair(
            prover_trunk=Network(trunk, nn.init_params(trunk, rng)),
            prover_head=Network(head, nn.init_params(head, rng)),
            verifier=Network(verifier, nn.init_params(verifier, rng)),
            message_count=cfg.coordinate_count,
        )

    def probe_logits(self, agents: AgentPair):
        return None


def crop_at(image, coordinate_weights, crop: int = 3, centers_per_side: int | None = None):
    """Weighted crop: sum of per-position crops under coordinate weights.

    ``image`` is a square grid; coordinates index plus-center positions
    (row-major, offset one cell in from the border).  Exact patch for a
    hard one-hot; out-of-image pixels are zero.
    """
    image = np.asarray(image, dtype=np.float64)
    side = image.shape[0]
    weights = np.asarray(coordinate_weights, dtype=np.float64)
    if weights.min() < 0 or abs(weights.sum() - 1.0) > 1e-9:
        raise UsageError("coordinate weights must be non-negative and sum to 1")
    if centers_per_side is None:
        centers_per_side = int(round(np.sqrt(weights.size)))
    half = crop // 2
    padded = np.pad(image, half + 1)  # allow centers at the image border
    out = np.zeros((crop, crop))
    for i, w in enumerate(weights):
        if w == 0.0:
            continue
        r = i // centers_per_side + 1
        c = i % centers_per_side + 1
        pr, pc = r + half + 1, c + half + 1
        out += w * padded[pr - half : pr + half + 1, pc - half : pc + half + 1]
    return out.ravel()


def count_plus_patterns(image, color: int) -> int:
    """Exhaustive scan for 3x3 plus patterns of the given pixel color.

    A plus of ``color`` at a center means the five cross cells hold
    ``color`` and the four corners hold ``1 - color``.
    """
    image = np.asarray(image)
    side = image.shape[0]
    count = 0
    for r in range(1, side - 1):
        for c in range(1, side - 1):
            cross = all(image[r + dr, c + dc] == color for dr, dc in PLUS_OFFSETS)
            corners = all(
                image[r + dr, c + dc] == 1 - color
                for dr, dc in ((-1, -1), (-1, 1), (1, -1), (1, 1))
            )
            if cross and corners:
                count += 1
    return count


def export_batch_csv(batch: Batch, path) -> None:
    """Write a sampled batch to CSV for inspection: y, y_prime, inputs."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        dim = batch.inputs.shape[1] if len(batch) else 0
        writer.writerow(["y", "y_prime"] + [f"x{i}" for i in range(dim)])
        for i in range(len(batch)):
            writer.writerow(
                [int(batch.y[i]), int(batch.y_prime[i])]
                + [format(v, "g") for v in batch.inputs[i]]
            )


def make_task(name: str, **kwargs):
    if name == "bec":
        return BECTask(BECTaskConfig(**kwargs))
    if name == "plus":
        return PlusTask(PlusTaskConfig(**kwargs))
    raise ConfigError(f"unknown task {name!r}")
