"""GraspPointCNN: three conv encoders, spatial attention, GAP and an MLP head."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import layers as L

IN_CHANNELS = 9
PATCH = 32
WIDTHS = (48, 96, 192)
HIDDEN = (128, 64)
ATTENTION_KERNEL = 7


def param_shapes() -> dict[str, tuple]:
    shapes: dict[str, tuple] = {}
    c_in = IN_CHANNELS
    for i, c in enumerate(WIDTHS, start=1):
        shapes[f"enc{i}.w"] = (3, 3, c_in, c)
        shapes[f"enc{i}.b"] = (c,)
        shapes[f"enc{i}.gamma"] = (c,)
        shapes[f"enc{i}.beta"] = (c,)
        c_in = c
    shapes["att.w"] = (ATTENTION_KERNEL, ATTENTION_KERNEL, 2, 1)
    shapes["att.b"] = (1,)
    d_in = WIDTHS[-1]
    for i, d in enumerate(HIDDEN + (1,), start=1):
        shapes[f"fc{i}.w"] = (d, d_in)
        shapes[f"fc{i}.b"] = (d,)
        d_in = d
    return shapes


def buffer_shapes() -> dict[str, tuple]:
    out = {}
    for i, c in enumerate(WIDTHS, start=1):
        out[f"enc{i}.running_mean"] = (c,)
        out[f"enc{i}.running_var"] = (c,)
    return out


def architecture_hash() -> bytes:
    desc = ";".join(f"{k}:{'x'.join(map(str, s))}" for k, s in {**param_shapes(), **buffer_shapes()}.items())
    return hashlib.sha256(desc.encode()).digest()[:8]


def parameter_count() -> int:
    return int(sum(np.prod(s) for s in param_shapes().values()))


@dataclass(eq=False)
class ModelWeights:
    """Learnable parameters, batchnorm running stats and AdamW moments (float32)."""

    params: dict
    buffers: dict
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    step: int = 0
    seed: int = 0

    def copy(self) -> "ModelWeights":
        def cp(d):
            return {k: v.copy() for k, v in d.items()}

        return ModelWeights(cp(self.params), cp(self.buffers), cp(self.adam_m), cp(self.adam_v), self.step, self.seed)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for group in (self.params, self.buffers):
            for k in sorted(group):
                h.update(k.encode())
                h.update(np.ascontiguousarray(group[k], dtype=np.float32).tobytes())
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, ModelWeights):
            return NotImplemented
        groups = ("params", "buffers", "adam_m", "adam_v")
        if (self.step, self.seed) != (other.step, other.seed):
            return False
        for g in groups:
            a, b = getattr(self, g), getattr(other, g)
            if a.keys() != b.keys() or any(a[k].tobytes() != b[k].tobytes() for k in a):
                return False
        return True


def init_weights(seed: int = 0) -> ModelWeights:
    """Kaiming-uniform kernels (bound sqrt(6 / fan_in)), zero biases, unit batchnorm scale."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes().items():
        kind = name.split(".")[1]
        if kind == "w":
            fan_in = int(np.prod(shape[:-1])) if len(shape) == 4 else shape[1]
            bound = np.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
        elif kind == "gamma":
            params[name] = np.ones(shape, dtype=np.float32)
        else:
            params[name] = np.zeros(shape, dtype=np.float32)
    buffers = {}
    for name, shape in buffer_shapes().items():
        fill = 1.0 if name.endswith("var") else 0.0
        buffers[name] = np.full(shape, fill, dtype=np.float32)
    return ModelWeights(params, buffers, seed=seed)


class GraspPointCNN:
    """Stateful wrapper holding compute-precision copies of the weights.

    ``forward(x, train=True)`` keeps the caches needed by :meth:`backward` and
    updates the batchnorm running statistics.
    """

    def __init__(self, weights: ModelWeights, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.params = {k: v.astype(self.dtype) for k, v in weights.params.items()}
        self.buffers = {k: v.astype(self.dtype) for k, v in weights.buffers.items()}
        self._caches = None
        self._folded = None

    def _fold(self):
        """Encoder kernels with the eval-mode batchnorm affine folded in."""
        if self._folded is None:
            p, buf = self.params, self.buffers
            folded = []
            for i in range(1, len(WIDTHS) + 1):
                scale = p[f"enc{i}.gamma"] / np.sqrt(buf[f"enc{i}.running_var"] + L.BN_EPS)
                shift = p[f"enc{i}.beta"] - buf[f"enc{i}.running_mean"] * scale
                folded.append((p[f"enc{i}.w"] * scale, p[f"enc{i}.b"] * scale + shift))
            self._folded = folded
        return self._folded

    def export(self, template: ModelWeights | None = None) -> ModelWeights:
        base = template.copy() if template is not None else ModelWeights({}, {})
        base.params = {k: v.astype(np.float32) for k, v in self.params.items()}
        base.buffers = {k: v.astype(np.float32) for k, v in self.buffers.items()}
        return base

    def logits(self, x, train: bool = False, pattern=None) -> np.ndarray:
        """Pre-sigmoid outputs.

        ``pattern`` (from :meth:`branch_pattern`, training mode only) pins every
        ReLU / max-pool / channel-max decision to a recorded one, making the
        output a smooth function of the parameters; gradient checks use it.
        """
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or x.shape[1:] != (IN_CHANNELS, PATCH, PATCH):
            raise ValueError(f"expected (N, {IN_CHANNELS}, {PATCH}, {PATCH}) patches, got {x.shape}")
        p, buf = self.params, self.buffers
        caches = []
        h = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
        if pattern is not None and not train:
            raise ValueError("branch replay is only defined in training mode")
        replay = iter(pattern) if pattern is not None else None

        def recorded():
            return next(replay) if replay is not None else None

        if train:
            self._folded = None
            for i in range(1, len(WIDTHS) + 1):
                h, c_conv = L.conv2d_forward(h, p[f"enc{i}.w"], p[f"enc{i}.b"], 1)
                h, c_bn = L.batchnorm_forward(
                    h, p[f"enc{i}.gamma"], p[f"enc{i}.beta"], buf[f"enc{i}.running_mean"], buf[f"enc{i}.running_var"], True
                )
                h, c_relu = L.relu_forward(h, recorded())
                h, c_pool = L.maxpool2x2_forward(h, idx=recorded())
                caches.append((c_conv, c_bn, c_relu, c_pool))
        else:
            # conv -> batchnorm(running stats) is affine, so it collapses into one conv
            for w, b in self._fold():
                h, _ = L.conv2d_forward(h, w, b, 1)
                np.maximum(h, 0, out=h)
                h, _ = L.maxpool2x2_forward(h, train=False)
        h, c_att = L.spatial_attention_forward(h, p["att.w"], p["att.b"], recorded() if train else None)
        h, c_gap = L.global_avg_pool_forward(h)
        fc_caches = []
        n_fc = len(HIDDEN) + 1
        for i in range(1, n_fc + 1):
            h, c_fc = L.fc_forward(h, p[f"fc{i}.w"], p[f"fc{i}.b"])
            c_relu = None
            if i < n_fc:
                h, c_relu = L.relu_forward(h, recorded() if train else None)
            fc_caches.append((c_fc, c_relu))
        self._caches = (caches, c_att, c_gap, fc_caches) if train else None
        return h[:, 0]

    def branch_pattern(self) -> list:
        """Branch decisions of the last training forward, in replay order."""
        if self._caches is None:
            raise RuntimeError("no training forward to read a pattern from")
        caches, c_att, _, fc_caches = self._caches
        out = []
        for _, _, c_relu, c_pool in caches:
            out += [c_relu, c_pool[0]]
        out.append(c_att[2])
        out += [c for _, c in fc_caches if c is not None]
        return out

    def __call__(self, x, train: bool = False) -> np.ndarray:
        return L.sigmoid(self.logits(x, train))

    def backward(self, dlogits) -> dict:
        """Gradients of every parameter given dL/dlogits from the last training forward."""
        if self._caches is None:
            raise RuntimeError("backward() needs a preceding forward(train=True)")
        caches, c_att, c_gap, fc_caches = self._caches
        grads = {}
        g = np.asarray(dlogits, dtype=self.dtype).reshape(-1, 1)
        for i in range(len(fc_caches), 0, -1):
            c_fc, c_relu = fc_caches[i - 1]
            if c_relu is not None:
                g = L.relu_backward(g, c_relu)
            g, grads[f"fc{i}.w"], grads[f"fc{i}.b"] = L.fc_backward(g, c_fc)
        g = L.global_avg_pool_backward(g, c_gap)
        g, grads["att.w"], grads["att.b"] = L.spatial_attention_backward(g, c_att)
        for i in range(len(caches), 0, -1):
            c_conv, c_bn, c_relu, c_pool = caches[i - 1]
            g = L.maxpool2x2_backward(g, c_pool)
            g = L.relu_backward(g, c_relu)
            g, grads[f"enc{i}.gamma"], grads[f"enc{i}.beta"] = L.batchnorm_backward(g, c_bn)
            g, grads[f"enc{i}.w"], grads[f"enc{i}.b"] = L.conv2d_backward(g, c_conv)
        self._caches = None
        return grads


def forward(weights: ModelWeights, patch, dtype=np.float32) -> np.ndarray:
    """Eval-mode grasp quality in (0, 1) for one (9, 32, 32) patch or a batch."""
    return GraspPointCNN(weights, dtype)(patch, train=False)
