"""Network specifications, the Arch-1..Arch-10 registry and network execution.

A network is a stack of conv blocks (conv -> BN -> ReLU -> 2x2 max pool),
optionally followed by one skip-connection block, then a fully connected head
ending in a single logit::

    SCB:   x --conv-BN-ReLU-conv-BN--(+)--ReLU-->
           |                          |
           +--------conv-BN-----------+

Parameters are addressed by dotted names such as ``cb1.conv.weight`` or
``scb.skip.bn.gamma``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, Union

import numpy as np

from . import ops
from .errors import ArchitectureLookupError, ResolutionError, ShapeError, SpecError
from .tensor import as_tensor4, default_dtype

DEFAULT_FC = (1024, 256)
DEFAULT_RESOLUTION = 64


@dataclass(frozen=True)
class ConvBlockSpec:
    filters: int

    def __post_init__(self):
        if not isinstance(self.filters, int) or self.filters < 1:
            raise SpecError(f"conv block filters must be a positive integer, got {self.filters!r}")


@dataclass(frozen=True)
class SCBSpec:
    scbs: int

    def __post_init__(self):
        if not isinstance(self.scbs, int) or self.scbs < 1:
            raise SpecError(f"SCBS must be a positive integer, got {self.scbs!r}")


BlockSpec = Union[ConvBlockSpec, SCBSpec]


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    blocks: tuple[BlockSpec, ...]
    fc_sizes: tuple[int, ...] = DEFAULT_FC
    input_resolution: int = DEFAULT_RESOLUTION
    output_neurons: int = 1

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "fc_sizes", tuple(self.fc_sizes))
        if not self.blocks:
            raise SpecError("network needs at least one block")
        n_scb = sum(isinstance(b, SCBSpec) for b in self.blocks)
        if n_scb > 1:
            raise SpecError("at most one skip-connection block is allowed")
        if n_scb == 1 and not isinstance(self.blocks[-1], SCBSpec):
            raise SpecError("the skip-connection block must follow all conv blocks")
        if any(not isinstance(b, (ConvBlockSpec, SCBSpec)) for b in self.blocks):
            raise SpecError("blocks must be ConvBlockSpec or SCBSpec")
        if any(not isinstance(s, int) or s < 1 for s in self.fc_sizes):
            raise SpecError(f"fc sizes must be positive integers, got {list(self.fc_sizes)}")
        if self.output_neurons != 1:
            raise SpecError(f"output layer must have exactly one neuron, got {self.output_neurons}")
        r = self.input_resolution
        if not isinstance(r, int) or r < 2 or r % 2:
            raise SpecError(f"input resolution must be a positive even integer, got {r!r}")

    @property
    def conv_filters(self) -> list[int]:
        return [b.filters for b in self.blocks if isinstance(b, ConvBlockSpec)]

    @property
    def scbs(self) -> int | None:
        last = self.blocks[-1]
        return last.scbs if isinstance(last, SCBSpec) else None

    def with_overrides(self, *, fc_sizes=None, input_resolution=None, name=None) -> "NetworkSpec":
        return NetworkSpec(
            name=self.name if name is None else name,
            blocks=self.blocks,
            fc_sizes=self.fc_sizes if fc_sizes is None else tuple(fc_sizes),
            input_resolution=self.input_resolution if input_resolution is None else input_resolution,
        )


def _spec(name: str, convs: list[int], scbs: int | None = None) -> NetworkSpec:
    blocks: list[BlockSpec] = [ConvBlockSpec(f) for f in convs]
    if scbs is not None:
        blocks.append(SCBSpec(scbs))
    return NetworkSpec(name, tuple(blocks))


REGISTRY: dict[str, NetworkSpec] = {
    s.name: s
    for s in [
        _spec("arch-1", [32, 64]),
        _spec("arch-2", [64, 128]),
        _spec("arch-3", [32, 64, 128]),
        _spec("arch-4", [64, 128, 256]),
        _spec("arch-5", [32, 64, 128, 256]),
        _spec("arch-6", [], 3),
        _spec("arch-7", [32, 64], 3),
        _spec("arch-8", [32, 64, 128, 256], 3),
        _spec("arch-9", [64, 128, 256], 3),
        _spec("arch-10", [32, 64], 8),
    ]
}


def build_architecture(name: Union[str, NetworkSpec, dict]) -> NetworkSpec:
    """Look up a registry id (``arch-1`` .. ``arch-10``) or validate an explicit spec."""
    if isinstance(name, NetworkSpec):
        return name
    if isinstance(name, dict):
        return spec_from_dict(name)
    key = str(name).strip().lower()
    if key not in REGISTRY:
        raise ArchitectureLookupError(
            f"unknown architecture {name!r}; valid ids: {', '.join(REGISTRY)}"
        )
    return REGISTRY[key]


# -- config text ---------------------------------------------------------------


def spec_to_dict(spec: NetworkSpec) -> dict:
    return {
        "name": spec.name,
        "conv_filters": spec.conv_filters,
        "scbs": spec.scbs,
        "fc_sizes": list(spec.fc_sizes),
        "input_resolution": spec.input_resolution,
    }


def spec_from_dict(cfg: dict) -> NetworkSpec:
    unknown = set(cfg) - {"name", "conv_filters", "scbs", "fc_sizes", "input_resolution"}
    if unknown:
        raise SpecError(f"unknown architecture config keys: {sorted(unknown)}")
    convs = cfg.get("conv_filters", [])
    if not isinstance(convs, list):
        raise SpecError("conv_filters must be a list")
    scbs = cfg.get("scbs")
    blocks: list[BlockSpec] = [ConvBlockSpec(f) for f in convs]
    if scbs is not None:
        blocks.append(SCBSpec(scbs))
    return NetworkSpec(
        name=str(cfg.get("name", "custom")),
        blocks=tuple(blocks),
        fc_sizes=tuple(cfg.get("fc_sizes", DEFAULT_FC)),
        input_resolution=cfg.get("input_resolution", DEFAULT_RESOLUTION),
    )


def spec_to_config(spec: NetworkSpec) -> str:
    """Serialize to the JSON architecture config."""
    return json.dumps(spec_to_dict(spec), sort_keys=True)


def spec_from_config(text: str) -> NetworkSpec:
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"architecture config is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise SpecError("architecture config must be a JSON object")
    return spec_from_dict(cfg)


# -- layer graph ---------------------------------------------------------------


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv | bn | relu | maxpool | dense
    name: str
    in_features: int
    out_features: int

    @property
    def has_params(self) -> bool:
        return self.kind in ("conv", "bn", "dense")


@dataclass(frozen=True)
class SCBFragment:
    direct: tuple[LayerSpec, ...]
    skip: tuple[LayerSpec, ...]
    post: tuple[LayerSpec, ...]
    in_channels: int
    out_channels: int


Path = tuple[LayerSpec, ...]
Stage = Union[Path, SCBFragment, str]


def _conv_bn(prefix: str, c_in: int, f: int) -> list[LayerSpec]:
    return [LayerSpec("conv", f"{prefix}.conv", c_in, f), LayerSpec("bn", f"{prefix}.bn", f, f)]


def expand_cb(spec: ConvBlockSpec, input_channels: int, prefix: str) -> Path:
    f = spec.filters
    return tuple(
        _conv_bn(prefix, input_channels, f)
        + [LayerSpec("relu", f"{prefix}.relu", f, f), LayerSpec("maxpool", f"{prefix}.pool", f, f)]
    )


def expand_scb(spec: SCBSpec, input_channels: int, prefix: str = "scb") -> SCBFragment:
    """Expand an SCB into its direct path, skip path and post-addition ReLU."""
    if input_channels < 1:
        raise SpecError(f"SCB input channels must be >= 1, got {input_channels}")
    k = spec.scbs
    direct = (
        _conv_bn(f"{prefix}.direct1", input_channels, k)
        + [LayerSpec("relu", f"{prefix}.direct1.relu", k, k)]
        + _conv_bn(f"{prefix}.direct2", k, k)
    )
    skip = _conv_bn(f"{prefix}.skip", input_channels, k)
    post = (LayerSpec("relu", f"{prefix}.relu", k, k),)
    return SCBFragment(tuple(direct), tuple(skip), post, input_channels, k)


def compile_network(spec: NetworkSpec) -> list[Stage]:
    """Lower a spec to stages: conv-block paths, an SCB fragment, "flatten", the head."""
    stages: list[Stage] = []
    c = 1
    i = 0
    for block in spec.blocks:
        if isinstance(block, ConvBlockSpec):
            i += 1
            stages.append(expand_cb(block, c, f"cb{i}"))
            c = block.filters
        else:
            stages.append(expand_scb(block, c))
            c = block.scbs
    stages.append("flatten")
    flat = c * (spec.input_resolution // 2 ** len(spec.conv_filters)) ** 2
    head: list[LayerSpec] = []
    prev = flat
    for j, size in enumerate(spec.fc_sizes, start=1):
        head.append(LayerSpec("dense", f"fc{j}", prev, size))
        head.append(LayerSpec("relu", f"fc{j}.relu", size, size))
        prev = size
    head.append(LayerSpec("dense", "out", prev, spec.output_neurons))
    stages.append(tuple(head))
    return stages


def iter_layers(stages: list[Stage]) -> Iterator[LayerSpec]:
    for st in stages:
        if isinstance(st, SCBFragment):
            yield from st.direct
            yield from st.skip
            yield from st.post
        elif isinstance(st, tuple):
            yield from st


# -- shapes and parameter counts -----------------------------------------------


@dataclass(frozen=True)
class ShapeRecord:
    name: str
    shape: tuple[int, ...]


def infer_shapes(spec: NetworkSpec) -> list[ShapeRecord]:
    """Feature-map shape after every block, then flatten length and each dense layer.

    Shapes exclude the batch axis: (c, h, w) for maps, (features,) after flatten.
    """
    r = spec.input_resolution
    c, h, w = 1, r, r
    out = [ShapeRecord("input", (c, h, w))]
    i = 0
    for block in spec.blocks:
        if isinstance(block, ConvBlockSpec):
            i += 1
            if h < 2 or w < 2:
                raise ResolutionError(
                    f"block cb{i} cannot pool a {h}x{w} map; input resolution {r} is too small "
                    f"for {len(spec.conv_filters)} conv blocks (need >= {2 ** len(spec.conv_filters)})"
                )
            c, h, w = block.filters, h // 2, w // 2
            out.append(ShapeRecord(f"cb{i}", (c, h, w)))
        else:
            c = block.scbs
            out.append(ShapeRecord("scb", (c, h, w)))
    out.append(ShapeRecord("flatten", (c * h * w,)))
    for j, size in enumerate(spec.fc_sizes, start=1):
        out.append(ShapeRecord(f"fc{j}", (size,)))
    out.append(ShapeRecord("out", (spec.output_neurons,)))
    return out


@dataclass(frozen=True)
class ParamCount:
    per_layer: tuple[tuple[str, int], ...]

    @property
    def total(self) -> int:
        return sum(n for _, n in self.per_layer)

    def __getitem__(self, name: str) -> int:
        return dict(self.per_layer)[name]


def layer_param_count(layer: LayerSpec) -> int:
    if layer.kind == "conv":
        return layer.out_features * layer.in_features * ops.KERNEL * ops.KERNEL + layer.out_features
    if layer.kind == "bn":
        return 2 * layer.out_features
    if layer.kind == "dense":
        return layer.out_features * layer.in_features + layer.out_features
    return 0


def count_params(spec: NetworkSpec) -> ParamCount:
    """Trainable parameter counts per layer (BN running statistics excluded)."""
    infer_shapes(spec)
    return ParamCount(tuple(
        (layer.name, layer_param_count(layer))
        for layer in iter_layers(compile_network(spec))
        if layer.has_params
    ))


# -- parameters ----------------------------------------------------------------

LayerParams = Union[ops.ConvParams, ops.BatchNormParams, ops.DenseParams]

_FIELDS = {
    ops.ConvParams: (("weight", True), ("bias", True)),
    ops.DenseParams: (("weight", True), ("bias", True)),
    ops.BatchNormParams: (("gamma", True), ("beta", True), ("running_mean", False), ("running_var", False)),
}


@dataclass
class NetworkParams:
    layers: dict[str, LayerParams] = field(default_factory=dict)

    def arrays(self) -> Iterator[tuple[str, np.ndarray, bool]]:
        """Yield ``(name, array, trainable)`` in spec order."""
        for lname, p in self.layers.items():
            for attr, trainable in _FIELDS[type(p)]:
                yield f"{lname}.{attr}", getattr(p, attr), trainable

    def trainable(self) -> dict[str, np.ndarray]:
        return {k: a for k, a, t in self.arrays() if t}

    def copy(self) -> "NetworkParams":
        out = {}
        for lname, p in self.layers.items():
            kw = {attr: getattr(p, attr).copy() for attr, _ in _FIELDS[type(p)]}
            if isinstance(p, ops.BatchNormParams):
                kw.update(epsilon=p.epsilon, momentum=p.momentum)
            out[lname] = type(p)(**kw)
        return NetworkParams(out)

    def astype(self, dtype) -> "NetworkParams":
        out = self.copy()
        for p in out.layers.values():
            for attr, _ in _FIELDS[type(p)]:
                setattr(p, attr, getattr(p, attr).astype(dtype))
        return out


def init_params(spec: NetworkSpec, seed: int = 0, dtype=None) -> NetworkParams:
    """He-normal conv/dense weights, zero biases, identity BN, all from one seed."""
    infer_shapes(spec)
    dtype = dtype or default_dtype()
    rng = np.random.default_rng(seed)
    layers: dict[str, LayerParams] = {}
    for layer in iter_layers(compile_network(spec)):
        if layer.kind == "conv":
            layers[layer.name] = ops.ConvParams.he_init(layer.in_features, layer.out_features, rng, dtype)
        elif layer.kind == "bn":
            layers[layer.name] = ops.BatchNormParams.fresh(layer.out_features, dtype)
        elif layer.kind == "dense":
            layers[layer.name] = ops.DenseParams.he_init(layer.in_features, layer.out_features, rng, dtype)
    return NetworkParams(layers)


def check_params(spec: NetworkSpec, params: NetworkParams) -> None:
    """Raise ShapeError unless ``params`` matches the shapes ``spec`` implies."""
    for layer in iter_layers(compile_network(spec)):
        if not layer.has_params:
            continue
        p = params.layers.get(layer.name)
        if p is None:
            raise ShapeError(f"missing parameters for layer {layer.name}")
        if layer.kind == "conv":
            expected = {"weight": (layer.out_features, layer.in_features, 3, 3), "bias": (layer.out_features,)}
        elif layer.kind == "dense":
            expected = {"weight": (layer.out_features, layer.in_features), "bias": (layer.out_features,)}
        else:
            c = layer.out_features
            expected = {"gamma": (c,), "beta": (c,), "running_mean": (c,), "running_var": (c,)}
        for attr, shape in expected.items():
            got = getattr(p, attr).shape
            if got != shape:
                raise ShapeError(f"{layer.name}.{attr}: expected shape {shape}, got {got}")
    extra = set(params.layers) - {l.name for l in iter_layers(compile_network(spec)) if l.has_params}
    if extra:
        raise ShapeError(f"unexpected parameter layers: {sorted(extra)}")


# -- execution -----------------------------------------------------------------


@dataclass
class Tape:
    """Forward intermediates needed by :func:`network_backward`."""
    stages: list[Stage]
    caches: list = field(default_factory=list)
    phase: str = "train"


def _layer_forward(idx: int, layer: LayerSpec, x: np.ndarray, params: NetworkParams, phase: str, frozen=None):
    if layer.kind in ("conv", "bn", "maxpool"):
        if x.ndim != 4 or x.shape[1] != layer.in_features:
            raise ShapeError(
                f"layer {idx} ({layer.name}): expected {layer.in_features} input channels, "
                f"got input shape {x.shape}"
            )
    elif layer.kind == "dense" and (x.ndim != 2 or x.shape[1] != layer.in_features):
        raise ShapeError(
            f"layer {idx} ({layer.name}): expected (n, {layer.in_features}), got {x.shape}"
        )
    if layer.kind == "conv":
        return ops.conv2d_forward(x, params.layers[layer.name])
    if layer.kind == "bn":
        return ops.batchnorm_forward(x, params.layers[layer.name], phase)
    if layer.kind == "relu":
        if frozen is not None:
            return x * (frozen > 0), frozen
        return ops.relu(x), x
    if layer.kind == "maxpool":
        y, idx_ = ops.maxpool2x2(x, None if frozen is None else frozen[0])
        return y, (idx_, x.shape)
    if layer.kind == "dense":
        return ops.dense_forward(x, params.layers[layer.name])
    raise AssertionError(layer.kind)


def _layer_backward(layer: LayerSpec, dy: np.ndarray, cache, grads: dict):
    if layer.kind == "conv":
        dx, dw, db = ops.conv2d_backward(dy, cache)
        grads[f"{layer.name}.weight"] = dw
        grads[f"{layer.name}.bias"] = db
        return dx
    if layer.kind == "bn":
        dx, dg, dbt = ops.batchnorm_backward(dy, cache)
        grads[f"{layer.name}.gamma"] = dg
        grads[f"{layer.name}.beta"] = dbt
        return dx
    if layer.kind == "relu":
        return ops.relu_backward(dy, cache)
    if layer.kind == "maxpool":
        return ops.maxpool2x2_backward(dy, *cache)
    if layer.kind == "dense":
        dx, dw, db = ops.dense_backward(dy, cache)
        grads[f"{layer.name}.weight"] = dw
        grads[f"{layer.name}.bias"] = db
        return dx
    raise AssertionError(layer.kind)


def _path_forward(path, x, params, phase, counter, frozen=None):
    caches = []
    for j, layer in enumerate(path):
        pinned = frozen[j] if frozen is not None else None
        x, cache = _layer_forward(next(counter), layer, x, params, phase, pinned)
        caches.append(cache)
    return x, caches


def _path_backward(path, dy, caches, grads):
    for layer, cache in zip(reversed(path), reversed(caches)):
        dy = _layer_backward(layer, dy, cache, grads)
    return dy


def network_forward(
    spec: NetworkSpec,
    params: NetworkParams,
    batch: np.ndarray,
    phase: str = "infer",
    *,
    freeze: Tape | None = None,
):
    """Run the network; returns ``(logits of shape (n, 1), tape)``.

    With ``freeze``, every ReLU mask and max-pool argmax is taken from that
    earlier tape instead of the current activations. This evaluates the smooth
    branch of the network active at the frozen point (used by gradient checks).
    """
    if phase not in ("train", "infer"):
        raise ValueError(f"phase must be 'train' or 'infer', got {phase!r}")
    x = as_tensor4(batch, name="batch")
    r = spec.input_resolution
    if x.shape[1:] != (1, r, r):
        raise ShapeError(f"layer 0 (input): expected batch shape (n, 1, {r}, {r}), got {x.shape}")
    stages = compile_network(spec)
    tape = Tape(stages, phase=phase)
    counter = iter(range(1, 1 << 30))
    pinned = freeze.caches if freeze is not None else [None] * len(stages)
    for st, fz in zip(stages, pinned):
        if st == "flatten":
            tape.caches.append(x.shape)
            x = x.reshape(x.shape[0], -1)
        elif isinstance(st, SCBFragment):
            fd, fs, fp = fz if fz is not None else (None, None, None)
            d, dc = _path_forward(st.direct, x, params, phase, counter, fd)
            s, sc = _path_forward(st.skip, x, params, phase, counter, fs)
            x, pc = _path_forward(st.post, d + s, params, phase, counter, fp)
            tape.caches.append((dc, sc, pc))
        else:
            x, caches = _path_forward(st, x, params, phase, counter, fz)
            tape.caches.append(caches)
    return x, tape


def network_backward(tape: Tape, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Backpropagate d(loss)/d(logits) through a train-phase tape."""
    if tape.phase != "train":
        raise ValueError("network_backward needs a train-phase tape")
    grads: dict[str, np.ndarray] = {}
    dy = np.asarray(dlogits)
    for st, cache in zip(reversed(tape.stages), reversed(tape.caches)):
        if st == "flatten":
            dy = dy.reshape(cache)
        elif isinstance(st, SCBFragment):
            dc, sc, pc = cache
            dsum = _path_backward(st.post, dy, pc, grads)
            dy = _path_backward(st.direct, dsum, dc, grads) + _path_backward(st.skip, dsum, sc, grads)
        else:
            dy = _path_backward(st, dy, cache, grads)
    grads["input"] = dy
    return grads


def predict_proba(spec: NetworkSpec, params: NetworkParams, batch: np.ndarray) -> np.ndarray:
    logits, _ = network_forward(spec, params, batch, "infer")
    return ops.sigmoid(logits[:, 0])

