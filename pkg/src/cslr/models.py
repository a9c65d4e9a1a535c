"""The two recognizer architectures over the layer kit, plus training and
binary checkpointing.

Both models map padded batches to per-timestep logits over V glosses +
blank without any temporal downsampling: pooling is spatial only, so T
logit rows come out for T input frames.  Frame-level stages (CNNs, dense
stacks, dropout, the output head) run on the packed valid frames of the
batch, never on padding, which keeps every result independent of how much
tail padding a batch carries.
"""

import json
import logging
import struct
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import evalkit
from .ctc import LogitSequence, ctc_loss, min_input_length
from .dataio import batch_iter
from .errors import (
    CheckpointFormatError,
    CheckpointMismatchError,
    CheckpointVersionError,
    ConfigError,
    DataError,
    StateError,
)
from .nn import (
    Adam,
    BatchNorm2D,
    BiLSTM,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    LSTM,
    MaxPool2D,
    ReLU,
    TrainConfig,
    clip_global_norm,
)

logger = logging.getLogger(__name__)

DTYPES = {"float32": np.float32, "float64": np.float64}

CHECKPOINT_MAGIC = b"MCSC"
CHECKPOINT_VERSION = 1

ARCH_RSIGN = "rsign_c"
ARCH_MCSIGN = "mcsign_c"

# trainable tensors subject to L2 decay (weight matrices and kernels;
# biases and batch-norm scale/shift stay undecayed)
DECAYED_KEYS = {"W", "Wx", "Wh"}


@dataclass
class ModelConfig:
    architecture: str
    vocab_size: int
    image_side: int = 32
    frame_side: int = 96
    conv_blocks: tuple = ((8, 3, 2), (16, 3, 2))  # (feature maps, kernel, pool)
    dense_units: tuple = (64, 64)      # raw-frame model only
    lstm_units: int = 64               # raw-frame model only
    image_lstm: int = 64
    movement_lstm: int = 16
    location_lstm: int = 8
    hand_blstm: int = 64
    cross_blstm: int = 64
    dropout: float = 0.1
    l2: float = 1e-4
    dtype: str = "float32"
    init_seed: int = 0

    def __post_init__(self):
        if self.architecture not in (ARCH_RSIGN, ARCH_MCSIGN):
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if self.vocab_size < 1:
            raise ConfigError("vocab_size must be >= 1")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(DTYPES)}")
        self.conv_blocks = tuple(tuple(b) for b in self.conv_blocks)
        self.dense_units = tuple(self.dense_units)
        for name in ("image_lstm", "movement_lstm", "location_lstm",
                     "hand_blstm", "cross_blstm", "lstm_units"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @property
    def num_classes(self):
        return self.vocab_size + 1

    @property
    def input_kind(self):
        return "frames" if self.architecture == ARCH_RSIGN else "cues"

    def to_dict(self):
        d = asdict(self)
        d["conv_blocks"] = [list(b) for b in self.conv_blocks]
        d["dense_units"] = list(self.dense_units)
        return d

    @classmethod
    def from_dict(cls, obj):
        return cls(**obj)


def rsign_mini_config(vocab_size, **overrides):
    """Default raw-frame stack: six conv blocks (the first one strided to
    shed the full-resolution activation early), two dense layers, an LSTM,
    and the output head."""
    base = dict(
        architecture=ARCH_RSIGN,
        vocab_size=vocab_size,
        conv_blocks=((8, 3, 2, 2), (8, 3, 2), (16, 3, 2), (16, 3, 2), (32, 3, 1), (32, 3, 2)),
        dense_units=(64, 64),
        lstm_units=64,
    )
    base.update(overrides)
    return ModelConfig(**base)


def mcsign_mini_config(vocab_size, **overrides):
    base = dict(architecture=ARCH_MCSIGN, vocab_size=vocab_size)
    base.update(overrides)
    return ModelConfig(**base)


class _ConvStack:
    """Per-frame conv/bn/relu/pool blocks ending in a flatten.

    Block specs are (feature maps, kernel, pool) with an optional fourth
    stride entry for early spatial downsampling.
    """

    def __init__(self, in_side, in_channels, blocks, rng, dtype):
        self.chain = []       # (tag, layer) in forward order
        self.named = []       # (name, layer) for layers holding parameters
        side, channels = in_side, in_channels
        for i, spec in enumerate(blocks):
            maps, kernel, pool = spec[:3]
            stride = spec[3] if len(spec) > 3 else 1
            conv = Conv2D(channels, maps, kernel=kernel, stride=stride,
                          padding="same", rng=rng, dtype=dtype)
            bn = BatchNorm2D(maps, dtype=dtype)
            self.chain += [("conv", conv), ("bn", bn), ("relu", ReLU(dtype))]
            self.named += [(f"conv{i}", conv), (f"bn{i}", bn)]
            side = -(-side // stride)
            if pool > 1:
                if pool > side:
                    raise ConfigError(
                        f"pool {pool} exceeds remaining side {side} at block {i}"
                    )
                self.chain.append(("pool", MaxPool2D(pool, dtype=dtype)))
                side = (side - pool) // pool + 1
            channels = maps
        self.chain.append(("flatten", Flatten(dtype)))
        self.out_dim = channels * side * side

    def forward(self, x, train):
        for tag, layer in self.chain:
            x = layer.forward(x, train=train) if tag == "bn" else layer.forward(x, train)
        return x

    def backward(self, dy):
        for _, layer in reversed(self.chain):
            dy = layer.backward(dy)
        return dy


class Model:
    """Shared plumbing: parameter registry, RNG, packed-frame helpers."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.dtype = DTYPES[config.dtype]
        self.step = 0
        self.rng = np.random.default_rng([config.init_seed, 0xD0])
        self._init_rng = np.random.default_rng([config.init_seed, 0x1A])
        self._registry = []  # (name, layer)
        self.dropout_layers = []
        self._forward_done = False

    def _register(self, name, layer):
        self._registry.append((name, layer))
        return layer

    def named_tensors(self):
        """(full name, layer, key) in stable declaration order."""
        for name, layer in self._registry:
            for key in layer.params:
                yield f"{name}.{key}", layer, key

    def named_params(self):
        return [(name, layer.params[key]) for name, layer, key in self.named_tensors()]

    def trainable_items(self):
        return [
            (name, layer.params[key], layer.grads[key])
            for name, layer, key in self.named_tensors()
            if key not in layer.non_trainable
        ]

    def zero_grads(self):
        for _, layer in self._registry:
            layer.zero_grads()

    def snapshot(self):
        return {name: value.copy() for name, value in self.named_params()}

    def restore(self, snap):
        for name, value in self.named_params():
            value[...] = snap[name]

    def set_dropout_rate(self, rate):
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {rate}")
        for layer in self.dropout_layers:
            layer.rate = rate

    @staticmethod
    def _valid_mask(lengths, t_max):
        return np.arange(t_max)[None, :] < np.asarray(lengths)[:, None]

    def _scatter(self, packed, mask, tail_shape):
        out = np.zeros(mask.shape + tail_shape, dtype=self.dtype)
        out[mask] = packed
        return out

    def forward(self, inputs, lengths, train=False):
        raise NotImplementedError

    def backward(self, dlogits):
        raise NotImplementedError


class RSignC(Model):
    """Raw-frame recognizer: time-distributed CNN and dense stack feeding a
    unidirectional LSTM, then per-step logits."""

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        rng, dtype = self._init_rng, self.dtype
        self.cnn = _ConvStack(config.frame_side, 1, config.conv_blocks, rng, dtype)
        for name, layer in self.cnn.named:
            self._register(f"cnn.{name}", layer)
        self.dense_chain = []
        width = self.cnn.out_dim
        for i, units in enumerate(config.dense_units):
            dense = self._register(f"dense{i}", Dense(width, units, rng=rng, dtype=dtype))
            drop = Dropout(config.dropout, dtype=dtype)
            self.dropout_layers.append(drop)
            self.dense_chain.append((dense, ReLU(dtype), drop))
            width = units
        self.lstm = self._register("lstm", LSTM(width, config.lstm_units, rng=rng, dtype=dtype))
        self.lstm_drop = Dropout(config.dropout, dtype=dtype)
        self.dropout_layers.append(self.lstm_drop)
        self.head = self._register(
            "head", Dense(config.lstm_units, config.num_classes, rng=rng, dtype=dtype)
        )

    def forward(self, inputs, lengths, train=False):
        frames = np.asarray(inputs["frames"], dtype=self.dtype)
        bsz, t_max = frames.shape[:2]
        mask = self._valid_mask(lengths, t_max)
        x = self.cnn.forward(frames[mask], train)
        for dense, relu, drop in self.dense_chain:
            x = drop.forward(relu.forward(dense.forward(x)), train=train, rng=self.rng)
        feat_seq = self._scatter(x, mask, (x.shape[1],))
        hidden = self.lstm.forward(feat_seq, train=train)
        packed_h = self.lstm_drop.forward(hidden[mask], train=train, rng=self.rng)
        logits_packed = self.head.forward(packed_h)
        self._cache = mask
        self._forward_done = True
        return self._scatter(logits_packed, mask, (self.config.num_classes,))

    def backward(self, dlogits):
        if not self._forward_done:
            raise StateError("backward before forward")
        mask = self._cache
        self._forward_done = False
        d = self.head.backward(np.asarray(dlogits, dtype=self.dtype)[mask])
        d = self.lstm_drop.backward(d)
        dh = self._scatter(d, mask, (d.shape[1],))
        dfeat = self.lstm.backward(dh)
        d = dfeat[mask]
        for dense, relu, drop in reversed(self.dense_chain):
            d = dense.backward(relu.backward(drop.backward(d)))
        self.cnn.backward(d)


class _HandBranch:
    """One hand's three cue encoders plus the per-hand fusion BLSTM."""

    def __init__(self, model: "MCSignC", prefix, config: ModelConfig, rng, dtype):
        self.cnn = _ConvStack(config.image_side, 1, config.conv_blocks, rng, dtype)
        for name, layer in self.cnn.named:
            model._register(f"{prefix}.cnn.{name}", layer)
        self.img_lstm = model._register(
            f"{prefix}.img_lstm", LSTM(self.cnn.out_dim, config.image_lstm, rng=rng, dtype=dtype)
        )
        self.disp_lstm = model._register(
            f"{prefix}.disp_lstm", LSTM(2, config.movement_lstm, rng=rng, dtype=dtype)
        )
        self.loc_lstm = model._register(
            f"{prefix}.loc_lstm", LSTM(3, config.location_lstm, rng=rng, dtype=dtype)
        )
        self.concat_width = config.image_lstm + config.movement_lstm + config.location_lstm
        self.fuse = model._register(
            f"{prefix}.fuse", BiLSTM(self.concat_width, config.hand_blstm, rng=rng, dtype=dtype)
        )
        self.drop = Dropout(config.dropout, dtype=dtype)
        model.dropout_layers.append(self.drop)
        self.model = model

    def forward(self, images, disp, loc, mask, lengths, train):
        x = self.cnn.forward(images[mask], train)
        img_seq = self.model._scatter(x, mask, (x.shape[1],))
        img_out = self.img_lstm.forward(img_seq, train=train)
        disp_out = self.disp_lstm.forward(disp, train=train)
        loc_out = self.loc_lstm.forward(loc, train=train)
        fused = self.fuse.forward(
            np.concatenate([img_out, disp_out, loc_out], axis=2), lengths, train=train
        )
        packed = self.drop.forward(fused[mask], train=train, rng=self.model.rng)
        self._splits = (img_out.shape[2], disp_out.shape[2])
        return self.model._scatter(packed, mask, (fused.shape[2],))

    def backward(self, dout, mask):
        d = self.drop.backward(dout[mask])
        dfused = self.model._scatter(d, mask, (d.shape[1],))
        dcat = self.fuse.backward(dfused)
        w_img, w_disp = self._splits
        dimg = self.img_lstm.backward(dcat[:, :, :w_img])
        self.disp_lstm.backward(dcat[:, :, w_img:w_img + w_disp])
        self.loc_lstm.backward(dcat[:, :, w_img + w_disp:])
        self.cnn.backward(dimg[mask])


class MCSignC(Model):
    """Multi-cue recognizer: per-hand shape/movement/location encoders fused
    by a per-hand BLSTM, both hands fused by a second BLSTM, then per-step
    logits."""

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        rng, dtype = self._init_rng, self.dtype
        self.left = _HandBranch(self, "left", config, rng, dtype)
        self.right = _HandBranch(self, "right", config, rng, dtype)
        self.hand_concat_width = self.left.concat_width
        self.cross = self._register(
            "cross", BiLSTM(4 * config.hand_blstm, config.cross_blstm, rng=rng, dtype=dtype)
        )
        self.cross_drop = Dropout(config.dropout, dtype=dtype)
        self.dropout_layers.append(self.cross_drop)
        self.head = self._register(
            "head", Dense(2 * config.cross_blstm, config.num_classes, rng=rng, dtype=dtype)
        )

    def forward(self, inputs, lengths, train=False):
        imgs_l = np.asarray(inputs["img_l"], dtype=self.dtype)
        bsz, t_max = imgs_l.shape[:2]
        mask = self._valid_mask(lengths, t_max)
        as_dt = lambda key: np.asarray(inputs[key], dtype=self.dtype)
        out_l = self.left.forward(imgs_l, as_dt("disp_l"), as_dt("loc_l"), mask, lengths, train)
        out_r = self.right.forward(
            as_dt("img_r"), as_dt("disp_r"), as_dt("loc_r"), mask, lengths, train
        )
        cross_out = self.cross.forward(
            np.concatenate([out_l, out_r], axis=2), lengths, train=train
        )
        packed = self.cross_drop.forward(cross_out[mask], train=train, rng=self.rng)
        logits_packed = self.head.forward(packed)
        self._cache = (mask, out_l.shape[2])
        self._forward_done = True
        return self._scatter(logits_packed, mask, (self.config.num_classes,))

    def backward(self, dlogits):
        if not self._forward_done:
            raise StateError("backward before forward")
        mask, w_left = self._cache
        self._forward_done = False
        d = self.head.backward(np.asarray(dlogits, dtype=self.dtype)[mask])
        d = self.cross_drop.backward(d)
        dcross = self._scatter(d, mask, (d.shape[1],))
        dhands = self.cross.backward(dcross)
        self.left.backward(dhands[:, :, :w_left], mask)
        self.right.backward(dhands[:, :, w_left:], mask)


def build_rsign_c(config: ModelConfig):
    if config.architecture != ARCH_RSIGN:
        raise ConfigError(f"config is for {config.architecture!r}, not {ARCH_RSIGN!r}")
    return RSignC(config)


def build_mcsign_c(config: ModelConfig):
    if config.architecture != ARCH_MCSIGN:
        raise ConfigError(f"config is for {config.architecture!r}, not {ARCH_MCSIGN!r}")
    return MCSignC(config)


def build_model(config: ModelConfig):
    return build_rsign_c(config) if config.architecture == ARCH_RSIGN else build_mcsign_c(config)


def model_forward(model: Model, batch, mode="infer"):
    """Run the batch through the model; one LogitSequence per sample with
    its true length, regardless of batch padding."""
    if mode not in ("infer", "train"):
        raise ConfigError(f"mode must be 'infer' or 'train', got {mode!r}")
    logits = model.forward(batch.inputs, batch.input_lengths, train=(mode == "train"))
    return [
        LogitSequence(logits[b], int(batch.input_lengths[b]))
        for b in range(len(batch.ids))
    ]


def train_step(model: Model, batch, optimizer: Adam, train_config: TrainConfig):
    """One optimizer update on a padded batch.

    Returns (mean loss over feasible samples, number used).  Infeasible
    samples (targets longer than their frame budget allows) are skipped
    with a warning rather than poisoning the batch.
    """
    logits = model.forward(batch.inputs, batch.input_lengths, train=True)
    dlogits = np.zeros_like(logits, dtype=np.float64)
    losses = []
    used = []
    for b, sid in enumerate(batch.ids):
        t_len = int(batch.input_lengths[b])
        target = tuple(batch.targets[b, : batch.target_lengths[b]])
        if t_len < min_input_length(target):
            logger.warning("skipping %s: target needs %d frames, input has %d",
                           sid, min_input_length(target), t_len)
            continue
        loss, grad = ctc_loss(LogitSequence(logits[b], t_len), target)
        losses.append(loss)
        used.append((b, t_len, grad))
    if not used:
        model.backward(np.zeros_like(logits))  # release caches
        return None, 0
    for b, t_len, grad in used:
        dlogits[b, :t_len] = grad / len(used)
    model.zero_grads()
    model.backward(dlogits)
    items = model.trainable_items()
    if train_config.weight_decay > 0:
        for name, param, grad in items:
            if name.rsplit(".", 1)[-1] in DECAYED_KEYS:
                grad += train_config.weight_decay * param
    clip_global_norm([grad for _, _, grad in items], train_config.clip_norm)
    optimizer.step(items)
    model.step += 1
    return float(np.mean(losses)), len(used)


def fit(model: Model, train_ds, dev_ds, train_config: TrainConfig, checkpoint_path=None):
    """Adam over per-batch mean CTC loss with per-epoch dev WER tracking.

    Keeps (and finally restores) the parameters of the best dev epoch;
    writes them to checkpoint_path when given.  Stops early once
    stop_dev_wer or max_seconds is hit.  Returns the per-epoch history.
    """
    model.set_dropout_rate(train_config.dropout)
    optimizer = Adam(train_config)
    kind = model.config.input_kind
    history = []
    best = None  # (wer, snapshot, step)
    started = time.monotonic()
    for epoch in range(train_config.max_epochs):
        epoch_losses = []
        any_used = False
        for batch in batch_iter(train_ds, train_config.batch_size,
                                shuffle_seed=train_config.seed + epoch, kind=kind):
            loss, used = train_step(model, batch, optimizer, train_config)
            if used:
                any_used = True
                epoch_losses.append(loss)
            if train_config.max_seconds is not None and \
                    time.monotonic() - started > train_config.max_seconds:
                break
        if not any_used:
            raise DataError("every training sample is infeasible for its frame budget")
        dev_report = evalkit.evaluate_model(model, dev_ds, beam_size=4)
        entry = {
            "epoch": epoch,
            "train_loss": float(np.mean(epoch_losses)),
            "dev_wer": dev_report.wer_percent,
            "seconds": round(time.monotonic() - started, 3),
        }
        history.append(entry)
        logger.info("epoch %d: loss %.4f dev WER %.1f", epoch, entry["train_loss"], entry["dev_wer"])
        if best is None or entry["dev_wer"] < best[0]:
            best = (entry["dev_wer"], model.snapshot(), model.step)
        if train_config.stop_dev_wer is not None and entry["dev_wer"] <= train_config.stop_dev_wer:
            break
        if train_config.max_seconds is not None and \
                time.monotonic() - started > train_config.max_seconds:
            break
    if best is not None:
        model.restore(best[1])
    if checkpoint_path is not None:
        save_checkpoint(model, train_ds.vocabulary, checkpoint_path)
    return history


def _rng_state(rng):
    state = rng.bit_generator.state
    return json.loads(json.dumps(state))  # plain JSON types only


def save_checkpoint(model: Model, vocabulary, path):
    """Binary layout: magic, u32 LE version, u64 LE metadata length, JSON
    metadata, then every named tensor as little-endian float32 in the
    declared order."""
    tensors = [(name, layer.params[key]) for name, layer, key in model.named_tensors()]
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "vocab": list(vocabulary.glosses),
        "step": model.step,
        "rng_state": _rng_state(model.rng),
        "tensors": [{"name": name, "shape": list(value.shape)} for name, value in tensors],
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fp:
        fp.write(CHECKPOINT_MAGIC)
        fp.write(struct.pack("<I", CHECKPOINT_VERSION))
        fp.write(struct.pack("<Q", len(blob)))
        fp.write(blob)
        for _, value in tensors:
            fp.write(np.ascontiguousarray(value, dtype="<f4").tobytes())


def load_checkpoint(path, architecture=None):
    """Rebuild the model and vocabulary from a checkpoint file.

    architecture, when given, guards against loading the wrong model kind.
    """
    from .vocab import GlossVocabulary

    with open(path, "rb") as fp:
        data = fp.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"bad magic bytes {data[:4]!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack_from("<Q", data, 8)
    meta_start = 16
    if len(data) < meta_start + meta_len:
        raise CheckpointFormatError("truncated metadata block")
    try:
        meta = json.loads(data[meta_start:meta_start + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"unreadable metadata: {exc}") from None
    config = ModelConfig.from_dict(meta["config"])
    if architecture is not None and config.architecture != architecture:
        raise CheckpointMismatchError(
            f"checkpoint holds {config.architecture!r}, expected {architecture!r}"
        )
    model = build_model(config)
    declared = {t["name"]: tuple(t["shape"]) for t in meta["tensors"]}
    offset = meta_start + meta_len
    for name, layer, key in model.named_tensors():
        value = layer.params[key]
        if name not in declared or declared[name] != value.shape:
            raise CheckpointMismatchError(
                f"tensor {name} shape {value.shape} disagrees with checkpoint"
            )
        nbytes = value.size * 4
        if offset + nbytes > len(data):
            raise CheckpointFormatError("truncated tensor payload")
        loaded = np.frombuffer(data, dtype="<f4", count=value.size, offset=offset)
        value[...] = loaded.reshape(value.shape).astype(value.dtype)
        offset += nbytes
    model.step = int(meta["step"])
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    model.rng = rng
    return model, GlossVocabulary(meta["vocab"])
