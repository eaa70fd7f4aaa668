"""
Skeleton-to-image transformer: a convolutional encoder-decoder with skip
connections from joint heat maps plus a reference image to an RGB frame,
trained on pixel BCE plus a feature-matching loss against a fixed random
perception network.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator

from src.exceptions import DatasetError, ShapeError
from src.models import HeatMapStack
from src.modeling.networks import Bound, Params, bind, freeze_params
from src.modeling.train import LossHistory, Trainable, epoch_batches
from src.numerics import AdamHyper, Tape, Var
from src.numerics import ops
from src.numerics.conv import conv2d, upsample2x
from src.posecore import default_sigma, heatmap_batch

logger = logging.getLogger(__name__)

BCE_EPS = 1e-6


class S2iArchitecture(BaseModel):
    """
    Encoder-decoder layout.

    Each stride-2 encoder conv halves the resolution; each decoder module
    upsamples by 2, concatenates the last encoder activation at the new
    resolution (the raw input at full size) and applies two convs. With
    ``final_upsample`` the last resolution step is a single (upsample, conv)
    producing RGB; otherwise a final conv does.
    """
    size: int = Field(32, ge=4)
    kernel: int = 5
    encoder_channels: List[int] = [8, 8, 16, 16]
    encoder_strides: List[int] = [2, 1, 2, 1]
    decoder_channels: List[int] = [16, 8]
    final_upsample: bool = False

    @model_validator(mode="after")
    def check_layout(self) -> "S2iArchitecture":
        if len(self.encoder_channels) != len(self.encoder_strides) or not self.encoder_channels:
            raise ValueError("encoder channels and strides must be non-empty and of equal length")
        if any(s not in (1, 2) for s in self.encoder_strides):
            raise ValueError("encoder strides must be 1 or 2")
        if self.kernel not in (3, 5):
            raise ValueError("kernel must be 3 or 5")
        downsamples = self.encoder_strides.count(2)
        if downsamples != len(self.decoder_channels) + int(self.final_upsample):
            raise ValueError("every downsampling conv needs a matching decoder upsample")
        if self.size % (2**downsamples):
            raise ValueError(f"image size {self.size} is not a multiple of 2^{downsamples}")
        return self

    @classmethod
    def full_scale(cls) -> "S2iArchitecture":
        """128x128 layout: eight 5x5 encoder convs, three (up, conv, conv) modules, one (up, conv)."""
        return cls(
            size=128,
            encoder_channels=[32, 32, 64, 64, 128, 128, 256, 256],
            encoder_strides=[2, 1, 2, 1, 2, 1, 2, 1],
            decoder_channels=[128, 64, 32],
            final_upsample=True,
        )

    def skip_table(self) -> List[int]:
        """
        Encoder layer concatenated after each upsample (-1 for the raw input).

        Returns:
            List[int]: One entry per decoder module, plus one for the final upsample
        """
        resolution = [self.size]
        for stride in self.encoder_strides:
            resolution.append(resolution[-1] // stride)
        steps = len(self.decoder_channels) + int(self.final_upsample)
        table = []
        current = resolution[-1]
        for _ in range(steps):
            current *= 2
            last = max(i for i, r in enumerate(resolution) if r == current)
            table.append(last - 1)
        return table


def _conv_init(rng: np.random.Generator, c_out: int, c_in: int, kernel: int) -> Tuple[np.ndarray, np.ndarray]:
    fan_in = c_in * kernel * kernel
    return rng.normal(scale=np.sqrt(2.0 / fan_in), size=(c_out, c_in, kernel, kernel)), np.zeros(c_out)


@dataclass(frozen=True, eq=False)
class TransformerF:
    """Encoder-decoder from (J heat maps + 3 reference channels) to 3 output channels in (0, 1)."""

    params: Params
    arch: S2iArchitecture
    joint_count: int

    @classmethod
    def create(cls, rng: np.random.Generator, joint_count: int, arch: Optional[S2iArchitecture] = None) -> "TransformerF":
        arch = arch or S2iArchitecture()
        k = arch.kernel
        params: Params = {}
        channels = [joint_count + 3]
        in_ch = joint_count + 3
        for i, out_ch in enumerate(arch.encoder_channels):
            params[f"enc{i}_w"], params[f"enc{i}_b"] = _conv_init(rng, out_ch, in_ch, k)
            channels.append(out_ch)
            in_ch = out_ch
        skips = arch.skip_table()
        for i, out_ch in enumerate(arch.decoder_channels):
            merged = in_ch + channels[skips[i] + 1]
            params[f"dec{i}a_w"], params[f"dec{i}a_b"] = _conv_init(rng, out_ch, merged, k)
            params[f"dec{i}b_w"], params[f"dec{i}b_b"] = _conv_init(rng, out_ch, out_ch, k)
            in_ch = out_ch
        if arch.final_upsample:
            in_ch += channels[skips[-1] + 1]
        params["out_w"], params["out_b"] = _conv_init(rng, 3, in_ch, k)
        params["out_w"] = params["out_w"] * 0.1
        return cls(freeze_params(params), arch, joint_count)

    def with_params(self, params: Params) -> "TransformerF":
        return TransformerF(freeze_params(params), self.arch, self.joint_count)

    @property
    def dims(self) -> Dict[str, int]:
        return {"J": self.joint_count, "w": self.arch.size, "h": self.arch.size}

    def logits(self, bound: Bound, x: Var) -> Var:
        """Pre-sigmoid output (N, 3, H, W) for input (N, J + 3, H, W)."""
        if len(x.shape) != 4 or x.shape[1] != self.joint_count + 3:
            raise ShapeError(f"transformer expects (N, {self.joint_count + 3}, H, W), got {x.shape}")
        if x.shape[2] != self.arch.size or x.shape[3] != self.arch.size:
            raise ShapeError(f"transformer is built for {self.arch.size}x{self.arch.size} inputs")
        activations = [x]
        h = x
        for i, stride in enumerate(self.arch.encoder_strides):
            h = ops.leaky_relu(conv2d(h, bound[f"enc{i}_w"], bound[f"enc{i}_b"], stride))
            activations.append(h)
        skips = self.arch.skip_table()
        for i in range(len(self.arch.decoder_channels)):
            h = ops.concat([upsample2x(h), activations[skips[i] + 1]], axis=1)
            h = ops.leaky_relu(conv2d(h, bound[f"dec{i}a_w"], bound[f"dec{i}a_b"]))
            h = ops.leaky_relu(conv2d(h, bound[f"dec{i}b_w"], bound[f"dec{i}b_b"]))
        if self.arch.final_upsample:
            h = ops.concat([upsample2x(h), activations[skips[-1] + 1]], axis=1)
        return conv2d(h, bound["out_w"], bound["out_b"])

    def predict(self, heat: np.ndarray, ref: np.ndarray) -> np.ndarray:
        """
        Images for a batch.

        Args:
            heat: Heat maps (N, J, H, W)
            ref: Reference images (N, H, W, 3)

        Returns:
            np.ndarray: Images (N, H, W, 3) in (0, 1)
        """
        tape = Tape()
        x = tape.constant(stack_inputs(heat, ref))
        out = ops.sigmoid(self.logits(bind(tape, self.params, trainable=False), x))
        return out.value.transpose(0, 2, 3, 1)


def stack_inputs(heat: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Concatenate heat maps (N, J, H, W) with channel-first reference images."""
    heat = np.asarray(heat, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if heat.ndim != 4 or ref.ndim != 4 or ref.shape[3] != 3:
        raise ShapeError("expected heat maps (N, J, H, W) and reference images (N, H, W, 3)")
    if heat.shape[0] != ref.shape[0] or heat.shape[2:] != ref.shape[1:3]:
        raise ShapeError(f"heat maps {heat.shape[2:]} and reference {ref.shape[1:3]} differ in size")
    return np.concatenate([heat, ref.transpose(0, 3, 1, 2)], axis=1)


def f_forward(heat: HeatMapStack, ref: np.ndarray, f: TransformerF) -> np.ndarray:
    """
    Render one frame.

    Args:
        heat: Joint heat maps of the target pose
        ref: Reference image (H, W, 3) in [0, 1]
        f: Transformer

    Returns:
        np.ndarray: Image (H, W, 3) in (0, 1)
    """
    if heat.joint_count != f.joint_count:
        raise ShapeError(f"{heat.joint_count} heat maps given, transformer expects {f.joint_count}")
    return f.predict(heat.maps[None], np.asarray(ref)[None])[0]


@dataclass(frozen=True, eq=False)
class PerceptionNet:
    """
    Fixed conv stack whose activations are compared by the feature-matching loss.

    Attributes:
        params: Frozen conv kernels
        strides: Stride per conv
        tap_input: Also compare the raw input as a layer
        weights: Per-tap weights; defaults to 1 / (tap elements)
    """

    params: Params
    strides: Tuple[int, ...]
    tap_input: bool = False
    weights: Optional[Tuple[float, ...]] = None

    @classmethod
    def create(
        cls,
        seed: int = 1234,
        channels: Sequence[int] = (8, 8, 16, 16, 16),
        strides: Sequence[int] = (1, 2, 1, 2, 1),
    ) -> "PerceptionNet":
        rng = np.random.default_rng(seed)
        params: Params = {}
        in_ch = 3
        for i, out_ch in enumerate(channels):
            params[f"phi{i}_w"], params[f"phi{i}_b"] = _conv_init(rng, out_ch, in_ch, 3)
            in_ch = out_ch
        return cls(freeze_params(params), tuple(strides))

    @classmethod
    def identity(cls) -> "PerceptionNet":
        """No convs; the single tap is the image itself with weight 1."""
        return cls({}, (), tap_input=True, weights=(1.0,))

    def with_weights(self, weights: Sequence[float]) -> "PerceptionNet":
        return PerceptionNet(self.params, self.strides, self.tap_input, tuple(float(w) for w in weights))

    def taps(self, x: Var) -> List[Var]:
        """Activations compared by the loss, input (N, 3, H, W)."""
        tape = x.tape
        bound = bind(tape, self.params, trainable=False)
        result = [x] if self.tap_input else []
        h = x
        for i, stride in enumerate(self.strides):
            h = ops.leaky_relu(conv2d(h, bound[f"phi{i}_w"], bound[f"phi{i}_b"], stride))
            result.append(h)
        return result

    def tap_weights(self, taps: Sequence[Var]) -> List[float]:
        if self.weights is not None:
            if len(self.weights) != len(taps):
                raise ShapeError(f"{len(self.weights)} weights for {len(taps)} taps")
            return list(self.weights)
        return [1.0 / float(np.prod(t.shape[1:])) for t in taps]


def _nchw(images: np.ndarray) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    if images.ndim != 4 or images.shape[3] != 3:
        raise ShapeError(f"expected (H, W, 3) or (N, H, W, 3) images, got {images.shape}")
    return images.transpose(0, 3, 1, 2)


def bce_loss(pred: np.ndarray, truth: np.ndarray, eps: float = BCE_EPS) -> float:
    """
    Mean pixel binary cross-entropy with the prediction clamped to [eps, 1 - eps].

    Args:
        pred: Predicted intensities
        truth: Target intensities in [0, 1]
        eps: Clamp margin

    Returns:
        float: Loss averaged over every pixel-channel
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction {pred.shape} and truth {truth.shape} differ")
    p = np.clip(pred, eps, 1.0 - eps)
    return float(-np.mean(truth * np.log(p) + (1.0 - truth) * np.log(1.0 - p)))


def feature_match_var(pred: Var, truth: np.ndarray, phi: PerceptionNet) -> Var:
    """Weighted per-tap L1 distance, averaged over the batch, recorded against ``pred``."""
    tape = pred.tape
    pred_taps = phi.taps(pred)
    truth_taps = phi.taps(tape.constant(truth))
    weights = phi.tap_weights(pred_taps)
    count = pred.shape[0]
    total: Optional[Var] = None
    for weight, a, b in zip(weights, pred_taps, truth_taps):
        term = ops.scale(ops.sum_(ops.abs_(ops.sub(a, tape.constant(b.value)))), weight / count)
        total = term if total is None else ops.add(total, term)
    if total is None:
        raise ShapeError("perception network has no taps")
    return total


def feature_match_loss(pred: np.ndarray, truth: np.ndarray, phi: PerceptionNet) -> float:
    """
    Sum over taps of lambda_l * |phi_l(pred) - phi_l(truth)|_1, averaged over the batch.

    Args:
        pred: Images (H, W, 3) or (N, H, W, 3)
        truth: Images of the same shape
        phi: Perception network

    Returns:
        float: Loss value
    """
    pred_nchw, truth_nchw = _nchw(pred), _nchw(truth)
    if pred_nchw.shape != truth_nchw.shape:
        raise ShapeError("prediction and truth differ in shape")
    tape = Tape()
    return float(feature_match_var(tape.constant(pred_nchw), truth_nchw, phi).value)


def bce_from_logits(logits: Var, truth: np.ndarray) -> Var:
    """Mean BCE of sigmoid(logits) against ``truth``, via log-sigmoid for stability."""
    pos = ops.mul_const(ops.log_sigmoid(logits), truth)
    neg = ops.mul_const(ops.log_sigmoid(ops.scale(logits, -1.0)), 1.0 - truth)
    return ops.scale(ops.sum_(ops.add(pos, neg)), -1.0 / truth.size)


class S2iTrainConfig(BaseModel):
    """
    Settings for the skeleton-to-image stage.

    Attributes:
        lam: Weight of the feature-matching term
        hyper: Adam settings
        batch_size: Minibatch size
        epochs: Passes over the pairs
        arch: Network layout
        perception_seed: Seed of the fixed perception network
        sigma: Heat-map spread in pixels (default scales with image size)
    """
    lam: float = Field(0.01, ge=0)
    hyper: AdamHyper = AdamHyper(lr=0.001, beta1=0.9, beta2=0.999)
    batch_size: int = Field(16, ge=1)
    epochs: int = Field(30, ge=1)
    arch: S2iArchitecture = S2iArchitecture()
    perception_seed: int = 1234
    sigma: Optional[float] = Field(None, gt=0)
    log_every: int = Field(1, ge=0)


@dataclass(eq=False)
class S2iPair:
    """Training triple: target pose, reference image and ground-truth image (both (H, W, 3))."""

    pose: np.ndarray
    reference: np.ndarray
    truth: np.ndarray


@dataclass
class S2iResult:
    transformer: TransformerF
    history: pd.DataFrame = field(repr=False)


def s2i_loss(
    f: TransformerF, bound: Bound, x: np.ndarray, truth: np.ndarray, phi: PerceptionNet, lam: float
) -> Tuple[Var, Var, Optional[Var]]:
    """
    Combined loss for one batch.

    Args:
        f: Transformer
        bound: Its parameters on a tape
        x: Network input (N, J + 3, H, W)
        truth: Ground truth (N, 3, H, W)
        phi: Perception network
        lam: Feature-matching weight

    Returns:
        Tuple[Var, Var, Optional[Var]]: Total loss, BCE term, feature term (None when lam is 0)
    """
    tape = next(iter(bound.values())).tape
    logits = f.logits(bound, tape.constant(x))
    bce = bce_from_logits(logits, truth)
    if lam == 0:
        return bce, bce, None
    feature = feature_match_var(ops.sigmoid(logits), truth, phi)
    return ops.add(bce, ops.scale(feature, lam)), bce, feature


def train_s2i(
    pairs: Sequence[S2iPair],
    cfg: Optional[S2iTrainConfig] = None,
    seed: int = 0,
) -> S2iResult:
    """
    Fit the transformer with Adam on BCE plus lambda times feature matching.

    Args:
        pairs: Training triples
        cfg: Training settings
        seed: Seed for initialization and shuffling

    Returns:
        S2iResult: Trained transformer and one history row per epoch
    """
    cfg = cfg or S2iTrainConfig()
    if not pairs:
        raise DatasetError("skeleton-to-image training needs at least one pair")
    size = cfg.arch.size
    poses = np.stack([np.asarray(p.pose, dtype=np.float64) for p in pairs])
    references = np.stack([np.asarray(p.reference, dtype=np.float64) for p in pairs])
    truths = np.stack([np.asarray(p.truth, dtype=np.float64) for p in pairs])
    if references.shape[1:] != (size, size, 3) or truths.shape != references.shape:
        raise ShapeError(f"pair images must all be {size}x{size}x3")
    sigma = cfg.sigma or default_sigma(size)
    inputs = stack_inputs(heatmap_batch(poses, sigma, size, size), references)
    targets = truths.transpose(0, 3, 1, 2)

    rng = np.random.default_rng(seed)
    transformer = TransformerF.create(rng, poses.shape[1] // 2, cfg.arch)
    phi = PerceptionNet.create(cfg.perception_seed)
    opt = Trainable(transformer.params, cfg.hyper)
    history = LossHistory("s2i", cfg.log_every)

    for epoch in range(cfg.epochs):
        totals = {"loss": 0.0, "bce": 0.0, "feature": 0.0}
        batches = 0
        for idx in epoch_batches(rng, len(pairs), cfg.batch_size):
            tape = Tape()
            bound = bind(tape, opt.params)
            loss, bce, feature = s2i_loss(transformer, bound, inputs[idx], targets[idx], phi, cfg.lam)
            opt.update(tape, loss, bound, epoch)
            totals["loss"] += float(loss.value)
            totals["bce"] += float(bce.value)
            totals["feature"] += float(feature.value) if feature is not None else 0.0
            batches += 1
        history.append(epoch, **{key: value / batches for key, value in totals.items()})

    logger.info("s2i_trained", extra={"record": {"epochs": cfg.epochs, "pairs": len(pairs), "seed": seed}})
    return S2iResult(transformer=transformer.with_params(opt.params), history=history.to_frame())
