"""Adversarial training of an inverse generator towards U(0, 1).

The critic sees synthetic uniform samples on one side and generator outputs
on the other; its parameters are clipped after every update to keep it
(roughly) Lipschitz.  The generator is pushed to lower the critic's score on
its own outputs, which drives the output law towards uniform.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .nn import Mlp, RmsPropState, backward, clip_weights, forward, init_mlp, rmsprop_step
from .uniformity import EPS_OUT, k1_rows, quantize

log = logging.getLogger(__name__)


class DegenerateInputError(ValueError):
    """Training data with a zero-variance coordinate (or otherwise unusable)."""


class TrainingDiverged(FloatingPointError):
    def __init__(self, iteration: int, what: str = "parameters"):
        super().__init__(f"non-finite {what} at generator iteration {iteration}")
        self.iteration = iteration


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    clip_c: float = 0.01
    batch_size_m: int = 100
    critic_iters_n: int = 10
    total_generator_iters: int = 2000
    seed: int = 0
    hidden: tuple[int, ...] = (32, 32)
    critic_hidden: tuple[int, ...] = (32, 32)
    # clipped critic biases pin first-layer kinks at |input| = 1; widening the
    # input range lets them land inside the data
    critic_input_scale: float = 10.0
    validation_fraction: float = 0.1
    validation_every: int = 50
    validation_batches: int = 100
    validation_M: int = 200
    validation_N: int = 50

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.critic_hidden = tuple(int(h) for h in self.critic_hidden)
        for name in ("learning_rate", "clip_c"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("batch_size_m", "critic_iters_n", "total_generator_iters",
                     "validation_every", "validation_batches", "validation_N"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.validation_M < 2:
            raise ValueError("validation_M must be >= 2")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in [0, 1)")

    def generator_arch(self, d: int) -> list[int]:
        return [d, *self.hidden, 1]

    def critic_arch(self) -> list[int]:
        return [1, *self.critic_hidden, 1]

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


class TraceRow(NamedTuple):
    iteration: int
    critic_loss: float
    gen_loss: float
    val_k1_mean: float  # nan between validation checkpoints


@dataclass
class TrainingTrace:
    rows: list[TraceRow] = field(default_factory=list)
    best_iteration: int = 0
    best_val_k1: float = float("nan")

    def to_csv(self, dest) -> None:
        """Write to a path or an open text stream."""
        if hasattr(dest, "write"):
            self._write(dest)
            return
        with open(dest, "w", newline="") as fh:
            self._write(fh)

    def _write(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "critic_loss", "gen_loss", "val_k1_mean"])
        for r in self.rows:
            w.writerow([r.iteration, repr(r.critic_loss), repr(r.gen_loss),
                        "" if np.isnan(r.val_k1_mean) else repr(r.val_k1_mean)])


def _check_batch(batch: np.ndarray, net: Mlp, name: str) -> None:
    if batch.ndim != 2 or batch.shape[0] == 0:
        raise ValueError(f"{name} must be a non-empty 2-D array")
    if batch.shape[1] != net.input_dim:
        raise ValueError(f"{name} has dim {batch.shape[1]}, network expects {net.input_dim}")


def critic_input(y: np.ndarray, scale: float) -> np.ndarray:
    """Fixed affine map of (0, 1) onto (-scale, scale) in front of the critic."""
    return scale * (2.0 * y - 1.0)


def critic_step(
    critic: Mlp,
    generator: Mlp,
    data_batch: np.ndarray,
    uniform_batch: np.ndarray,
    lr: float,
    state: RmsPropState,
    clip_c: float,
    input_scale: float = 1.0,
) -> tuple[Mlp, RmsPropState, float]:
    """One RMSProp descent step on mean f(U) - mean f(g(Z)), then clip.

    Returns the new critic, optimizer state, and the loss before the step.
    """
    data_batch = np.asarray(data_batch, dtype=float)
    uniform_batch = np.asarray(uniform_batch, dtype=float).reshape(-1, 1)
    _check_batch(data_batch, generator, "data_batch")
    m = data_batch.shape[0]
    if uniform_batch.shape[0] != m:
        raise ValueError(f"uniform batch has {uniform_batch.shape[0]} samples, data batch {m}")
    fake = forward(generator, data_batch)
    both = critic_input(np.vstack([uniform_batch, fake]), input_scale)
    scores = forward(critic, both)[:, 0]
    loss = scores[:m].mean() - scores[m:].mean()
    weights = np.concatenate([np.full(m, 1.0 / m), np.full(m, -1.0 / m)])
    grads = backward(critic, both, weights[:, None])
    params, state = rmsprop_step(critic.params(), grads.params(), state, lr)
    return critic.with_params(clip_weights(params, clip_c)), state, float(loss)


def generator_step(
    generator: Mlp,
    critic: Mlp,
    data_batch: np.ndarray,
    lr: float,
    state: RmsPropState,
    input_scale: float = 1.0,
) -> tuple[Mlp, RmsPropState, float]:
    """One RMSProp descent step on mean f(g(Z)); no clipping."""
    data_batch = np.asarray(data_batch, dtype=float)
    _check_batch(data_batch, generator, "data_batch")
    m = data_batch.shape[0]
    fake = critic_input(forward(generator, data_batch), input_scale)
    loss = float(forward(critic, fake).mean())
    dy = 2.0 * input_scale * backward(critic, fake, np.full((m, 1), 1.0 / m)).inputs
    grads = backward(generator, data_batch, dy)
    params, state = rmsprop_step(generator.params(), grads.params(), state, lr)
    return generator.with_params(params), state, loss


def fold_standardization(net: Mlp, shift: np.ndarray, scale: np.ndarray) -> Mlp:
    """Absorb ``(z - shift) / scale`` into the first layer."""
    w0 = net.weights[0] / scale[:, None]
    b0 = net.biases[0] - (shift / scale) @ net.weights[0]
    return Mlp(net.layer_dims, (w0, *net.weights[1:]), (b0, *net.biases[1:]),
               net.hidden_activation, net.output_activation)


def validation_k1(generator: Mlp, batches: np.ndarray, M: int) -> float:
    """Mean K1 over ``batches`` of shape ``(B, N, d)`` pushed through ``generator``."""
    B, N, d = batches.shape
    y = forward(generator, batches.reshape(B * N, d))[:, 0]
    sym = quantize(np.clip(y, EPS_OUT, 1.0 - EPS_OUT), M).reshape(B, N)
    return float(k1_rows(sym).mean())


def _validation_batches(val: np.ndarray, cfg: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    n = cfg.validation_N
    if len(val) < n:
        raise DegenerateInputError(
            f"validation split has {len(val)} rows, fewer than validation_N={n}")
    # distinct rows inside a batch; a repeated row would fake a coincidence
    idx = np.stack([rng.choice(len(val), size=n, replace=False)
                    for _ in range(cfg.validation_batches)])
    return val[idx]


def minibatch_indices(rng: np.random.Generator, n_rows: int, m: int) -> np.ndarray:
    """Uniform draws with replacement over the training split."""
    return rng.integers(0, n_rows, size=m)


def check_training_data(data) -> np.ndarray:
    z = np.asarray(data, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if z.ndim != 2 or z.shape[0] == 0:
        raise DegenerateInputError("training data must be a non-empty 2-D array")
    if not np.all(np.isfinite(z)):
        raise DegenerateInputError("training data contains NaN or infinite values")
    std = z.std(axis=0)
    flat = np.flatnonzero(std == 0)
    if flat.size:
        raise DegenerateInputError(
            f"zero-variance coordinate(s) {flat.tolist()}: a constant cannot be mapped to U(0,1)")
    return z


def train(data, config: TrainConfig | None = None) -> tuple[Mlp, TrainingTrace]:
    """Learn an inverse generator for ``data`` (rows are observations).

    Inputs are standardized with training-split statistics during learning;
    the returned network has the standardization folded into its first layer,
    so it consumes raw observations.
    """
    cfg = config or TrainConfig()
    z = check_training_data(data)
    T, d = z.shape
    need = cfg.batch_size_m / (1.0 - cfg.validation_fraction)
    if T < need:
        raise DegenerateInputError(f"{T} rows is too few for batch size {cfg.batch_size_m}")

    init_ss, split_ss, batch_ss, unif_ss, val_ss = np.random.SeedSequence(cfg.seed).spawn(5)
    init_rng = np.random.default_rng(init_ss)
    batch_rng = np.random.default_rng(batch_ss)
    unif_rng = np.random.default_rng(unif_ss)

    perm = np.random.default_rng(split_ss).permutation(T)
    n_val = int(round(cfg.validation_fraction * T))
    val, tr = z[perm[:n_val]], z[perm[n_val:]]
    if tr.shape[0] < cfg.batch_size_m:
        raise DegenerateInputError("training split smaller than one minibatch")
    shift, scale = tr.mean(axis=0), tr.std(axis=0)
    if np.any(scale == 0):
        raise DegenerateInputError("zero-variance coordinate in the training split")
    tr = (tr - shift) / scale
    val_batches = None
    if n_val:
        val_batches = (_validation_batches(val, cfg, np.random.default_rng(val_ss)) - shift) / scale

    gen = init_mlp(cfg.generator_arch(d), init_rng, output_activation="sigmoid")
    critic = init_mlp(cfg.critic_arch(), init_rng, output_activation="identity")
    critic = critic.with_params(clip_weights(critic.params(), cfg.clip_c))
    gen_state = RmsPropState.for_params(gen.params())
    critic_state = RmsPropState.for_params(critic.params())

    m = cfg.batch_size_m
    trace = TrainingTrace()
    best_gen, best_score, best_it = gen, -np.inf, 0
    for it in range(1, cfg.total_generator_iters + 1):
        for _ in range(cfg.critic_iters_n):
            u = unif_rng.random((m, 1))
            zb = tr[minibatch_indices(batch_rng, tr.shape[0], m)]
            critic, critic_state, c_loss = critic_step(
                critic, gen, zb, u, cfg.learning_rate, critic_state, cfg.clip_c,
                cfg.critic_input_scale)
        zb = tr[minibatch_indices(batch_rng, tr.shape[0], m)]
        gen, gen_state, g_loss = generator_step(gen, critic, zb, cfg.learning_rate, gen_state,
                                             cfg.critic_input_scale)
        if not (np.isfinite(c_loss) and np.isfinite(g_loss)):
            raise TrainingDiverged(it, "loss")
        if not (gen.is_finite() and critic.is_finite()):
            raise TrainingDiverged(it)

        score = float("nan")
        if val_batches is not None and (it % cfg.validation_every == 0
                                        or it == cfg.total_generator_iters):
            score = validation_k1(gen, val_batches, cfg.validation_M)
            if score > best_score:
                best_gen, best_score, best_it = gen, score, it
            log.debug("iter %d critic %.3g gen %.3g val_k1 %.3f", it, c_loss, g_loss, score)
        trace.rows.append(TraceRow(it, c_loss, g_loss, score))

    if val_batches is None:
        best_gen, best_it = gen, cfg.total_generator_iters
    trace.best_iteration, trace.best_val_k1 = best_it, float(best_score)
    return fold_standardization(best_gen, shift, scale), trace
