"""The full detection chain: inverse generator -> M-level quantizer -> K1 test.

A model holds either a learned :class:`~uad.nn.Mlp` or one of the analytic
CDF transforms below.  The analytic ones are exact probability integral
transforms for Gaussian data and serve as ground truth for what training
should approximate.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from scipy import special

from .io import atomic_write, fmt
from .nn import Mlp, forward
from .uniformity import EPS_OUT, k1_rows, k1_statistic, quantize, threshold

FORMAT_VERSION = 1
MAGIC = "uadm"


class ModelFormatError(ValueError):
    def __init__(self, section: str, msg: str):
        super().__init__(f"model file, section [{section}]: {msg}")
        self.section = section


class UnsupportedVersionError(ValueError):
    pass


@dataclass(frozen=True)
class NormalCdf:
    """Y = Phi((z - loc) / scale) for scalar observations."""

    loc: float = 0.0
    scale: float = 1.0

    input_dim = 1
    kind = "normal_cdf"

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float).reshape(-1, 1)
        return special.ndtr((z[:, 0] - self.loc) / self.scale)


@dataclass(frozen=True, eq=False)
class GaussianChi2Cdf:
    """Y = F_chi2(d)((z - mean)' cov^-1 (z - mean)) for d-variate Gaussian data.

    Exactly uniform when z ~ N(mean, cov); any mean shift raises the
    Mahalanobis radius and piles mass near 1.
    """

    mean: np.ndarray
    cov: np.ndarray

    kind = "gaussian_chi2_cdf"

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of size {mean.size}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        # raises LinAlgError unless positive definite
        object.__setattr__(self, "_chol", np.linalg.cholesky(cov))

    @property
    def input_dim(self) -> int:
        return self.mean.size

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float).reshape(-1, self.input_dim)
        w = np.linalg.solve(self._chol, (z - self.mean).T)
        return special.chdtr(self.input_dim, (w * w).sum(axis=0))


Generator = Union[Mlp, NormalCdf, GaussianChi2Cdf]


@dataclass(frozen=True)
class DetectorModel:
    generator: Generator
    alphabet_M: int
    sample_N: int
    fp_level: float
    epsilon: float = 0.0
    threshold_T: int | None = None
    seed: int = 0
    config_hash: str = "-"
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        if isinstance(self.generator, Mlp) and (
            self.generator.output_dim != 1 or self.generator.output_activation != "sigmoid"
        ):
            raise ValueError("a learned generator needs one sigmoid output")
        t = threshold(self.alphabet_M, self.sample_N, self.fp_level)
        if self.threshold_T is None:
            object.__setattr__(self, "threshold_T", t)
        elif self.threshold_T != t:
            raise ValueError(f"stored threshold {self.threshold_T} disagrees with recomputed {t}")

    @property
    def input_dim(self) -> int:
        return self.generator.input_dim


@dataclass(frozen=True)
class Verdict:
    anomaly: bool
    k1: int
    threshold: int

    @property
    def decision(self) -> str:
        return "anomaly" if self.anomaly else "normal"


def _apply(generator: Generator, z: np.ndarray) -> np.ndarray:
    if isinstance(generator, Mlp):
        return forward(generator, z)[:, 0]
    return generator(z)


def transform(model: DetectorModel, batch) -> np.ndarray:
    """Raw observations ``(n, d)`` to quantized symbols ``(n,)``."""
    z = np.asarray(batch, dtype=float)
    if z.ndim == 1 and model.input_dim == 1:
        z = z[:, None]
    if z.ndim != 2 or z.shape[1] != model.input_dim:
        raise ValueError(f"batch of shape {z.shape} does not match input dim {model.input_dim}")
    y = np.clip(_apply(model.generator, z), EPS_OUT, 1.0 - EPS_OUT)
    return quantize(y, model.alphabet_M)


def detect(model: DetectorModel, batch) -> Verdict:
    z = np.asarray(batch, dtype=float)
    if len(z) != model.sample_N:
        raise ValueError(f"batch has {len(z)} observations, model expects N={model.sample_N}")
    k1 = k1_statistic(transform(model, z))
    return Verdict(k1 <= model.threshold_T, k1, model.threshold_T)


def k1_scores(model: DetectorModel, batches) -> np.ndarray:
    """K1 for every batch in a ``(B, N, d)`` (or ``(B, N)`` when d = 1) array."""
    b = np.asarray(batches, dtype=float)
    if b.ndim == 2:
        b = b[..., None]
    B, N, d = b.shape
    return k1_rows(transform(model, b.reshape(B * N, d)).reshape(B, N))


# --- persistence -----------------------------------------------------------

def _vec(a) -> str:
    return " ".join(fmt(v) for v in np.ravel(a))


def dumps_model(model: DetectorModel) -> str:
    g = model.generator
    kind = "mlp" if isinstance(g, Mlp) else g.kind
    lines = [
        f"{MAGIC} model",
        f"format_version = {model.format_version}",
        f"generator = {kind}",
        f"input_dim = {model.input_dim}",
        f"alphabet_M = {model.alphabet_M}",
        f"sample_N = {model.sample_N}",
        f"fp_level = {fmt(model.fp_level)}",
        f"epsilon = {fmt(model.epsilon)}",
        f"threshold = {model.threshold_T}",
        f"seed = {model.seed}",
        f"config_hash = {model.config_hash}",
    ]
    if isinstance(g, Mlp):
        for i, (w, b) in enumerate(zip(g.weights, g.biases)):
            act = g.output_activation if i == g.n_layers - 1 else g.hidden_activation
            lines += [
                f"[layer {i}]",
                f"dims = {w.shape[0]} {w.shape[1]}",
                f"activation = {act}",
                f"weights = {_vec(w)}",
                f"biases = {_vec(b)}",
            ]
    elif isinstance(g, NormalCdf):
        lines += ["[normal_cdf]", f"loc = {fmt(g.loc)}", f"scale = {fmt(g.scale)}"]
    else:
        lines += ["[gaussian_chi2_cdf]", f"mean = {_vec(g.mean)}", f"cov = {_vec(g.cov)}"]
    lines.append("[end]")
    return "\n".join(lines) + "\n"


def save_model(model: DetectorModel, path) -> None:
    atomic_write(path, dumps_model(model))


def _sections(text: str) -> tuple[dict[str, str], list[tuple[str, dict[str, str]]]]:
    lines = text.splitlines()
    if not lines or lines[0].split()[:1] != [MAGIC]:
        raise ModelFormatError("header", f"missing '{MAGIC}' magic line")
    header: dict[str, str] = {}
    sections: list[tuple[str, dict[str, str]]] = []
    current = header
    section = "header"
    ended = False
    for line in lines[1:]:
        line = line.strip()
        if not line:
            continue
        if ended:
            raise ModelFormatError("end", "content after [end]")
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section == "end":
                ended = True
                continue
            current = {}
            sections.append((section, current))
            continue
        if "=" not in line:
            raise ModelFormatError(section, f"malformed line {line[:40]!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        current[k] = v
    if not ended:
        raise ModelFormatError(section, "file truncated (no [end] marker)")
    return header, sections


def _floats(section: str, fields: dict[str, str], key: str, size: int | None = None) -> np.ndarray:
    if key not in fields:
        raise ModelFormatError(section, f"missing '{key}'")
    try:
        arr = np.array([float(t) for t in fields[key].split()])
    except ValueError as e:
        raise ModelFormatError(section, f"'{key}' is not numeric") from e
    if size is not None and arr.size != size:
        raise ModelFormatError(section, f"'{key}' has {arr.size} values, expected {size}")
    return arr


def loads_model(text: str) -> DetectorModel:
    header, sections = _sections(text)

    def get(key, conv):
        if key not in header:
            raise ModelFormatError("header", f"missing '{key}'")
        try:
            return conv(header[key])
        except ValueError as e:
            raise ModelFormatError("header", f"bad value for '{key}': {header[key]!r}") from e

    version = get("format_version", int)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"model format_version {version} is not supported (this build reads {FORMAT_VERSION})")
    kind = get("generator", str)
    d = get("input_dim", int)

    if kind == "mlp":
        weights, biases, dims, acts = [], [], [], []
        for name, f in sections:
            if not name.startswith("layer"):
                raise ModelFormatError(name, "unexpected section in mlp model")
            try:
                fan_in, fan_out = (int(t) for t in f.get("dims", "").split())
            except ValueError as e:
                raise ModelFormatError(name, "bad or missing 'dims'") from e
            weights.append(_floats(name, f, "weights", fan_in * fan_out).reshape(fan_in, fan_out))
            biases.append(_floats(name, f, "biases", fan_out))
            acts.append(f.get("activation", ""))
            dims.append((fan_in, fan_out))
        if not weights:
            raise ModelFormatError("layer 0", "no layers")
        layer_dims = [dims[0][0]] + [o for _, o in dims]
        if any(dims[i][1] != dims[i + 1][0] for i in range(len(dims) - 1)):
            raise ModelFormatError("layer", "layer dims do not chain")
        hidden = set(acts[:-1]) or {"leaky_relu"}
        if len(hidden) != 1:
            raise ModelFormatError("layer", "mixed hidden activations")
        try:
            gen: Generator = Mlp(tuple(layer_dims), tuple(weights), tuple(biases),
                                 hidden.pop(), acts[-1])
        except ValueError as e:
            raise ModelFormatError("layer", str(e)) from e
    elif kind == "normal_cdf":
        f = dict(sections).get("normal_cdf")
        if f is None:
            raise ModelFormatError("normal_cdf", "section missing")
        gen = NormalCdf(float(_floats("normal_cdf", f, "loc", 1)[0]),
                        float(_floats("normal_cdf", f, "scale", 1)[0]))
    elif kind == "gaussian_chi2_cdf":
        f = dict(sections).get("gaussian_chi2_cdf")
        if f is None:
            raise ModelFormatError("gaussian_chi2_cdf", "section missing")
        mean = _floats(kind, f, "mean", d)
        gen = GaussianChi2Cdf(mean, _floats(kind, f, "cov", d * d).reshape(d, d))
    else:
        raise ModelFormatError("header", f"unknown generator kind {kind!r}")

    if gen.input_dim != d:
        raise ModelFormatError("header", f"input_dim {d} disagrees with generator ({gen.input_dim})")
    try:
        return DetectorModel(
            generator=gen,
            alphabet_M=get("alphabet_M", int),
            sample_N=get("sample_N", int),
            fp_level=get("fp_level", float),
            epsilon=get("epsilon", float),
            threshold_T=get("threshold", int),
            seed=get("seed", int),
            config_hash=get("config_hash", str),
            format_version=version,
        )
    except ValueError as e:
        if isinstance(e, ModelFormatError):
            raise
        raise ModelFormatError("header", str(e)) from e


def load_model(path) -> DetectorModel:
    return loads_model(Path(path).read_text())
