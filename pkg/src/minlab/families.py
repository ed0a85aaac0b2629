"""Seeded samplers for the closed class of log-concave families.

Representable laws: standard Gaussian, Rademacher signs, uniform on the cube
[-1,1]^d, the symmetric exponential product with unit coordinate variance
(density 2^{-1/2} exp(-sqrt(2)|x|) per coordinate), uniform on an l_r ball,
radial laws with density proportional to exp(-phi(||x||_r)) for nondecreasing
convex phi, plus linear images and symmetrizations X - X' of any of these.
Only these constructions are representable, which enforces log-concavity by
construction.

Sampling is pure given (spec, n, seed): chunk j of a batch is generated from
its own counter block, so results are bit-identical at any thread count.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ModelError, ValidationError
from .rng import CHUNK_ROWS, Seed, chunk_generator

_LEAF_KINDS = ("gaussian", "rademacher", "uniform_cube", "exponential_product",
               "uniform_ball", "radial")
_WRAPPER_KINDS = ("affine_image", "symmetrized")

# relative density cutoff and CDF interpolation tolerance for the radial
# inverse-CDF table
_RADIAL_TAIL_CUT = math.log(1e-30)
_RADIAL_CDF_TOL = 1e-8


@dataclass(frozen=True)
class PhiSpec:
    """Nondecreasing convex phi: [0, inf) -> (-inf, inf].

    kind "power":     phi(s) = s**exponent, exponent >= 1.
    kind "hard_wall": phi(s) = 0 for s < 1, +inf for s >= 1.
    kind "piecewise": linear interpolation through (knot, value) pairs with
                      linear extrapolation on both sides; slopes must be
                      nonnegative and nondecreasing.
    """

    kind: str
    exponent: Optional[float] = None
    knots: Optional[tuple] = None  # tuple of (s, value) pairs

    def validate(self) -> None:
        if self.kind == "power":
            if self.exponent is None or not (self.exponent >= 1.0):
                raise ValidationError(f"power phi needs exponent >= 1, got {self.exponent}")
        elif self.kind == "hard_wall":
            pass
        elif self.kind == "piecewise":
            if not self.knots or len(self.knots) < 2:
                raise ValidationError("piecewise phi needs at least two knots")
            s = np.array([k[0] for k in self.knots], dtype=float)
            v = np.array([k[1] for k in self.knots], dtype=float)
            if not np.all(np.isfinite(s)) or not np.all(np.isfinite(v)):
                raise ValidationError("piecewise phi knots must be finite")
            if s[0] < 0:
                raise ValidationError("phi knots must lie in [0, inf)")
            if np.any(np.diff(s) <= 0):
                raise ValidationError("phi knots must be strictly increasing")
            slopes = np.diff(v) / np.diff(s)
            if np.any(slopes < 0):
                raise ValidationError("non-convex phi: interpolant must be nondecreasing")
            if np.any(np.diff(slopes) < 0):
                raise ValidationError("non-convex phi: slopes must be nondecreasing")
        else:
            raise ValidationError(f"unknown phi kind {self.kind!r}")

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "power":
            return s ** self.exponent
        if self.kind == "hard_wall":
            return np.where(s >= 1.0, np.inf, 0.0)
        sk = np.array([k[0] for k in self.knots], dtype=float)
        vk = np.array([k[1] for k in self.knots], dtype=float)
        slopes = np.diff(vk) / np.diff(sk)
        out = np.interp(s, sk, vk)
        lo = s < sk[0]
        hi = s > sk[-1]
        if lo.any():
            out = np.where(lo, vk[0] + slopes[0] * (s - sk[0]), out)
        if hi.any():
            out = np.where(hi, vk[-1] + slopes[-1] * (s - sk[-1]), out)
        return out

    def tail_slope(self) -> float:
        """Asymptotic slope of phi; decides integrability of the radial law."""
        if self.kind == "power":
            return math.inf
        if self.kind == "hard_wall":
            return math.inf
        sk = [k[0] for k in self.knots]
        vk = [k[1] for k in self.knots]
        return (vk[-1] - vk[-2]) / (sk[-1] - sk[-2])

    def wall(self) -> Optional[float]:
        return 1.0 if self.kind == "hard_wall" else None

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.exponent is not None:
            d["exponent"] = self.exponent
        if self.knots is not None:
            d["knots"] = [list(k) for k in self.knots]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhiSpec":
        knots = d.get("knots")
        return cls(kind=d["kind"], exponent=d.get("exponent"),
                   knots=tuple(tuple(k) for k in knots) if knots is not None else None)


def phi_power(exponent: float) -> PhiSpec:
    return PhiSpec(kind="power", exponent=float(exponent))


def phi_hard_wall() -> PhiSpec:
    return PhiSpec(kind="hard_wall")


def phi_piecewise(knots) -> PhiSpec:
    return PhiSpec(kind="piecewise", knots=tuple((float(a), float(b)) for a, b in knots))


@dataclass(frozen=True)
class FamilySpec:
    """Declarative description of a representable log-concave law on R^dim."""

    kind: str
    dim: int
    r_exponent: Optional[float] = None
    phi: Optional[PhiSpec] = None
    base: Optional["FamilySpec"] = None
    matrix: Optional[tuple] = None  # row tuples, kept hashable

    def validate(self) -> None:
        if self.dim < 1:
            raise ValidationError(f"dim must be >= 1, got {self.dim}")
        if self.kind in ("uniform_ball", "radial"):
            r = self.r_exponent
            if r is None or not math.isfinite(r) or r < 1.0:
                raise ValidationError(
                    f"r_exponent must be a finite real >= 1, got {r} "
                    "(the r = inf case is the cube after scaling; use uniform_cube)")
        if self.kind == "radial":
            if self.phi is None:
                raise ValidationError("radial family needs a phi")
            self.phi.validate()
        if self.kind == "affine_image":
            if self.base is None or self.matrix is None:
                raise ValidationError("affine_image needs base and matrix")
            U = self.matrix_array()
            if U.ndim != 2 or U.shape != (self.dim, self.base.dim):
                raise ValidationError(
                    f"matrix shape {U.shape} incompatible with base dim {self.base.dim} "
                    f"and image dim {self.dim}")
            if not np.all(np.isfinite(U)):
                raise ValidationError("affine matrix must be finite")
            self.base.validate()
        if self.kind == "symmetrized":
            if self.base is None:
                raise ValidationError("symmetrized needs a base family")
            if self.base.dim != self.dim:
                raise ValidationError("symmetrized dim must match base dim")
            self.base.validate()
        if self.kind not in _LEAF_KINDS + _WRAPPER_KINDS:
            raise ValidationError(f"unknown family kind {self.kind!r}")

    def matrix_array(self) -> np.ndarray:
        return np.array(self.matrix, dtype=float)

    def label(self) -> str:
        if self.kind == "uniform_ball":
            return f"uniform_ball({self.r_exponent:g})"
        if self.kind == "radial":
            return f"radial({self.r_exponent:g},{self.phi.kind})"
        if self.kind == "affine_image":
            return f"affine[{self.base.label()}]"
        if self.kind == "symmetrized":
            return f"sym[{self.base.label()}]"
        return self.kind

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "dim": self.dim}
        if self.r_exponent is not None:
            d["r_exponent"] = self.r_exponent
        if self.phi is not None:
            d["phi"] = self.phi.to_dict()
        if self.base is not None:
            d["base"] = self.base.to_dict()
        if self.matrix is not None:
            d["matrix"] = [list(row) for row in self.matrix]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FamilySpec":
        spec = cls(
            kind=d["kind"],
            dim=int(d["dim"]),
            r_exponent=d.get("r_exponent"),
            phi=PhiSpec.from_dict(d["phi"]) if "phi" in d else None,
            base=cls.from_dict(d["base"]) if "base" in d else None,
            matrix=tuple(tuple(float(x) for x in row) for row in d["matrix"])
            if "matrix" in d else None,
        )
        spec.validate()
        return spec

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FamilySpec":
        return cls.from_dict(json.loads(text))


def gaussian(dim: int) -> FamilySpec:
    return FamilySpec("gaussian", dim)


def rademacher(dim: int) -> FamilySpec:
    return FamilySpec("rademacher", dim)


def uniform_cube(dim: int) -> FamilySpec:
    return FamilySpec("uniform_cube", dim)


def exponential_product(dim: int) -> FamilySpec:
    return FamilySpec("exponential_product", dim)


def uniform_ball(dim: int, r_exponent: float) -> FamilySpec:
    spec = FamilySpec("uniform_ball", dim, r_exponent=float(r_exponent))
    spec.validate()
    return spec


def radial(dim: int, r_exponent: float, phi: PhiSpec) -> FamilySpec:
    spec = FamilySpec("radial", dim, r_exponent=float(r_exponent), phi=phi)
    spec.validate()
    return spec


def affine_image(base: FamilySpec, U) -> FamilySpec:
    """Law of U X for X ~ base.  Samples with matched seeds equal base samples
    multiplied by U, exactly."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    spec = FamilySpec("affine_image", int(U.shape[0]), base=base,
                      matrix=tuple(tuple(float(x) for x in row) for row in U))
    spec.validate()
    return spec


def symmetrize(base: FamilySpec) -> FamilySpec:
    """Law of X - X' with X, X' independent copies of the base."""
    spec = FamilySpec("symmetrized", base.dim, base=base)
    spec.validate()
    return spec


@dataclass
class SampleBatch:
    """n x d matrix of i.i.d. draws plus the provenance needed to regenerate it."""

    data: np.ndarray
    spec: FamilySpec
    seed: Seed
    n: int

    def __post_init__(self):
        if self.data.shape != (self.n, self.spec.dim):
            raise ValidationError(
                f"batch shape {self.data.shape} != (n={self.n}, dim={self.spec.dim})")

    @property
    def dim(self) -> int:
        return self.spec.dim


# ---------------------------------------------------------------------------
# radial inverse-CDF machinery


def _radial_log_density(s: np.ndarray, dim: int, phi: PhiSpec) -> np.ndarray:
    """log of the unnormalized radius density exp(-phi(s)) s^{d-1}."""
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(s > 0, np.log(np.where(s > 0, s, 1.0)), -np.inf)
    out = -phi(s)
    if dim > 1:
        out = out + (dim - 1) * logs
    return out


def _radial_support_upper(dim: int, phi: PhiSpec) -> float:
    """Cutoff s_max with density below 1e-30 of the peak beyond it."""
    wall = phi.wall()
    if wall is not None:
        return wall
    if phi.tail_slope() <= 0:
        raise ModelError(
            "radial density exp(-phi(s)) s^(d-1) is not integrable: "
            "phi must grow with positive asymptotic slope")
    h = lambda s: float(_radial_log_density(np.array([s]), dim, phi)[0])
    # bracket the (concave) peak of the log density
    hi = 1.0
    for _ in range(200):
        if h(2.0 * hi) <= h(hi):
            break
        hi *= 2.0
    else:
        raise ModelError("could not bracket the radial density peak")
    lo = 0.0
    for _ in range(200):
        a = lo + (hi - lo) / 3.0
        b = hi - (hi - lo) / 3.0
        if h(a) < h(b):
            lo = a
        else:
            hi = b
    s_peak = 0.5 * (lo + hi)
    peak = h(s_peak) if math.isfinite(h(s_peak)) else 0.0
    target = peak + _RADIAL_TAIL_CUT
    a, b = s_peak, max(2.0 * s_peak, 1.0)
    for _ in range(400):
        if h(b) < target:
            break
        b *= 2.0
    else:
        raise ModelError("radial density tail does not decay; check phi")
    for _ in range(200):
        mid = 0.5 * (a + b)
        if h(mid) < target:
            b = mid
        else:
            a = mid
    return b


def _radial_grid(s_hi: float, m: int) -> np.ndarray:
    lin = np.linspace(0.0, s_hi, m)
    geo = np.geomspace(s_hi * 1e-9, s_hi, m)
    return np.unique(np.concatenate([lin, geo]))


def _radial_cdf_on(s: np.ndarray, dim: int, phi: PhiSpec) -> np.ndarray:
    logw = _radial_log_density(s, dim, phi)
    peak = np.max(logw)
    if not math.isfinite(peak):
        raise ModelError("radial density vanishes everywhere on its support")
    w = np.exp(logw - peak)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * np.diff(s))])
    total = cdf[-1]
    if not (total > 0 and math.isfinite(total)):
        raise ModelError("radial density is not integrable on the computed support")
    return cdf / total


_radial_table_cache: dict = {}


def _radial_table(dim: int, phi: PhiSpec) -> tuple:
    """(s grid, CDF) for the radius law, refined until the interpolated CDF is
    stable to _RADIAL_CDF_TOL."""
    key = (dim, phi.kind, phi.exponent, phi.knots)
    hit = _radial_table_cache.get(key)
    if hit is not None:
        return hit
    s_hi = _radial_support_upper(dim, phi)
    m = 4097
    s = _radial_grid(s_hi, m)
    cdf = _radial_cdf_on(s, dim, phi)
    while True:
        m *= 2
        s2 = _radial_grid(s_hi, m)
        cdf2 = _radial_cdf_on(s2, dim, phi)
        err = np.max(np.abs(np.interp(s2, s, cdf) - cdf2))
        s, cdf = s2, cdf2
        if err < _RADIAL_CDF_TOL:
            break
        if m > (1 << 21):
            raise ModelError(
                f"radial CDF did not converge to {_RADIAL_CDF_TOL} (last error {err:.3g})")
    _radial_table_cache[key] = (s, cdf)
    return s, cdf


# ---------------------------------------------------------------------------
# per-chunk fillers (draw order inside a chunk is fixed)


def _fill_gaussian(spec, rng, out):
    out[:] = rng.standard_normal(out.shape)


def _fill_rademacher(spec, rng, out):
    out[:] = rng.integers(0, 2, size=out.shape) * 2.0 - 1.0


def _fill_uniform_cube(spec, rng, out):
    out[:] = rng.uniform(-1.0, 1.0, size=out.shape)


def _fill_exponential(spec, rng, out):
    out[:] = rng.laplace(0.0, 1.0 / math.sqrt(2.0), size=out.shape)


def _fill_uniform_ball(spec, rng, out):
    # generalized-Gamma construction: coordinates with density ~ exp(-|y|^r),
    # normalized by (sum |y_i|^r + W)^{1/r} with W standard exponential
    r = spec.r_exponent
    m, d = out.shape
    g = rng.standard_gamma(1.0 / r, size=(m, d))
    signs = rng.integers(0, 2, size=(m, d)) * 2.0 - 1.0
    w = rng.standard_exponential(size=m)
    denom = (g.sum(axis=1) + w) ** (1.0 / r)
    out[:] = signs * g ** (1.0 / r) / denom[:, None]


def _make_radial_filler(spec):
    table_s, table_cdf = _radial_table(spec.dim, spec.phi)
    r = spec.r_exponent

    def fill(spec, rng, out):
        m, d = out.shape
        u = rng.random(size=m)
        radius = np.interp(u, table_cdf, table_s)
        g = rng.standard_gamma(1.0 / r, size=(m, d))
        signs = rng.integers(0, 2, size=(m, d)) * 2.0 - 1.0
        norm = g.sum(axis=1) ** (1.0 / r)
        out[:] = radius[:, None] * signs * g ** (1.0 / r) / norm[:, None]

    return fill


_FILLERS = {
    "gaussian": _fill_gaussian,
    "rademacher": _fill_rademacher,
    "uniform_cube": _fill_uniform_cube,
    "exponential_product": _fill_exponential,
    "uniform_ball": _fill_uniform_ball,
}


def _sample_leaf(spec: FamilySpec, n: int, seed: Seed, threads: int) -> np.ndarray:
    filler = _make_radial_filler(spec) if spec.kind == "radial" else _FILLERS[spec.kind]
    out = np.empty((n, spec.dim), dtype=np.float64)
    chunks = [(j, lo, min(lo + CHUNK_ROWS, n))
              for j, lo in enumerate(range(0, n, CHUNK_ROWS))]

    def run(job):
        j, lo, hi = job
        filler(spec, chunk_generator(seed, j), out[lo:hi])

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, chunks))
    else:
        for job in chunks:
            run(job)
    return out


def _sample_array(spec: FamilySpec, n: int, seed: Seed, threads: int) -> np.ndarray:
    if spec.kind == "affine_image":
        base = _sample_array(spec.base, n, seed, threads)
        return base @ spec.matrix_array().T
    if spec.kind == "symmetrized":
        a = _sample_array(spec.base, n, seed.child(1), threads)
        b = _sample_array(spec.base, n, seed.child(2), threads)
        a -= b
        return a
    return _sample_leaf(spec, n, seed, threads)


def sample_batch(spec: FamilySpec, n: int, seed: Seed, threads: int = 1) -> SampleBatch:
    """Draw n i.i.d. rows from the family; bit-exact for fixed (spec, n, seed)."""
    spec.validate()
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    data = _sample_array(spec, n, seed, max(1, int(threads)))
    return SampleBatch(data=data, spec=spec, seed=seed, n=n)


# ---------------------------------------------------------------------------
# whitening


def isotropize(batch: SampleBatch, calibration_fraction: float = 0.5,
               ridge_scale: float = 1e-10):
    """Whiten on a held-out split.

    The whitening matrix W = Sigma^{-1/2} is estimated from the calibration
    rows only, so downstream moment estimates on the transformed holdout are
    not biased by the fit.  Returns (W, transformed holdout rows).
    """
    if not (0.0 < calibration_fraction < 1.0):
        raise ValidationError("calibration_fraction must lie in (0,1)")
    n, d = batch.data.shape
    n_cal = int(calibration_fraction * n)
    if n_cal < 10 * d:
        raise ValidationError(
            f"calibration split has {n_cal} rows; need at least 10*d = {10 * d}")
    if n - n_cal < 1:
        raise ValidationError("holdout split is empty")
    cal = batch.data[:n_cal]
    hold = batch.data[n_cal:]
    center = cal.mean(axis=0)
    cov = np.cov(cal, rowvar=False, ddof=1).reshape(d, d)
    ridge = ridge_scale * np.trace(cov) / d
    cov = cov + ridge * np.eye(d)
    vals, vecs = np.linalg.eigh(cov)
    if not np.all(np.isfinite(vals)) or np.min(vals) <= 0:
        raise ModelError(
            "empirical covariance is singular even after ridge "
            f"{ridge:.3g}; pass a larger ridge_scale")
    W = (vecs / np.sqrt(vals)) @ vecs.T
    W = 0.5 * (W + W.T)
    return W, (hold - center) @ W


# ---------------------------------------------------------------------------
# persistence: flat little-endian float64 binary + JSON sidecar


def save_batch(batch: SampleBatch, prefix: str) -> tuple:
    bin_path = prefix + ".bin"
    meta_path = prefix + ".json"
    with open(bin_path, "wb") as fh:
        fh.write(np.ascontiguousarray(batch.data, dtype="<f8").tobytes())
    meta = {"n": batch.n, "d": batch.dim, "spec": batch.spec.to_dict(),
            "seed": batch.seed.to_dict(), "dtype": "<f8", "order": "C"}
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return bin_path, meta_path


def load_batch(prefix: str) -> SampleBatch:
    meta_path = prefix + ".json"
    bin_path = prefix + ".bin"
    if not (os.path.exists(meta_path) and os.path.exists(bin_path)):
        raise FileNotFoundError(f"no batch at prefix {prefix!r}")
    with open(meta_path) as fh:
        meta = json.load(fh)
    spec = FamilySpec.from_dict(meta["spec"])
    n, d = int(meta["n"]), int(meta["d"])
    data = np.fromfile(bin_path, dtype="<f8").reshape(n, d)
    return SampleBatch(data=data, spec=spec, seed=Seed.from_dict(meta["seed"]), n=n)
