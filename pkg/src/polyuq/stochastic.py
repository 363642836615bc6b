"""Random diffusion coefficients and keyed, reproducible sample streams.

Every random variable is addressed by ``(experiment, level, sample, variable)``.
A Philox generator keyed by ``(seed, experiment, level)`` is positioned at a
counter that depends only on the sample index, so a sample's draws are the
same whether it is generated alone, in a batch, or on another thread.
"""
import hashlib
from dataclasses import dataclass

import numpy as np

from .exceptions import CoefficientError, ConfigError

__all__ = [
    "SampleStream",
    "CoefficientSample",
    "SmoothKLCoefficient",
    "PiecewiseRegionCoefficient",
    "DeterministicCoefficient",
    "smooth_kl_benchmark",
    "sample_coefficient",
    "coupled_level_sample",
]


def _experiment_id(name):
    if isinstance(name, (int, np.integer)):
        return int(name)
    digest = hashlib.sha256(str(name).encode()).digest()
    return int.from_bytes(digest[:4], "little")


class SampleStream:
    """Counter-based uniform draws keyed by ``(seed, experiment, level, sample)``.

    Parameters
    ----------
    seed : int
        Master seed (non-negative).
    experiment : str or int
        Experiment identifier; different identifiers give independent streams.
    """

    def __init__(self, seed, experiment="default"):
        seed = int(seed)
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = seed
        self.experiment = experiment
        self._exp_id = _experiment_id(experiment)
        self._keys = {}

    def _key(self, level):
        key = self._keys.get(level)
        if key is None:
            ss = np.random.SeedSequence(self.seed, spawn_key=(self._exp_id, int(level)))
            key = ss.generate_state(2, dtype=np.uint64)
            self._keys[level] = key
        return key

    def uniforms(self, level, start, count, n_vars):
        """Uniform [0, 1) draws of shape ``(count, n_vars)`` for samples ``start .. start+count-1``."""
        if start < 0 or count < 0:
            raise ValueError("sample indices must be non-negative")
        if n_vars == 0 or count == 0:
            return np.zeros((count, n_vars))
        blocks = -(-n_vars // 4)          # Philox4x64 block = 4 doubles
        counter = np.zeros(4, dtype=np.uint64)
        total = int(start) * blocks
        counter[0] = total % 2 ** 64
        counter[1] = total // 2 ** 64
        bitgen = np.random.Philox(key=self._key(level), counter=counter)
        draws = np.random.Generator(bitgen).random(count * blocks * 4)
        return draws.reshape(count, blocks * 4)[:, :n_vars]

    def spawn(self, experiment):
        """Independent stream with the same seed and a different experiment key."""
        return SampleStream(self.seed, experiment)

    def __repr__(self):
        return f"SampleStream(seed={self.seed}, experiment={self.experiment!r})"


@dataclass(frozen=True)
class CoefficientSample:
    """One realisation ``alpha(omega, .)`` with analytic bounds."""

    model: object
    y: np.ndarray
    a_min: float
    a_max: float

    def __call__(self, x):
        return self.model.evaluate(x, self.y)


class _AffineModel:
    """Coefficients of the form ``sum_t w_t(Y) * term_t(x)``."""

    n_vars = 0
    ranges = np.zeros((0, 2))

    def transform(self, u):
        """Map uniform [0, 1) draws (n, n_vars) to parameter values Y."""
        u = np.atleast_2d(u)
        lo, hi = self.ranges[:, 0], self.ranges[:, 1]
        return lo + (hi - lo) * u

    def sample(self, y):
        y = np.asarray(y, dtype=float).reshape(self.n_vars)
        lo, hi = self.bounds(y[None])
        if not lo[0] > 0:
            raise CoefficientError(f"sampled coefficient has non-positive lower bound {lo[0]:.3e}")
        y.setflags(write=False)
        return CoefficientSample(self, y, float(lo[0]), float(hi[0]))

    def evaluate(self, x, y):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        w = self.term_weights(np.asarray(y, dtype=float)[None])[0]
        out = np.zeros(len(x))
        for wt, term in zip(w, self.affine_terms()):
            if wt != 0.0:
                out += wt * term(x)
        return out

    def _check_positive(self):
        if self.n_vars:
            # corners of the parameter box bound an affine function of Y
            corners = np.array(np.meshgrid(*self.ranges, indexing="ij")).reshape(self.n_vars, -1).T
        else:
            corners = np.zeros((1, 0))
        lo, _ = self.bounds(corners)
        if not np.all(lo > 0):
            raise ConfigError(
                f"coefficient model admits non-positive values (lower bound {lo.min():.3e})")


class SmoothKLCoefficient(_AffineModel):
    """``alpha(x) = mean(x) + sum_j beta_j phi_j(x) Y_j`` with uniform ``Y_j``.

    Parameters
    ----------
    mean : callable
        Vectorised mean function of points (n, 2).
    modes : list of callable
        Mode functions ``phi_j``.
    betas : sequence of float
    ranges : sequence of (lo, hi)
        Uniform ranges of ``Y_j``; ``lo == hi`` gives a fixed value.
    mean_range, mode_ranges :
        Known minimum and maximum of the mean and of each mode over the
        domain, used for the analytic bounds ``a_min``, ``a_max``.
    """

    def __init__(self, mean, modes, betas, ranges, mean_range, mode_ranges):
        self.mean = mean
        self.modes = list(modes)
        self.betas = np.asarray(betas, dtype=float).reshape(len(self.modes))
        self.ranges = np.asarray(ranges, dtype=float).reshape(len(self.modes), 2)
        if np.any(self.ranges[:, 1] < self.ranges[:, 0]):
            raise ConfigError("uniform ranges need lo <= hi")
        self.mean_range = tuple(float(v) for v in mean_range)
        self.mode_ranges = np.asarray(mode_ranges, dtype=float).reshape(len(self.modes), 2)
        self.n_vars = len(self.modes)
        self._check_positive()

    def affine_terms(self):
        terms = [self.mean]
        for b, phi in zip(self.betas, self.modes):
            terms.append(lambda x, b=b, phi=phi: b * phi(x))
        return terms

    def term_weights(self, y):
        y = np.atleast_2d(y)
        return np.column_stack([np.ones(len(y)), y])

    def bounds(self, y):
        """Analytic ``(a_min, a_max)`` for parameter rows ``y`` (n, n_vars)."""
        y = np.atleast_2d(y)
        c = self.betas * y                                     # (n, J)
        lo = c[..., None] * self.mode_ranges[None]             # (n, J, 2)
        a_min = self.mean_range[0] + lo.min(axis=2).sum(axis=1)
        a_max = self.mean_range[1] + lo.max(axis=2).sum(axis=1)
        return a_min, a_max


class DeterministicCoefficient(SmoothKLCoefficient):
    """A coefficient without random variables (degenerate model)."""

    def __init__(self, alpha, alpha_range):
        if not callable(alpha):
            value = float(alpha)
            alpha = lambda x: np.full(len(x), value)   # noqa: E731
            alpha_range = (value, value)
        super().__init__(alpha, [], [], np.zeros((0, 2)), alpha_range, np.zeros((0, 2)))


class PiecewiseRegionCoefficient(_AffineModel):
    """``alpha(x) = Y_r`` on region ``r`` with ``Y_r`` uniform on ``[lo_r, hi_r]``.

    Regions are simple polygons; a point belongs to the first region that
    contains it (boundaries included).
    """

    def __init__(self, regions, ranges):
        from matplotlib.path import Path
        self.regions = [np.asarray(r, dtype=float) for r in regions]
        for i, r in enumerate(self.regions):
            if r.ndim != 2 or r.shape[1] != 2 or len(r) < 3:
                raise ConfigError(f"region {i + 1} must be a polygon with >= 3 vertices")
        self.ranges = np.asarray(ranges, dtype=float).reshape(len(self.regions), 2)
        if np.any(self.ranges[:, 1] < self.ranges[:, 0]):
            raise ConfigError("uniform ranges need lo <= hi")
        # orient every path counterclockwise so a positive radius grows the region
        paths = []
        for r in self.regions:
            area = 0.5 * np.sum(r[:, 0] * np.roll(r[:, 1], -1) - np.roll(r[:, 0], -1) * r[:, 1])
            paths.append(Path(r if area > 0 else r[::-1]))
        self._paths = paths
        self._last = None
        self.n_vars = len(self.regions)
        self._check_positive()

    def region_index(self, x):
        """0-based region of every point; raises if a point lies in no region."""
        last = self._last
        if last is not None and last[0] is x:
            return last[1]
        out = self._classify(np.atleast_2d(np.asarray(x, dtype=float)))
        if isinstance(x, np.ndarray) and not x.flags.writeable:
            # read-only point sets (quadrature) are classified once per affine term sweep
            self._last = (x, out)
        return out

    def _classify(self, x):
        out = np.full(len(x), -1, dtype=np.int64)
        for i, path in enumerate(self._paths):
            pending = np.flatnonzero(out < 0)
            if len(pending) == 0:
                break
            inside = path.contains_points(x[pending], radius=1e-9)
            out[pending[inside]] = i
        if np.any(out < 0):
            bad = x[np.flatnonzero(out < 0)[0]]
            raise CoefficientError(f"point {bad.tolist()} lies in no coefficient region")
        return out

    def affine_terms(self):
        return [lambda x, i=i: (self.region_index(x) == i).astype(float)
                for i in range(self.n_vars)]

    def term_weights(self, y):
        return np.atleast_2d(y)

    def evaluate(self, x, y):
        return np.asarray(y, dtype=float)[self.region_index(x)]

    def bounds(self, y):
        y = np.atleast_2d(y)
        return y.min(axis=1), y.max(axis=1)


def smooth_kl_benchmark():
    """Unit-square model ``5 + x1 + x2 + (8/pi^2)^2.5 Y sin(pi/4 (x1+1)) sin(pi/4 (x2+1))``."""
    beta = (8.0 / np.pi ** 2) ** 2.5

    def mean(x):
        return 5.0 + x[:, 0] + x[:, 1]

    def mode(x):
        return np.sin(np.pi / 4 * (x[:, 0] + 1)) * np.sin(np.pi / 4 * (x[:, 1] + 1))

    return SmoothKLCoefficient(mean, [mode], [beta], [(-1.0, 1.0)],
                               mean_range=(5.0, 7.0), mode_ranges=[(0.5, 1.0)])


def sample_coefficient(model, stream, level, sample):
    """Coefficient realisation addressed by ``(level, sample)`` of ``stream``."""
    u = stream.uniforms(level, sample, 1, model.n_vars)
    return model.sample(model.transform(u)[0])


def coupled_level_sample(model, stream, level, sample):
    """The single realisation shared by both solves of a level-``level`` difference."""
    if level < 1:
        raise ValueError("levels start at 1")
    return sample_coefficient(model, stream, level, sample)
