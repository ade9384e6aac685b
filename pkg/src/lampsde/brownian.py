"""Reproducible Brownian increments on uniform grids, with exact coupling.

Generation is counter-based: every path owns a Philox bit generator keyed by
(stream, path-index), raw 64-bit words become open-(0,1) uniforms, and the
inverse normal CDF maps them to N(0, dt) increments. A path's increments are
therefore a pure function of (grid, stream, path-index) — independent of how
many other paths are generated, in what order, or on how many workers.

Coarse grids are coupled to fine ones by exact summation: `coarsen` peels
powers of two off the factor with pairwise halving, which makes nested
dyadic coarsening associative to the last bit
(coarsen(coarsen(p, 2), 2) == coarsen(p, 4), bitwise).
"""

import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

_MAGIC = b"LAMPBW01"


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on [0, T]: n_steps = ceil(T/dt) steps of size dt."""

    T: float
    dt: float

    def __post_init__(self):
        if not (math.isfinite(self.T) and self.T > 0.0):
            raise ValueError(f"horizon T must be positive and finite, got {self.T}")
        if not (math.isfinite(self.dt) and self.dt > 0.0):
            raise ValueError(f"step dt must be positive and finite, got {self.dt}")
        if self.dt > self.T:
            raise ValueError(f"dt={self.dt} exceeds horizon T={self.T}")

    @property
    def n_steps(self):
        return math.ceil(self.T / self.dt)

    @property
    def times(self):
        return np.arange(self.n_steps + 1) * self.dt

    def coarsened(self, factor):
        return GridSpec(T=self.T, dt=self.dt * factor)


@dataclass(frozen=True, eq=False)
class BrownianPath:
    """Increments dw_{k+1} = w((k+1)dt) - w(k dt), k = 0..n_steps-1."""

    grid: GridSpec
    increments: np.ndarray
    seed_id: tuple  # (stream, path-index)

    def __post_init__(self):
        if self.increments.shape != (self.grid.n_steps,):
            raise ValueError(
                f"increment count {self.increments.shape} does not match "
                f"grid n_steps={self.grid.n_steps}"
            )


def _uniforms_from_raw(raw):
    # Map uint64 words to (0,1): top 53 bits, centered half a lattice cell
    # away from both endpoints so ndtri never sees 0 or 1.
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def raw_normals(stream, path_index, n):
    """n standard normal draws for one (stream, path-index) key."""
    key = np.array([stream, path_index], dtype=np.uint64)
    raw = np.random.Philox(key=key).random_raw(n)
    return ndtri(_uniforms_from_raw(raw))


def sample_path(grid, seed_id):
    """Deterministic Brownian path for (grid, (stream, path-index))."""
    stream, path_index = seed_id
    z = raw_normals(stream, path_index, grid.n_steps)
    return BrownianPath(grid=grid, increments=z * math.sqrt(grid.dt), seed_id=(stream, path_index))


def sample_increments_block(grid, stream, path_indices):
    """Increments for many paths at once: row i belongs to path_indices[i].

    Bit-identical to stacking sample_path outputs; exists so the Monte Carlo
    loop can amortize the inverse-CDF call over a block.
    """
    n = grid.n_steps
    raw = np.empty((len(path_indices), n), dtype=np.uint64)
    for row, pi in enumerate(path_indices):
        key = np.array([stream, pi], dtype=np.uint64)
        raw[row] = np.random.Philox(key=key).random_raw(n)
    return ndtri(_uniforms_from_raw(raw)) * math.sqrt(grid.dt)


def coarsen_increments(increments, factor):
    """Sum consecutive groups of `factor` increments along the last axis.

    Powers of two are peeled off by repeated pairwise halving so dyadic
    coarsening nests exactly; any remaining odd factor is summed in one
    reshape. The length must divide evenly — never padded.
    """
    factor = int(factor)
    n = increments.shape[-1]
    if factor < 1:
        raise ValueError(f"coarsening factor must be >= 1, got {factor}")
    if n % factor != 0:
        raise ValueError(f"coarsening factor {factor} does not divide {n} increments")
    out = increments
    f = factor
    while f % 2 == 0:
        out = out.reshape(out.shape[:-1] + (-1, 2)).sum(axis=-1)
        f //= 2
    if f > 1:
        out = out.reshape(out.shape[:-1] + (-1, f)).sum(axis=-1)
    return out


def coarsen(path, factor):
    """Coupled coarse path: increment j = sum of fine increments j*factor..(j+1)*factor-1."""
    if int(factor) < 2:
        raise ValueError(f"coarsening factor must be >= 2, got {factor}")
    inc = coarsen_increments(path.increments, factor)
    return BrownianPath(grid=path.grid.coarsened(int(factor)), increments=inc, seed_id=path.seed_id)


def dump_increments(path, fileobj_or_name, fmt="binary"):
    """Write increments with grid/seed metadata.

    binary: magic 'LAMPBW01', then little-endian u64 stream, u64 path-index,
    f64 T, f64 dt, u64 n_steps, followed by n_steps little-endian f64.
    csv: '#'-prefixed metadata header, one increment per line, 17 significant
    digits (exact float64 round trip).
    """
    stream, pi = path.seed_id
    close = False
    if isinstance(fileobj_or_name, (str, bytes)) or hasattr(fileobj_or_name, "__fspath__"):
        f = open(fileobj_or_name, "wb")
        close = True
    else:
        f = fileobj_or_name
    try:
        if fmt == "binary":
            f.write(_MAGIC)
            f.write(struct.pack("<QQddQ", stream, pi, path.grid.T, path.grid.dt, path.grid.n_steps))
            f.write(np.ascontiguousarray(path.increments, dtype="<f8").tobytes())
        elif fmt == "csv":
            lines = [
                f"# stream={stream}\n",
                f"# path_index={pi}\n",
                f"# T={path.grid.T:.17g}\n",
                f"# dt={path.grid.dt:.17g}\n",
                f"# n_steps={path.grid.n_steps}\n",
                "increment\n",
            ]
            lines += [f"{v:.17g}\n" for v in path.increments]
            f.write("".join(lines).encode())
        else:
            raise ValueError(f"unknown dump format {fmt!r}")
    finally:
        if close:
            f.close()


def load_increments(fileobj_or_name):
    """Read a path written by dump_increments (either format)."""
    close = False
    if isinstance(fileobj_or_name, (str, bytes)) or hasattr(fileobj_or_name, "__fspath__"):
        f = open(fileobj_or_name, "rb")
        close = True
    else:
        f = fileobj_or_name
    try:
        blob = f.read()
    finally:
        if close:
            f.close()
    if blob[: len(_MAGIC)] == _MAGIC:
        off = len(_MAGIC)
        stream, pi, T, dt, n = struct.unpack_from("<QQddQ", blob, off)
        off += struct.calcsize("<QQddQ")
        inc = np.frombuffer(blob, dtype="<f8", count=n, offset=off).copy()
    else:
        meta = {}
        vals = []
        for line in blob.decode().splitlines():
            line = line.strip()
            if not line or line == "increment":
                continue
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                meta[k.strip()] = v.strip()
            else:
                vals.append(float(line))
        stream, pi = int(meta["stream"]), int(meta["path_index"])
        T, dt = float(meta["T"]), float(meta["dt"])
        inc = np.asarray(vals, dtype=np.float64)
    grid = GridSpec(T=T, dt=dt)
    return BrownianPath(grid=grid, increments=inc, seed_id=(stream, pi))
