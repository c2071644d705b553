"""2D Bravais lattice geometry, reciprocal basis and Brillouin-zone paths.

Lattices live in the z = 0 plane; positions are 3D (x, y, z) with
periodicity in x, y only.  Path waypoints are given in fractions of the
reciprocal basis (b1, b2); all outputs are absolute nm^-1.
"""

from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    pass


# High-symmetry points of the rectangular/square zone, in (b1, b2) fractions.
NAMED_POINTS = {
    "G": (0.0, 0.0),
    "GAMMA": (0.0, 0.0),
    "X": (0.5, 0.0),
    "Y": (0.0, 0.5),
    "M": (0.5, 0.5),
}


@dataclass(frozen=True)
class LatticeSpec:
    """Primitive vectors a1, a2 in nm, spanning the z = 0 plane."""

    a1: tuple
    a2: tuple

    def __post_init__(self):
        a1 = np.asarray(self.a1, dtype=float)
        a2 = np.asarray(self.a2, dtype=float)
        if a1.shape != (2,) or a2.shape != (2,):
            raise GeometryError("lattice vectors must be 2D")
        if abs(a1[0] * a2[1] - a1[1] * a2[0]) < 1e-12:
            raise GeometryError("degenerate lattice cell")
        object.__setattr__(self, "a1", tuple(a1))
        object.__setattr__(self, "a2", tuple(a2))

    @classmethod
    def square(cls, a):
        return cls(a1=(float(a), 0.0), a2=(0.0, float(a)))

    @property
    def basis(self):
        """(2,2) array with rows a1, a2."""
        return np.array([self.a1, self.a2], dtype=float)

    @property
    def cell_area(self):
        a1, a2 = self.basis
        return abs(a1[0] * a2[1] - a1[1] * a2[0])


def reciprocal_basis(lattice):
    """Reciprocal vectors (b1, b2) with a_i . b_j = 2 pi delta_ij."""
    a = lattice.basis
    b = 2.0 * np.pi * np.linalg.inv(a).T
    return b[0], b[1]


def lattice_points_in_radius(lattice, radius):
    """All lattice vectors R = n1 a1 + n2 a2 with |R| <= radius, origin included.

    Returns an (N, 2) float array sorted by (|R|, angle) for determinism.
    """
    if radius < 0:
        raise GeometryError("radius must be non-negative")
    a = lattice.basis
    # smallest singular value bounds how far an integer step can fall short
    smin = np.linalg.svd(a, compute_uv=False)[-1]
    nmax = int(np.ceil(radius / smin)) + 1
    n1, n2 = np.meshgrid(np.arange(-nmax, nmax + 1), np.arange(-nmax, nmax + 1),
                         indexing="ij")
    pts = n1.ravel()[:, None] * a[0] + n2.ravel()[:, None] * a[1]
    r = np.linalg.norm(pts, axis=1)
    keep = r <= radius + 1e-9
    pts, r = pts[keep], r[keep]
    order = np.lexsort((np.arctan2(pts[:, 1], pts[:, 0]), np.round(r, 9)))
    return pts[order]


def reciprocal_points_in_radius(lattice, radius):
    """All reciprocal vectors g with |g| <= radius, origin included, (N, 2)."""
    b1, b2 = reciprocal_basis(lattice)
    dual = LatticeSpec(a1=tuple(b1), a2=tuple(b2))
    return lattice_points_in_radius(dual, radius)


@dataclass(frozen=True)
class KPath:
    """Piecewise-linear reciprocal-space path.

    segments: list of (start, end) pairs in fractions of (b1, b2);
    samples_per_segment: samples per segment including both endpoints.
    """

    segments: tuple
    samples_per_segment: int = 40
    labels: tuple = field(default=())

    @classmethod
    def from_points(cls, points, samples_per_segment=40):
        """Build a connected path from waypoints.

        Each waypoint is a named zone point ("G", "X", "M", "Y") or a pair of
        (b1, b2) fractions.
        """
        if len(points) < 1:
            raise GeometryError("empty path")
        frac, labels = [], []
        for p in points:
            if isinstance(p, str):
                key = p.upper()
                if key not in NAMED_POINTS:
                    raise GeometryError(f"unknown zone point {p!r}")
                frac.append(NAMED_POINTS[key])
                labels.append(key if key != "GAMMA" else "G")
            else:
                q = tuple(float(x) for x in p)
                if len(q) != 2:
                    raise GeometryError("waypoints must be 2D fractions")
                frac.append(q)
                labels.append("")
        if len(frac) == 1:
            segments = ((frac[0], frac[0]),)
        else:
            segments = tuple((frac[i], frac[i + 1]) for i in range(len(frac) - 1))
        return cls(segments=segments, samples_per_segment=samples_per_segment,
                   labels=tuple(labels))


def bz_path(lattice, path):
    """Sample a KPath: (N, 2) array of k_par in absolute nm^-1.

    Segment endpoints are included once; the join of consecutive segments is
    not duplicated.
    """
    if not path.segments or path.samples_per_segment < 1:
        raise GeometryError("empty path")
    b1, b2 = reciprocal_basis(lattice)
    bmat = np.array([b1, b2])
    ks = []
    for iseg, (start, end) in enumerate(path.segments):
        t = np.linspace(0.0, 1.0, path.samples_per_segment)
        if iseg > 0:
            t = t[1:]  # join point already emitted by previous segment
        s = np.asarray(start, float)
        e = np.asarray(end, float)
        frac = s[None, :] + t[:, None] * (e - s)[None, :]
        ks.append(frac @ bmat)
    return np.vstack(ks)


def path_arclength(ks):
    """Cumulative arc length along sampled k points, starts at 0."""
    ks = np.asarray(ks, float)
    steps = np.linalg.norm(np.diff(ks, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])
