"""Detector spheres: solid-angle patches, partitions and patch quadrature."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError
from .quadrature import gauss_legendre, panels_for


def rotation_to(axis):
    """Rotation matrix taking the z axis onto the unit vector ``axis``."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    z = np.array([0.0, 0.0, 1.0])
    c = float(a @ z)
    if c > 1 - 1e-15:
        return np.eye(3)
    if c < -1 + 1e-15:
        return np.diag([1.0, -1.0, -1.0])
    v = np.cross(z, a)
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + vx + vx @ vx / (1 + c)


@dataclass(frozen=True)
class Patch:
    """Lat-long cell ``theta0 <= theta < theta1``, ``phi0 <= phi < phi1``.

    Angles are measured in the frame whose z axis is ``rotation @ e_z``;
    ``theta0 = 0`` with the full phi range gives a spherical cap.
    In one dimension a patch is one of the exits, ``sign = +1`` or ``-1``.
    """

    id: int
    theta0: float = 0.0
    theta1: float = np.pi
    phi0: float = 0.0
    phi1: float = 2 * np.pi
    rotation: np.ndarray | None = field(default=None, compare=False)
    sign: int = 0

    def __post_init__(self):
        if self.sign == 0:
            if not (0 <= self.theta0 < self.theta1 <= np.pi + 1e-15):
                raise InvalidParameterError("patch needs 0 <= theta0 < theta1 <= pi")
            if not (0 <= self.phi0 < self.phi1 <= 2 * np.pi + 1e-15):
                raise InvalidParameterError("patch needs 0 <= phi0 < phi1 <= 2 pi")

    @property
    def dimension(self):
        return 1 if self.sign else 3

    @property
    def solid_angle(self):
        if self.sign:
            return 1.0
        return (np.cos(self.theta0) - np.cos(self.theta1)) * (self.phi1 - self.phi0)

    def _local(self, directions):
        d = np.asarray(directions, dtype=float).reshape(-1, 3)
        return d if self.rotation is None else d @ self.rotation

    def contains(self, directions):
        """Membership of unit vectors (or 1D signs) in the patch."""
        if self.sign:
            return np.sign(np.asarray(directions, dtype=float).reshape(-1)) == self.sign
        d = self._local(directions)
        theta = np.arccos(np.clip(d[:, 2], -1.0, 1.0))
        phi = np.mod(np.arctan2(d[:, 1], d[:, 0]), 2 * np.pi)
        top = theta < self.theta1 if self.theta1 < np.pi else theta <= np.pi
        right = phi < self.phi1 if self.phi1 < 2 * np.pi else phi <= 2 * np.pi
        return (theta >= self.theta0) & top & (phi >= self.phi0) & right

    def quadrature(self, max_dtheta=0.15, max_dphi=np.pi / 8, nodes=8):
        """Directions and solid-angle weights covering the patch.

        Gauss-Legendre in ``cos(theta)`` and ``phi`` on panels no wider
        than the given angles.
        """
        if self.sign:
            return np.array([[float(self.sign)]]), np.ones(1)
        nt = panels_for(self.theta1 - self.theta0, max_dtheta)
        edges = np.linspace(self.theta0, self.theta1, nt + 1)
        us, uw = [], []
        for a, b in zip(edges[:-1], edges[1:]):
            x, w = gauss_legendre(np.cos(b), np.cos(a), nodes)
            us.append(x)
            uw.append(w)
        u, wu = np.concatenate(us), np.concatenate(uw)
        p, wp = gauss_legendre(self.phi0, self.phi1, nodes, panels_for(self.phi1 - self.phi0, max_dphi))
        U, Pp = np.meshgrid(u, p, indexing="ij")
        st = np.sqrt(np.clip(1 - U**2, 0, None))
        dirs = np.stack([st * np.cos(Pp), st * np.sin(Pp), U], axis=-1).reshape(-1, 3)
        if self.rotation is not None:
            dirs = dirs @ self.rotation.T
        return dirs, np.outer(wu, wp).reshape(-1)


@dataclass
class SpherePartition:
    """Detector sphere of radius ``radius`` cut into patches with ids ``0..n-1``."""

    radius: float
    patches: list
    name: str = "custom"

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidParameterError("detector radius must be positive")
        ids = [p.id for p in self.patches]
        if ids != list(range(len(ids))):
            raise InvalidParameterError("patch ids must be 0..n-1 in order")

    @property
    def dimension(self):
        return self.patches[0].dimension

    def __len__(self):
        return len(self.patches)

    def __iter__(self):
        return iter(self.patches)

    def __getitem__(self, i):
        return self.patches[i]

    @property
    def solid_angles(self):
        return np.array([p.solid_angle for p in self.patches])

    def locate(self, directions):
        """Patch id of each direction; ``-1`` if none matches."""
        if self.dimension == 1:
            d = np.asarray(directions, dtype=float).reshape(-1)
        else:
            d = np.asarray(directions, dtype=float).reshape(-1, 3)
        out = np.full(d.shape[0], -1, dtype=np.int64)
        for p in self.patches:
            hit = (out < 0) & p.contains(d)
            out[hit] = p.id
        return out

    def with_radius(self, radius):
        return SpherePartition(float(radius), self.patches, self.name)

    # -- constructors ----------------------------------------------------

    @classmethod
    def latlong(cls, radius, theta_edges, n_phi, rotation=None, name="latlong"):
        """Bands between ``theta_edges`` with ``n_phi[i]`` equal phi cells each."""
        theta_edges = np.asarray(theta_edges, dtype=float)
        if np.isscalar(n_phi):
            n_phi = [int(n_phi)] * (theta_edges.size - 1)
        if len(n_phi) != theta_edges.size - 1:
            raise InvalidParameterError("need one phi count per theta band")
        patches = []
        for (a, b), m in zip(zip(theta_edges[:-1], theta_edges[1:]), n_phi):
            ph = np.linspace(0, 2 * np.pi, int(m) + 1)
            for p0, p1 in zip(ph[:-1], ph[1:]):
                patches.append(Patch(len(patches), a, b, p0, p1, rotation))
        return cls(float(radius), patches, name)

    @classmethod
    def standard(cls, radius, axis=(0.0, 0.0, 1.0)):
        """Default 26-patch partition: polar caps plus three bands of eight cells."""
        edges = [0.0, 0.15, 0.6, np.pi - 0.6, np.pi - 0.15, np.pi]
        return cls.latlong(radius, edges, [1, 8, 8, 8, 1], rotation_to(axis), "standard26")

    @classmethod
    def coarse(cls, radius, axis=(0.0, 0.0, 1.0), cap=0.18):
        """Eight patches: a cap and three ring cells per hemisphere."""
        edges = [0.0, cap, np.pi / 2, np.pi - cap, np.pi]
        return cls.latlong(radius, edges, [1, 3, 3, 1], rotation_to(axis), "coarse8")

    @classmethod
    def hemispheres(cls, radius, axis=(0.0, 0.0, 1.0)):
        return cls.latlong(radius, [0.0, np.pi / 2, np.pi], [1, 1], rotation_to(axis), "hemispheres")

    @classmethod
    def line(cls, radius):
        """The two exits of an interval ``[-R, R]``: id 0 is ``+R``, id 1 is ``-R``."""
        return cls(float(radius), [Patch(0, sign=1), Patch(1, sign=-1)], "line")

    @classmethod
    def from_name(cls, name, radius, axis=(0.0, 0.0, 1.0)):
        makers = {"standard26": cls.standard, "coarse8": cls.coarse, "hemispheres": cls.hemispheres}
        if name == "line":
            return cls.line(radius)
        if name not in makers:
            raise InvalidParameterError(f"unknown partition {name!r}")
        return makers[name](radius, axis)
