"""Rigid point-to-point ICP with a closed-form SVD step."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PointCloud


class RegistrationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """``x -> R @ x + t`` with ``R`` a proper rotation."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.R, dtype=np.float64).reshape(3, 3)
        t = np.array(self.t, dtype=np.float64).reshape(3)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_axis_angle(cls, axis, angle_rad: float, t=(0.0, 0.0, 0.0)) -> "RigidTransform":
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
        R = np.eye(3) + np.sin(angle_rad) * K + (1 - np.cos(angle_rad)) * K @ K
        return cls(R, t)

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.R.T + self.t

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.R.T, -self.R.T @ self.t)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform applying ``other`` first, then ``self``."""
        return RigidTransform(self.R @ other.R, self.R @ other.t + self.t)

    def is_proper(self, tol: float = 1e-9) -> bool:
        return (np.max(np.abs(self.R.T @ self.R - np.eye(3))) <= tol
                and abs(np.linalg.det(self.R) - 1.0) <= tol)

    def to_dict(self) -> dict:
        return {"R": [float(x) for x in self.R.reshape(-1)], "t": [float(x) for x in self.t]}

    @classmethod
    def from_dict(cls, d: dict) -> "RigidTransform":
        R = np.asarray(d["R"], dtype=float)
        t = np.asarray(d["t"], dtype=float)
        if R.size != 9 or t.size != 3:
            raise RegistrationError("transform JSON needs 9 rotation and 3 translation entries")
        return cls(R.reshape(3, 3), t)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class IcpConfig:
    max_iterations: int = 100
    cost_change_tolerance: float = 1e-5  # mm^2, absolute change of mean squared distance

    def __post_init__(self):
        if self.max_iterations < 1:
            raise RegistrationError("max_iterations must be >= 1")
        if not self.cost_change_tolerance > 0:
            raise RegistrationError("cost_change_tolerance must be > 0")


@dataclass(frozen=True, eq=False)
class IcpResult:
    transform: RigidTransform
    final_cost: float
    iterations: int
    converged: bool
    costs: tuple = ()

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "final_cost_mm2": self.final_cost,
            "transform": self.transform.to_dict(),
            "cost_history_mm2": list(self.costs),
        }


def _as_points(x) -> np.ndarray:
    return x.points if isinstance(x, PointCloud) else np.asarray(x, dtype=np.float64)


def kabsch_step(source, target) -> RigidTransform:
    """Least-squares rigid transform taking ``source[i]`` onto ``target[i]``.

    The rotation comes from the SVD of the cross-covariance of the centred
    sets; the last singular direction is sign-flipped when needed so the
    result is never a reflection.
    """
    P = _as_points(source)
    Q = _as_points(target)
    if P.shape != Q.shape or P.ndim != 2 or P.shape[1] != 3:
        raise RegistrationError(f"point counts differ or bad shape: {P.shape} vs {Q.shape}")
    if len(P) == 0:
        raise RegistrationError("kabsch_step needs at least one correspondence")
    p_bar = P.mean(axis=0)
    q_bar = Q.mean(axis=0)
    Pc = P - p_bar
    Qc = Q - q_bar
    scale = 1.0 + max(np.max(np.abs(P)), np.max(np.abs(Q)))
    if np.max(np.abs(Pc)) <= 1e-12 * scale or np.max(np.abs(Qc)) <= 1e-12 * scale:
        raise RegistrationError("degenerate correspondences: all points coincide")
    H = Pc.T @ Qc
    U, _, Vt = np.linalg.svd(H)
    V = Vt.T
    d = 1.0 if np.linalg.det(V @ U.T) >= 0 else -1.0
    R = V @ np.diag([1.0, 1.0, d]) @ U.T
    return RigidTransform(R, q_bar - R @ p_bar)


def apply_transform(cloud: PointCloud, T: RigidTransform) -> PointCloud:
    normals = None if cloud.normals is None else cloud.normals @ T.R.T
    return PointCloud(T.apply(cloud.points), normals)


def icp_align(source: PointCloud, target: PointCloud, config: IcpConfig = IcpConfig()) -> IcpResult:
    """Register ``source`` onto ``target`` starting from the identity.

    Each iteration matches every source point to its nearest target point
    and re-solves the full transform from the original source coordinates.
    ``costs[k]`` is the mean squared nearest-neighbour distance after ``k``
    updates; it cannot increase because both the matching and the SVD step
    are least-squares optimal for the other's output.
    """
    P = _as_points(source)
    Q = _as_points(target)
    if len(P) == 0 or len(Q) == 0:
        raise RegistrationError("ICP needs non-empty source and target clouds")
    tree = cKDTree(Q)
    T = RigidTransform.identity()
    dist, idx = tree.query(P)
    costs = [float(np.mean(dist ** 2))]
    converged = False
    iterations = 0
    for iterations in range(1, config.max_iterations + 1):
        try:
            T_new = kabsch_step(P, Q[idx])
        except RegistrationError:
            # Every source point matched one target point: nothing left to solve.
            converged = True
            iterations -= 1
            break
        dist, idx_new = tree.query(T_new.apply(P))
        cost = float(np.mean(dist ** 2))
        if cost > costs[-1]:
            # Float noise at the optimum; keep the previous, cheaper iterate.
            costs.append(costs[-1])
            converged = True
            break
        T, idx = T_new, idx_new
        costs.append(cost)
        if abs(costs[-2] - costs[-1]) < config.cost_change_tolerance:
            converged = True
            break
    return IcpResult(T, costs[-1], iterations, converged, tuple(costs))
