"""Euler-Bernoulli cantilever model and harmonic frequency response.

DOF order per element is (v1, theta1, v2, theta2): transverse deflection
and slope at each end. Node 1 is clamped; nodes are numbered 1..5 from the
fixed end, elements E1..E4 likewise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .errors import (
    FactorizationError,
    InvalidGeometryError,
    InvalidParameterError,
    SolverError,
)

N_ELEMENTS = 4
N_NODES = N_ELEMENTS + 1


@dataclass(frozen=True)
class Material:
    youngs_modulus: float = 2.1e11  # Pa
    density: float = 7850.0  # kg/m^3
    loss_factor: float = 0.01  # hysteretic, K -> K(1 + i*eta)

    def __post_init__(self):
        if not (self.youngs_modulus > 0 and math.isfinite(self.youngs_modulus)):
            raise InvalidParameterError(f"youngs_modulus must be > 0, got {self.youngs_modulus}")
        if not (self.density > 0 and math.isfinite(self.density)):
            raise InvalidParameterError(f"density must be > 0, got {self.density}")
        if not (self.loss_factor >= 0 and math.isfinite(self.loss_factor)):
            raise InvalidParameterError(f"loss_factor must be >= 0, got {self.loss_factor}")


@dataclass(frozen=True)
class BeamModel:
    diameters: tuple[float, ...] = (0.01, 0.01, 0.01, 0.01)
    length_total: float = 1.0
    material: Material = field(default_factory=Material)

    def __post_init__(self):
        object.__setattr__(self, "diameters", tuple(float(d) for d in self.diameters))
        if len(self.diameters) != N_ELEMENTS:
            raise InvalidGeometryError(
                f"beam has exactly {N_ELEMENTS} elements, got {len(self.diameters)} diameters")
        if not (self.length_total > 0 and math.isfinite(self.length_total)):
            raise InvalidGeometryError(f"length_total must be > 0, got {self.length_total}")
        for d in self.diameters:
            if not (d > 0 and math.isfinite(d)):
                raise InvalidGeometryError(f"diameter must be positive and finite, got {d}")

    @property
    def element_length(self) -> float:
        return self.length_total / N_ELEMENTS


@dataclass(frozen=True)
class SectionProperties:
    area: float
    second_moment: float


@dataclass(frozen=True)
class ElementMatrices:
    stiffness: np.ndarray
    mass: np.ndarray
    element_length: float


@dataclass(frozen=True)
class AssembledSystem:
    """Constrained global matrices. ``dof_map[node] = (translation, rotation)``."""

    stiffness: np.ndarray
    mass: np.ndarray
    dof_map: dict

    def translation_dof(self, node: int) -> int:
        try:
            return self.dof_map[node][0]
        except KeyError:
            raise InvalidParameterError(
                f"node {node} is not a free node (free nodes: {sorted(self.dof_map)})") from None


@dataclass(frozen=True)
class SweepConfig:
    omega_min: float = 0.1
    omega_max: float = 1000.0
    n_points: int = 10_000
    excitation_node: int = 5
    excitation_amplitude: float = 1.0
    response_nodes: tuple[int, ...] = (5, 4, 3, 2)

    def __post_init__(self):
        object.__setattr__(self, "response_nodes", tuple(int(n) for n in self.response_nodes))
        if not (0 < self.omega_min < self.omega_max):
            raise InvalidParameterError(
                f"need 0 < omega_min < omega_max, got {self.omega_min}, {self.omega_max}")
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise InvalidParameterError(f"n_points must be an integer >= 2, got {self.n_points}")
        free = range(2, N_NODES + 1)
        for node in (self.excitation_node, *self.response_nodes):
            if node not in free:
                raise InvalidParameterError(f"node {node} is constrained or does not exist")
        if not self.response_nodes:
            raise InvalidParameterError("at least one response node is required")

    def omegas(self) -> np.ndarray:
        return np.linspace(self.omega_min, self.omega_max, int(self.n_points))


@dataclass(frozen=True)
class FrfSample:
    features: np.ndarray
    targets: tuple[float, ...]


def section_properties(diameter: float) -> SectionProperties:
    """Area and second moment of a solid circular section."""
    if not (diameter > 0 and math.isfinite(diameter)):
        raise InvalidGeometryError(f"diameter must be positive and finite, got {diameter}")
    return SectionProperties(area=math.pi * diameter**2 / 4.0,
                             second_moment=math.pi * diameter**4 / 64.0)


def element_matrices(EI: float, rhoA: float, l: float) -> ElementMatrices:
    """Consistent stiffness and mass matrices of a 2-node Euler-Bernoulli element."""
    for name, value in (("EI", EI), ("rhoA", rhoA), ("l", l)):
        if not (value > 0 and math.isfinite(value)):
            raise InvalidParameterError(f"{name} must be positive and finite, got {value}")
    k = EI / l**3 * np.array([
        [12.0, 6 * l, -12.0, 6 * l],
        [6 * l, 4 * l**2, -6 * l, 2 * l**2],
        [-12.0, -6 * l, 12.0, -6 * l],
        [6 * l, 2 * l**2, -6 * l, 4 * l**2],
    ])
    m = rhoA * l / 420.0 * np.array([
        [156.0, 22 * l, 54.0, -13 * l],
        [22 * l, 4 * l**2, 13 * l, -3 * l**2],
        [54.0, 13 * l, 156.0, -22 * l],
        [-13 * l, -3 * l**2, -22 * l, 4 * l**2],
    ])
    return ElementMatrices(stiffness=k, mass=m, element_length=l)


def assemble_cantilever(elements: list[ElementMatrices]) -> AssembledSystem:
    """Direct-stiffness assembly of a chain of elements, clamped at node 1."""
    n_nodes = len(elements) + 1
    ndof = 2 * n_nodes
    K = np.zeros((ndof, ndof))
    M = np.zeros((ndof, ndof))
    for e, em in enumerate(elements):
        sl = slice(2 * e, 2 * e + 4)
        K[sl, sl] += em.stiffness
        M[sl, sl] += em.mass
    K = K[2:, 2:]
    M = M[2:, 2:]
    dof_map = {node: (2 * (node - 2), 2 * (node - 2) + 1) for node in range(2, n_nodes + 1)}
    return AssembledSystem(stiffness=K, mass=M, dof_map=dof_map)


def assemble(model: BeamModel) -> AssembledSystem:
    E = model.material.youngs_modulus
    rho = model.material.density
    l = model.element_length
    elements = []
    for d in model.diameters:
        sec = section_properties(d)
        elements.append(element_matrices(E * sec.second_moment, rho * sec.area, l))
    return assemble_cantilever(elements)


def natural_frequencies(system: AssembledSystem) -> np.ndarray:
    """Undamped circular natural frequencies (rad/s), ascending."""
    try:
        lam = scipy.linalg.eigh(system.stiffness, system.mass, eigvals_only=True)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"generalized eigensolve failed: {exc}") from exc
    if np.any(lam <= 0):
        raise FactorizationError("stiffness is not positive-definite on the free DOFs")
    return np.sqrt(np.sort(lam))


def frequency_response(system: AssembledSystem, sweep: SweepConfig,
                       material: Material) -> np.ndarray:
    """|acceleration| per unit load over the sweep.

    Returns an array of shape (len(sweep.response_nodes), sweep.n_points),
    rows in ``sweep.response_nodes`` order.
    """
    omegas = sweep.omegas()
    Kc = system.stiffness * (1.0 + 1j * material.loss_factor)
    A = Kc[None, :, :] - (omegas**2)[:, None, None] * system.mass[None, :, :]
    F = np.zeros((len(omegas), Kc.shape[0], 1), dtype=complex)
    F[:, system.translation_dof(sweep.excitation_node), 0] = sweep.excitation_amplitude
    try:
        u = np.linalg.solve(A, F)[:, :, 0]
    except np.linalg.LinAlgError:
        u = None
    if u is None or not np.all(np.isfinite(u)):
        bad = _first_singular_omega(A, omegas)
        raise SolverError(f"dynamic stiffness is singular at omega = {bad!r} rad/s", omega=bad)
    idx = [system.translation_dof(n) for n in sweep.response_nodes]
    acc = -(omegas**2)[:, None] * u[:, idx]
    return np.abs(acc).T


def _first_singular_omega(A, omegas):
    for Ak, w in zip(A, omegas):
        try:
            x = np.linalg.solve(Ak, np.ones(Ak.shape[0]))
        except np.linalg.LinAlgError:
            return float(w)
        if not np.all(np.isfinite(x)) or np.linalg.cond(Ak) > 1e15:
            return float(w)
    return float(omegas[int(np.argmin([abs(np.linalg.det(Ak)) for Ak in A]))])


NORMALIZATIONS = ("maxabs", "none")


def normalize(features: np.ndarray, mode: str = "maxabs") -> np.ndarray:
    if mode == "maxabs":
        peak = np.max(np.abs(features))
        return features / peak if peak > 0 else features.copy()
    if mode == "none":
        return features.copy()
    raise InvalidParameterError(f"unknown normalization {mode!r}; choose from {NORMALIZATIONS}")


def build_sample(model: BeamModel, sweep: SweepConfig, material: Material | None = None,
                 normalization: str = "maxabs") -> FrfSample:
    """One dataset row: node responses concatenated in ``sweep.response_nodes`` order."""
    if material is not None and material != model.material:
        model = replace(model, material=material)
    system = assemble(model)
    response = frequency_response(system, sweep, model.material)
    features = normalize(response.reshape(-1), normalization)
    return FrfSample(features=features, targets=model.diameters)
