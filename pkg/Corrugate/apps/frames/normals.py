import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from django.core.exceptions import ValidationError

from apps.grid.fields import PeriodicField, TWO_PI
from apps.grid.operators import gradient_array, jacobian
from utils.config import get_setting

logger = logging.getLogger(__name__)


@dataclass
class NormalFrame:
    """Orthonormal normal columns ζ₁…ζ_r per node, r = m − n."""

    columns: np.ndarray
    continuity_defect: float
    projector_jump: float
    seam_angles: list
    orthonormality_residual: float
    tangency_residual: float
    period: float = TWO_PI

    @property
    def n(self):
        return self.columns.ndim - 2

    @property
    def rank(self):
        return self.columns.shape[-1]

    @property
    def spacing(self):
        return self.period / self.columns.shape[0]

    def column(self, index):
        return self.columns[..., :, index]

    def projector(self):
        return np.einsum("...ai,...bi->...ab", self.columns, self.columns)

    def pairs(self):
        """Spiral pairs (ζ_k, η_k) = (column 2k, column 2k+1)."""
        return [(self.column(2 * k), self.column(2 * k + 1)) for k in range(self.rank // 2)]

    def as_field(self):
        shape = self.columns.shape
        return PeriodicField(self.columns.reshape(shape[:-2] + (shape[-2] * shape[-1],)), period=self.period)

    def as_row(self):
        return {
            "continuity_defect": self.continuity_defect,
            "projector_jump": self.projector_jump,
            "seam_angle_max": max(self.seam_angles) if self.seam_angles else 0.0,
            "orthonormality_residual": self.orthonormality_residual,
            "tangency_residual": self.tangency_residual,
        }


def lowdin(Y):
    """Symmetric orthonormalization Y (YᵀY)^{-1/2} of stacked m×r matrices."""
    w, V = np.linalg.eigh(np.einsum("...ai,...aj->...ij", Y, Y))
    if np.any(w <= 1e-24):
        raise ValidationError("normal frame transport degenerated", code="frame_transport")
    inv_sqrt = np.einsum("...ik,...k,...jk->...ij", V, 1.0 / np.sqrt(w), V)
    return Y @ inv_sqrt


def normal_projector(jac, gamma=None):
    """I − J(JᵀJ)⁻¹Jᵀ per node; raises where ∇uᵀ∇u is not elliptic."""
    metric = np.einsum("...ki,...kj->...ij", jac, jac)
    eig = np.linalg.eigvalsh(metric)
    if gamma is not None:
        bad = (eig[..., 0] < 1.0 / gamma) | (eig[..., -1] > gamma)
    else:
        bad = eig[..., 0] <= 1e-12 * max(1.0, float(eig[..., -1].max()))
    if np.any(bad):
        node = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValidationError(
            f"not an immersion at node {node}", code="not_immersion", params={"node": node}
        )
    m = jac.shape[-2]
    tangent = jac @ np.linalg.solve(metric, np.swapaxes(jac, -1, -2))
    return np.eye(m) - tangent


def seam_generator(holonomy, max_angle=None):
    """Skew generator L with exp(L) = holonomy, refused beyond the allowed rotation angle."""
    max_angle = max_angle if max_angle is not None else get_setting("FRAME_SEAM_MAX_ANGLE", np.pi / 2)
    U, _, Vt = np.linalg.svd(holonomy)
    rotation = U @ Vt
    if np.linalg.det(rotation) < 0.0:
        raise ValidationError(
            "frame holonomy obstruction", code="frame_holonomy", params={"reason": "orientation"}
        )
    generator = np.real(scipy.linalg.logm(rotation))
    generator = 0.5 * (generator - generator.T)
    angle = float(np.abs(np.linalg.eigvals(generator)).max()) if generator.size else 0.0
    if angle > max_angle:
        raise ValidationError(
            "frame holonomy obstruction",
            code="frame_holonomy",
            params={"angle": angle, "limit": max_angle},
        )
    return generator, angle


def _rotations(generators, fraction):
    """exp(fraction·L) for stacked skew L via the Hermitian matrix iL."""
    w, V = np.linalg.eigh(1j * generators)
    phases = np.exp(-1j * fraction * w)
    return np.real(np.einsum("...ik,...k,...jk->...ij", V, phases, V.conj()))


def _seed(projector):
    """Orthonormalized pivot columns of the normal projector at one node."""
    rank = int(round(np.trace(projector)))
    _, _, pivots = scipy.linalg.qr(projector, pivoting=True)
    chosen = np.sort(pivots[:rank])
    return lowdin(projector[:, chosen])


def _index(n, axis, position):
    return tuple([slice(None)] * axis + [position] + [0] * (n - axis - 1))


def _continuity(columns, n):
    jumps = []
    projector_jumps = []
    proj = np.einsum("...ai,...bi->...ab", columns, columns)
    for axis in range(n):
        delta = np.roll(columns, -1, axis=axis) - columns
        jumps.append(float(np.sqrt(np.sum(delta**2, axis=-2)).max()))
        pdelta = np.roll(proj, -1, axis=axis) - proj
        projector_jumps.append(float(np.abs(np.linalg.eigvalsh(pdelta)).max()))
    return max(jumps), max(projector_jumps)


def normal_frame(u, gamma=None, accuracy=None):
    """Globally continuous normal frame of an immersion of Tⁿ.

    The frame is seeded at node 0, carried along each axis in turn by projecting
    the previous frame onto the next normal space, and the mismatch left at each
    periodic seam is unwound evenly along that axis.
    """
    n = u.n
    jac = jacobian(u, accuracy)
    m = jac.shape[-2]
    if m <= n:
        raise ValidationError("normal frame needs codimension at least 1", code="codimension")
    projector = normal_projector(jac, gamma)
    resolution = u.resolution
    r = m - n
    columns = np.zeros(u.node_shape + (m, r))
    columns[(0,) * n] = _seed(projector[(0,) * n])
    seam_angles = []
    for axis in range(n):
        for position in range(1, resolution):
            here = _index(n, axis, position)
            previous = _index(n, axis, position - 1)
            columns[here] = lowdin(projector[here] @ columns[previous])
        start = _index(n, axis, 0)
        wrapped = lowdin(projector[start] @ columns[_index(n, axis, resolution - 1)])
        holonomy = np.einsum("...ai,...aj->...ij", columns[start], wrapped)
        lines = holonomy.reshape(-1, r, r)
        generators = np.empty_like(lines)
        angle = 0.0
        for idx, line in enumerate(lines):
            generators[idx], line_angle = seam_generator(line)
            angle = max(angle, line_angle)
        generators = generators.reshape(holonomy.shape)
        for position in range(1, resolution):
            here = _index(n, axis, position)
            columns[here] = columns[here] @ _rotations(generators, -position / resolution)
        seam_angles.append(angle)
        logger.debug("frame seam along axis %d: max angle %.3e", axis, angle)

    gram = np.einsum("...ai,...aj->...ij", columns, columns)
    ortho = float(np.abs(gram - np.eye(r)).max())
    tangency = float(np.abs(np.einsum("...ai,...ar->...ir", jac, columns)).max())
    tangency /= max(1.0, float(np.abs(jac).max()))
    defect, projector_jump = _continuity(columns, n)
    return NormalFrame(
        columns=columns,
        continuity_defect=defect,
        projector_jump=projector_jump,
        seam_angles=seam_angles,
        orthonormality_residual=ortho,
        tangency_residual=tangency,
        period=u.period,
    )


def frame_gradient(frame, accuracy=None):
    """∇ζ as (…, m, r, n) by periodic differences of the frame columns."""
    return gradient_array(frame.columns, frame.n, frame.spacing, accuracy)
