"""Spine curvature variation through a rigid-body + spring network.

Each lumbar vertebra is a rigid body; adjacent vertebrae are coupled by two
spring bundles: inter-body springs attached on the opposing endplate regions
(the intervertebral-fluid stand-in, 500-1000 N/m each) and stiffer facet
springs attached on the opposing posterior articular regions (8000 N/m).
L1 and L5 are anchored.  Applying anterior-posterior forces to the free
bodies and relaxing to rest yields anatomically constrained curvature
variants; within a vertebra geometry is preserved exactly because only the
body pose moves.

Numerics: semi-implicit Euler on the rigid-body states.  The aggregate
damping and stiffness sit orders of magnitude above the explicit stability
limit at the default time step, so each spring's action on its own body is
integrated implicitly: in twist space the wrench direction of a spring is
u = [n, r x n], its damping contributes c * u u^T and the linearized
elastic force dt * k * u u^T to a per-body 6x6 system solved each step.
This filters the stiff intra-pair modes without moving any equilibrium;
cross-body terms stay explicit (block-Jacobi).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArityError, InstabilityError, OrderingError
from .mesh import TriMesh, area_centroid

INTER_BODY = "inter-body"
FACET_JOINT = "facet-joint"

INTER_STIFFNESS_RANGE = (500.0, 1000.0)   # N/m per spring
FACET_STIFFNESS = 8000.0                  # N/m per spring
INTER_COUNT_RANGE = (400, 800)            # springs per adjacent pair
FACET_COUNT_RANGE = (200, 500)
INTER_DAMPING = 3.0                       # N*s/m per spring
FACET_DAMPING = 500.0

ENDPLATE_SLAB_FRACTION = 0.15   # axial slab nearest the neighbor
FACET_SLAB_FRACTION = 0.20      # posterior superior/inferior extremes

DEFAULT_BODY_MASS_KG = 0.1
DEFAULT_DT_S = 1e-3
DEFAULT_MAX_STEPS = 50_000
DEFAULT_KE_EPS_J = 1e-14
DIVERGENCE_LIMIT_MM = 200.0


@dataclass
class RigidBody:
    level: int
    mesh: TriMesh                      # undeformed geometry
    centroid_mm: np.ndarray            # current world centroid (== translation)
    rotation: np.ndarray               # (3,3) orthonormal, det +1
    translation: np.ndarray            # (3,) mm; world = R @ (v - centroid0) + t
    centroid0_mm: np.ndarray           # rest-pose area centroid
    mass_kg: float = DEFAULT_BODY_MASS_KG
    velocity_m_s: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular_velocity_rad_s: np.ndarray = field(default_factory=lambda: np.zeros(3))
    anchored: bool = False

    def posed_mesh(self) -> TriMesh:
        local = self.mesh.vertices - self.centroid0_mm
        verts = local @ self.rotation.T + self.translation
        labels = None if self.mesh.vertex_labels is None else self.mesh.vertex_labels.copy()
        return TriMesh(verts, self.mesh.faces.copy(), labels)


@dataclass
class Spring:
    body_a: int
    body_b: int
    attach_a_mm: np.ndarray   # body-local (relative to rest centroid)
    attach_b_mm: np.ndarray
    stiffness_N_per_m: float
    rest_length_mm: float
    damping_N_s_per_m: float
    kind: str


@dataclass
class SpringSystem:
    bodies: list[RigidBody]
    springs: list[Spring]

    def spring_counts(self) -> dict[tuple[int, int, str], int]:
        counts: dict[tuple[int, int, str], int] = {}
        for s in self.springs:
            key = (self.bodies[s.body_a].level, self.bodies[s.body_b].level, s.kind)
            counts[key] = counts.get(key, 0) + 1
        return counts

    def deformed_meshes(self) -> list[TriMesh]:
        return [b.posed_mesh() for b in self.bodies]

    def poses(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(b.rotation.copy(), b.translation.copy()) for b in self.bodies]


# ---------------------------------------------------------------------------
# System construction
# ---------------------------------------------------------------------------

def _slab_indices(verts: np.ndarray, axis: int, fraction: float, side: str) -> np.ndarray:
    lo, hi = verts[:, axis].min(), verts[:, axis].max()
    span = max(hi - lo, 1e-9)
    if side == "low":
        return np.where(verts[:, axis] <= lo + fraction * span)[0]
    return np.where(verts[:, axis] >= hi - fraction * span)[0]


def _facet_region(verts: np.ndarray, centroid: np.ndarray, z_side: str) -> np.ndarray:
    """Posterior superior/inferior extreme vertices of one body."""
    posterior = np.where(verts[:, 1] > centroid[1])[0]
    if posterior.size == 0:
        posterior = np.arange(len(verts))
    sub = verts[posterior]
    pick = _slab_indices(sub, axis=2, fraction=FACET_SLAB_FRACTION, side=z_side)
    return posterior[pick]


def _split_sides(verts: np.ndarray, idx: np.ndarray, centroid: np.ndarray):
    left = idx[verts[idx, 0] >= centroid[0]]
    right = idx[verts[idx, 0] < centroid[0]]
    if left.size == 0 or right.size == 0:
        return idx, idx
    return left, right


def _paired_attachments(rng, verts_a, region_a, verts_b, region_b, count):
    """Sample points on region_a, pair each with its closest region_b vertex."""
    ia = rng.choice(region_a, size=count, replace=True)
    pa = verts_a[ia]
    pb_candidates = verts_b[region_b]
    # count x |region_b| distance matrix; regions are small slabs
    d2 = ((pa[:, None, :] - pb_candidates[None, :, :]) ** 2).sum(axis=2)
    ib = region_b[np.argmin(d2, axis=1)]
    return pa, verts_b[ib]


def build_spring_system(meshes: list[TriMesh], rng_seed: int) -> SpringSystem:
    """Assemble the 5-body spring network from L1..L5 meshes (cranial order).

    Attachment pairs, spring counts and inter-body stiffnesses are sampled
    from a generator seeded with ``rng_seed``, so identical inputs and seeds
    give bit-identical systems.  Rest lengths equal the attachment distances
    in the input pose: the undeformed spine is an exact equilibrium.
    """
    if len(meshes) != 5:
        raise ArityError(f"expected 5 vertebra meshes (L1..L5), got {len(meshes)}")
    centroids = [area_centroid(m) for m in meshes]
    z = np.array([c[2] for c in centroids])
    if not np.all(np.diff(z) < 0):
        raise OrderingError(
            "meshes must be ordered L1..L5 along the cranial axis "
            f"(centroid z sequence {np.round(z, 2).tolist()})")

    rng = np.random.default_rng(rng_seed)
    bodies = []
    for i, (mesh, c0) in enumerate(zip(meshes, centroids)):
        bodies.append(RigidBody(
            level=i + 1,
            mesh=mesh,
            centroid_mm=c0.copy(),
            rotation=np.eye(3),
            translation=c0.copy(),
            centroid0_mm=c0.copy(),
            anchored=(i == 0 or i == 4),
        ))

    springs: list[Spring] = []
    for i in range(4):
        upper, lower = meshes[i], meshes[i + 1]
        vu, vl = upper.vertices, lower.vertices
        n_inter = int(rng.integers(INTER_COUNT_RANGE[0], INTER_COUNT_RANGE[1] + 1))
        n_facet = int(rng.integers(FACET_COUNT_RANGE[0], FACET_COUNT_RANGE[1] + 1))

        # endplates face each other across the disc space
        ep_u = _slab_indices(vu, axis=2, fraction=ENDPLATE_SLAB_FRACTION, side="low")
        ep_l = _slab_indices(vl, axis=2, fraction=ENDPLATE_SLAB_FRACTION, side="high")
        pa, pb = _paired_attachments(rng, vu, ep_u, vl, ep_l, n_inter)
        k_inter = rng.uniform(*INTER_STIFFNESS_RANGE, size=n_inter)
        rest = np.linalg.norm(pb - pa, axis=1)
        for j in range(n_inter):
            springs.append(Spring(
                body_a=i, body_b=i + 1,
                attach_a_mm=pa[j] - centroids[i],
                attach_b_mm=pb[j] - centroids[i + 1],
                stiffness_N_per_m=float(k_inter[j]),
                rest_length_mm=float(rest[j]),
                damping_N_s_per_m=INTER_DAMPING,
                kind=INTER_BODY,
            ))

        # facet joints: posterior-inferior of the upper body meets
        # posterior-superior of the lower, matched left/right
        fc_u = _facet_region(vu, centroids[i], z_side="low")
        fc_l = _facet_region(vl, centroids[i + 1], z_side="high")
        lu, ru = _split_sides(vu, fc_u, centroids[i])
        ll, rl = _split_sides(vl, fc_l, centroids[i + 1])
        n_left = n_facet - n_facet // 2
        for region_u, region_l, count in ((lu, ll, n_left), (ru, rl, n_facet // 2)):
            pa, pb = _paired_attachments(rng, vu, region_u, vl, region_l, count)
            rest = np.linalg.norm(pb - pa, axis=1)
            for j in range(count):
                springs.append(Spring(
                    body_a=i, body_b=i + 1,
                    attach_a_mm=pa[j] - centroids[i],
                    attach_b_mm=pb[j] - centroids[i + 1],
                    stiffness_N_per_m=FACET_STIFFNESS,
                    rest_length_mm=float(rest[j]),
                    damping_N_s_per_m=FACET_DAMPING,
                    kind=FACET_JOINT,
                ))

    return SpringSystem(bodies=bodies, springs=springs)


# ---------------------------------------------------------------------------
# Relaxation
# ---------------------------------------------------------------------------

def _rodrigues(axis_angle: np.ndarray) -> np.ndarray:
    """Rotation matrices for (B,3) axis-angle vectors (exact identity at zero)."""
    theta = np.linalg.norm(axis_angle, axis=1)
    out = np.tile(np.eye(3), (len(axis_angle), 1, 1))
    active = theta > 1e-14
    if not active.any():
        return out
    k = axis_angle[active] / theta[active, None]
    kx = np.zeros((int(active.sum()), 3, 3))
    kx[:, 0, 1], kx[:, 0, 2] = -k[:, 2], k[:, 1]
    kx[:, 1, 0], kx[:, 1, 2] = k[:, 2], -k[:, 0]
    kx[:, 2, 0], kx[:, 2, 1] = -k[:, 1], k[:, 0]
    s = np.sin(theta[active])[:, None, None]
    c = np.cos(theta[active])[:, None, None]
    out[active] = np.eye(3) + s * kx + (1.0 - c) * (kx @ kx)
    return out


def _reorthonormalize(R: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(R)
    out = u @ vt
    flip = np.linalg.det(out) < 0
    if np.any(flip):
        u[flip, :, -1] *= -1.0
        out = u @ vt
    return out


def _box_inertia_diag(mesh: TriMesh, mass_kg: float) -> np.ndarray:
    lo, hi = mesh.bounds()
    e = (hi - lo) * 1e-3  # meters
    ex2, ey2, ez2 = e[0] ** 2, e[1] ** 2, e[2] ** 2
    return mass_kg / 12.0 * np.array([ey2 + ez2, ex2 + ez2, ex2 + ey2])


class _SpringArrays:
    """All springs as contiguous SI arrays, sorted by their upper body.

    Sorting makes each body's endpoint-a springs (and, because springs only
    join adjacent levels, endpoint-b springs) a contiguous slice, so per-body
    reductions are plain segment sums.
    """

    def __init__(self, system: SpringSystem, n_bodies: int):
        order = np.argsort([s.body_a for s in system.springs], kind="stable")
        springs = [system.springs[i] for i in order]
        self.ia = np.array([s.body_a for s in springs])
        self.ib = np.array([s.body_b for s in springs])
        self.la = np.array([s.attach_a_mm for s in springs]) * 1e-3
        self.lb = np.array([s.attach_b_mm for s in springs]) * 1e-3
        self.k = np.array([s.stiffness_N_per_m for s in springs])
        self.L0 = np.array([s.rest_length_mm for s in springs]) * 1e-3
        self.c = np.array([s.damping_N_s_per_m for s in springs])
        self.bounds_a = np.searchsorted(self.ia, np.arange(n_bodies + 1))
        self.bounds_b = np.searchsorted(self.ib, np.arange(n_bodies + 1))


def _cross_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty_like(b)
    out[:, 0] = a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1]
    out[:, 1] = a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2]
    out[:, 2] = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    return out


def _cross_one(w: np.ndarray, r: np.ndarray) -> np.ndarray:
    out = np.empty_like(r)
    out[:, 0] = w[1] * r[:, 2] - w[2] * r[:, 1]
    out[:, 1] = w[2] * r[:, 0] - w[0] * r[:, 2]
    out[:, 2] = w[0] * r[:, 1] - w[1] * r[:, 0]
    return out


def relax(system: SpringSystem, forces_N: np.ndarray | None,
          dt_s: float = DEFAULT_DT_S, max_steps: int = DEFAULT_MAX_STEPS,
          ke_eps: float = DEFAULT_KE_EPS_J, callback=None) -> SpringSystem:
    """Integrate the system to rest under constant per-body forces.

    Forces are (n_bodies, 3) newtons; entries for anchored bodies are
    ignored.  Integration stops when total kinetic energy drops below
    ``ke_eps`` joules or after ``max_steps`` steps.  Returns a new
    SpringSystem with updated poses; the input is left untouched.
    ``callback``, if given, is invoked per step with
    (step, kinetic_J, spring_potential_J).

    Raises InstabilityError when any body displaces more than 200 mm.
    """
    if not 0.0 < dt_s <= 0.01:
        raise ValueError(f"dt_s must be in (0, 0.01], got {dt_s}")
    nb = len(system.bodies)
    forces = np.zeros((nb, 3)) if forces_N is None else \
        np.asarray(forces_N, dtype=np.float64).reshape(nb, 3).copy()

    anchored = np.array([b.anchored for b in system.bodies])
    free = ~anchored
    forces[anchored] = 0.0

    # state in SI units (meters, seconds)
    x = np.array([b.translation for b in system.bodies]) * 1e-3
    R = np.array([b.rotation for b in system.bodies])
    v = np.array([b.velocity_m_s for b in system.bodies])
    w = np.array([b.angular_velocity_rad_s for b in system.bodies])
    mass = np.array([b.mass_kg for b in system.bodies])
    inertia = np.stack([_box_inertia_diag(b.mesh, b.mass_kg) for b in system.bodies])
    x0 = x.copy()

    blocks = _SpringBlocks(system).blocks
    limit_m = DIVERGENCE_LIMIT_MM * 1e-3
    eye6 = np.eye(6)

    for step in range(max_steps):
        F = forces.copy()
        T = np.zeros((nb, 3))
        W6 = np.zeros((nb, 6, 6))   # implicit wrench operators, (c + dt k) u u^T
        pe = 0.0

        for p, la, lb, k, L0, c in blocks:
            q = p + 1
            ra = la @ R[p].T
            rb = lb @ R[q].T
            d = (x[q] + rb) - (x[p] + ra)
            L = np.sqrt(np.einsum("si,si->s", d, d))
            n = d / np.maximum(L, 1e-12)[:, None]
            stretch = L - L0

            vpa = v[p] + _cross_one(w[p], ra)
            vpb = v[q] + _cross_one(w[q], rb)

            el = k * stretch
            if callback is not None:
                pe += 0.5 * float((k * stretch ** 2).sum())

            # endpoint a: direction +n; endpoint b: direction -n
            g_a = el + c * np.einsum("si,si->s", vpb, n)
            g_b = el - c * np.einsum("si,si->s", vpa, n)
            m_a = _cross_rows(ra, n)
            m_b = _cross_rows(rb, n)

            F[p] += g_a @ n
            T[p] += g_a @ m_a
            F[q] -= g_b @ n
            T[q] -= g_b @ m_b

            coef = c + dt_s * k
            ua = np.concatenate([n, m_a], axis=1)   # twist-space direction, body p
            ub = np.concatenate([n, m_b], axis=1)   # sign cancels in the outer product
            W6[p] += (coef[:, None] * ua).T @ ua
            W6[q] += (coef[:, None] * ub).T @ ub

        Iw = (R * inertia[:, None, :]) @ np.swapaxes(R, 1, 2)
        T += np.cross((Iw @ w[..., None])[..., 0], w)   # gyroscopic -w x (Iw w)

        A = dt_s * W6
        A[:, :3, :3] += mass[:, None, None] * eye6[:3, :3]
        A[:, 3:, 3:] += Iw
        rhs = np.concatenate([
            mass[:, None] * v + dt_s * F,
            (Iw @ w[..., None])[..., 0] + dt_s * T,
        ], axis=1)
        qdot = np.linalg.solve(A, rhs[..., None])[..., 0]
        qdot[anchored] = 0.0
        v, w = qdot[:, :3], qdot[:, 3:]

        x = x + dt_s * v
        R[free] = _rodrigues(w[free] * dt_s) @ R[free]
        if (step + 1) % 256 == 0:
            R[free] = _reorthonormalize(R[free])

        ke = 0.5 * float((mass * (v * v).sum(axis=1)).sum())
        ke += 0.5 * float(np.einsum("bi,bi->", w, (Iw @ w[..., None])[..., 0]))
        if callback is not None:
            callback(step, ke, pe)
        if (step + 1) % 16 == 0 or ke < ke_eps:
            disp2 = ((x - x0) ** 2).sum(axis=1)
            if disp2.max() > limit_m ** 2:
                raise InstabilityError(
                    f"body displacement {np.sqrt(disp2.max()) * 1e3:.1f} mm exceeds "
                    f"{DIVERGENCE_LIMIT_MM} mm; reduce dt_s (currently {dt_s})")
        if ke < ke_eps:
            break

    R[free] = _reorthonormalize(R[free])

    out_bodies = []
    for i, b in enumerate(system.bodies):
        if b.anchored:
            out_bodies.append(RigidBody(
                level=b.level, mesh=b.mesh, centroid_mm=b.centroid_mm.copy(),
                rotation=b.rotation.copy(), translation=b.translation.copy(),
                centroid0_mm=b.centroid0_mm.copy(), mass_kg=b.mass_kg,
                velocity_m_s=np.zeros(3), angular_velocity_rad_s=np.zeros(3),
                anchored=True))
        else:
            t_mm = x[i] * 1e3
            out_bodies.append(RigidBody(
                level=b.level, mesh=b.mesh, centroid_mm=t_mm.copy(),
                rotation=R[i].copy(), translation=t_mm.copy(),
                centroid0_mm=b.centroid0_mm.copy(), mass_kg=b.mass_kg,
                velocity_m_s=v[i].copy(), angular_velocity_rad_s=w[i].copy(),
                anchored=False))
    return SpringSystem(bodies=out_bodies, springs=system.springs)


# ---------------------------------------------------------------------------
# Deformation sampling
# ---------------------------------------------------------------------------

@dataclass
class DeformationVariant:
    variant_id: int
    meshes: list[TriMesh]
    poses: list[tuple[np.ndarray, np.ndarray]]  # (rotation, translation_mm)
    forces_N: np.ndarray                        # (5,3) applied forces


def sample_deformations(meshes: list[TriMesh], n_variants: int,
                        force_max_N: float = 30.0, rng_seed: int = 0,
                        dt_s: float = DEFAULT_DT_S,
                        max_steps: int = DEFAULT_MAX_STEPS,
                        ke_eps: float = DEFAULT_KE_EPS_J) -> list[DeformationVariant]:
    """Generate curvature variants by relaxing under random AP forces.

    Each variant samples independent anterior-posterior (y) forces per body,
    uniform in [-force_max_N, +force_max_N], and relaxes the same seeded
    spring system from its rest state.  Output vertebra meshes are exact
    rigid transforms of the inputs.
    """
    if n_variants < 1:
        raise ValueError(f"n_variants must be >= 1, got {n_variants}")
    system = build_spring_system(meshes, rng_seed)
    variants = []
    for vi in range(n_variants):
        rng = np.random.default_rng(np.random.SeedSequence(
            entropy=rng_seed, spawn_key=(1, vi)))
        forces = np.zeros((5, 3))
        forces[:, 1] = rng.uniform(-force_max_N, force_max_N, size=5)
        relaxed = relax(system, forces, dt_s=dt_s, max_steps=max_steps, ke_eps=ke_eps)
        variants.append(DeformationVariant(
            variant_id=vi,
            meshes=relaxed.deformed_meshes(),
            poses=relaxed.poses(),
            forces_N=forces,
        ))
    return variants
