"""
Self-contained invariant suite behind ``gvkf verify``.

Each check builds its own seeded inputs, compares the implementation
against an independent oracle and reports pass/fail with a short detail.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import structlog
from scipy import optimize

from gvkf.core.gaussian_core import covariance_from_rs, evaluate_3d, ray_gaussian_transform
from gvkf.core.mesher import MeshExtractor
from gvkf.core.opacity_field import cdf_phi, cdf_phi_product, render_ray
from gvkf.core.renderer import Renderer
from gvkf.core.scenes import build_scene, default_camera
from gvkf.core.surface_mapping import (
    h_diagnostic,
    iso_phi,
    normal_density,
    sdf_from_cdf,
    solve_u0,
    u0_residual,
)
from gvkf.core.trainer import central_difference, l1_color_gradient, loss_depth_distortion, loss_l1
from gvkf.core.volume_oracle import KernelProfile, render_volume, transmittance_adaptive, transmittance_exact
from gvkf.core.voxel_store import SparseVoxelGrid
from gvkf.models.config import GVKFConfig, QuadratureConfig
from gvkf.models.field import RayField
from gvkf.models.geometry import ImageBuffer, ScalarGrid
from gvkf.models.primitives import GaussianPrimitive, Ray, RayKernel
from gvkf.models.voxel import FeatureVoxel

logger = structlog.get_logger(__name__)

Outcome = Tuple[bool, str]

# Fault injected into the sum-product check by --self-test-negate
NEGATE_OFFSET = 1e-6

# Quadrature errors below this are at the oracle's own accuracy
CONVERGENCE_FLOOR = 1e-10


class CheckStatus(str, Enum):
    PASS = "PASS"
    FAIL = "FAIL"


@dataclass
class PropertyResult:
    name: str
    status: CheckStatus
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.status == CheckStatus.PASS


@dataclass
class VerificationReport:
    """Outcome of one suite run."""

    results: List[PropertyResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.results) and all(r.passed for r in self.results)

    @property
    def failed(self) -> List[str]:
        return [r.name for r in self.results if not r.passed]

    def lines(self) -> List[str]:
        width = max((len(r.name) for r in self.results), default=0)
        rows = [f"{r.status.value}  {r.name.ljust(width)}  {r.detail}".rstrip() for r in self.results]
        passed = sum(r.passed for r in self.results)
        rows.append(f"{passed}/{len(self.results)} properties passed")
        return rows

    def to_dict(self) -> Dict[str, Any]:
        return {
            "passed": self.passed,
            "failed": self.failed,
            "results": [{"name": r.name, "status": r.status.value, "detail": r.detail} for r in self.results],
        }


# ============================================================================
# Random inputs
# ============================================================================


def random_quaternion(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def random_field(rng: np.random.Generator, max_kernels: int = 50, alpha_max: float = 0.99) -> RayField:
    count = int(rng.integers(1, max_kernels + 1))
    kernels = [
        RayKernel(
            t=float(rng.uniform(0.5, 10.0)),
            k=float(rng.uniform(0.5, 50.0)),
            g_max=1.0,
            alpha=float(rng.uniform(0.0, alpha_max)),
            color=rng.uniform(0.0, 1.0, size=3),
            index=n,
        )
        for n in range(count)
    ]
    return RayField.from_kernels(kernels)


def grid_aligned_field(f: RayField, spacing: float) -> RayField:
    """Snap kernel peaks onto multiples of ``spacing`` so no quadrature cell straddles a kink."""
    kernels = [replace(kernel, t=max(round(kernel.t / spacing), 1) * spacing) for kernel in f.kernels]
    return RayField.from_kernels(kernels)


def logit_tolerance(phi: np.ndarray, mu: float, floor: float) -> np.ndarray:
    """``floor`` plus four ulps of Φ carried through D = logit(1-Φ)/μ."""
    phi = np.asarray(phi, dtype=np.float64)
    return floor + 4.0 * np.finfo(np.float64).eps / (mu * phi * (1.0 - phi))


def _blend_sum(alpha: np.ndarray, k: np.ndarray, t0: np.ndarray, t: float) -> float:
    """Blended Φ sum over kernels in the given order."""
    x = np.minimum(t - t0, 0.0)
    a = alpha * np.exp(-k * x * x)
    before = np.concatenate([[1.0], np.cumprod(1.0 - a)[:-1]])
    return float((a * before).sum())


# ============================================================================
# Suite
# ============================================================================


class InvariantSuite:
    """Named property checks over every module."""

    def __init__(self, config: Optional[GVKFConfig] = None, seed: Optional[int] = None):
        self.config = config or GVKFConfig()
        self.seed = self.config.seed if seed is None else seed
        self.logger = logger.bind(component="verification")
        self.checks: List[Tuple[str, Callable[[np.random.Generator, bool], Outcome]]] = [
            ("covariance_spd", self.check_covariance),
            ("ray_gaussian_argmax", self.check_ray_gaussian),
            ("sum_product_identity", self.check_sum_product),
            ("phi_monotone_bounded", self.check_phi_monotone),
            ("phi_order_invariance", self.check_phi_order),
            ("single_kernel_render", self.check_single_kernel),
            ("early_stop_bound", self.check_early_stop),
            ("volume_small_opacity", self.check_small_opacity),
            ("volume_convergence", self.check_convergence),
            ("u0_solver", self.check_u0),
            ("peak_before_surface", self.check_peak_before_surface),
            ("sdf_mapping_identities", self.check_sdf_identities),
            ("voxel_subdivision", self.check_subdivision),
            ("voxel_pruning", self.check_pruning),
            ("distortion_loss", self.check_distortion),
            ("fd_color_gradient", self.check_color_gradient),
            ("marching_cubes_sphere", self.check_marching_cubes),
            ("render_determinism", self.check_render_determinism),
        ]

    def run(self, negate: bool = False) -> VerificationReport:
        """Run every check; ``negate`` corrupts the sum-product identity."""
        report = VerificationReport()
        for n, (name, check) in enumerate(self.checks):
            rng = np.random.default_rng([self.seed, n])
            try:
                ok, detail = check(rng, negate)
            except Exception as e:  # a crashing check is a failed property
                ok, detail = False, f"raised {type(e).__name__}: {e}"
            status = CheckStatus.PASS if ok else CheckStatus.FAIL
            report.results.append(PropertyResult(name, status, detail))
            self.logger.debug("Checked property", name=name, status=status.value, detail=detail)
        self.logger.info("Verification finished", passed=report.passed, failed=report.failed)
        return report

    # ========================================================================
    # gaussian_core
    # ========================================================================

    def check_covariance(self, rng: np.random.Generator, negate: bool) -> Outcome:
        worst_eig = worst_inv = 0.0
        for _ in range(50):
            cov = covariance_from_rs(random_quaternion(rng), [0.5, 1.0, 2.0])
            eig = np.sort(np.linalg.eigvalsh(cov.matrix))
            worst_eig = max(worst_eig, float(np.abs(eig - [0.25, 1.0, 4.0]).max()))
            worst_inv = max(worst_inv, float(np.abs(cov.matrix @ cov.inverse - np.eye(3)).max()))
        return worst_eig < 1e-9 and worst_inv < 1e-9, f"eig err {worst_eig:.1e}, inverse err {worst_inv:.1e}"

    def check_ray_gaussian(self, rng: np.random.Generator, negate: bool) -> Outcome:
        worst_t = worst_g = 0.0
        for _ in range(200):
            g = GaussianPrimitive(
                rng.uniform(-1.0, 1.0, size=3) + [0.0, 0.0, 5.0],
                random_quaternion(rng),
                rng.uniform(0.2, 1.0, size=3),
                float(rng.uniform(0.1, 1.0)),
                rng.uniform(0.0, 1.0, size=3),
            )
            ray = Ray.towards(rng.uniform(-0.5, 0.5, size=3), [0.0, 0.0, 1.0] + rng.uniform(-0.2, 0.2, size=3))
            kernel = ray_gaussian_transform(g, ray, alpha_min=0.0)

            # coarse dense search, refined with evaluate_3d below
            inverse = covariance_from_rs(g.rotation, g.scale).inverse
            ts = np.linspace(-5.0, 15.0, 2001)
            offsets = ray.origin + ts[:, None] * ray.direction - g.position
            values = np.einsum("ni,ij,nj->n", offsets, inverse, offsets)
            best = ts[int(np.argmin(values))]
            numeric = optimize.minimize_scalar(
                lambda t: -evaluate_3d(g, ray.at(t)),
                bounds=(best - 0.02, best + 0.02),
                method="bounded",
                options={"xatol": 1e-9},
            ).x
            worst_t = max(worst_t, abs(numeric - kernel.t))
            worst_g = max(worst_g, abs(kernel.g_max - evaluate_3d(g, ray.at(kernel.t)) / g.opacity))
        return worst_t <= 1e-4 and worst_g <= 1e-12, f"t err {worst_t:.1e}, g_max err {worst_g:.1e}"

    # ========================================================================
    # opacity_field
    # ========================================================================

    def check_sum_product(self, rng: np.random.Generator, negate: bool) -> Outcome:
        worst = 0.0
        for _ in range(200):
            f = random_field(rng)
            t = rng.uniform(0.0, 12.0, size=100)
            blended = np.asarray(cdf_phi(f, t))
            if negate:
                blended = blended + NEGATE_OFFSET
            worst = max(worst, float(np.abs(blended - cdf_phi_product(f, t)).max()))
        return worst <= 1e-12, f"max |sum - product| {worst:.1e}"

    def check_phi_monotone(self, rng: np.random.Generator, negate: bool) -> Outcome:
        worst_step = worst_bound = 0.0
        grid = np.linspace(0.0, 12.0, 1024)
        for _ in range(200):
            f = random_field(rng)
            phi = np.asarray(cdf_phi(f, grid))
            ceiling = 1.0 - np.prod(1.0 - f.alpha)
            worst_step = max(worst_step, float(np.maximum(-np.diff(phi), 0.0).max()))
            worst_bound = max(worst_bound, float(np.maximum(phi - ceiling, 0.0).max()), float(np.maximum(-phi, 0.0).max()))
        return worst_step <= 1e-12 and worst_bound <= 1e-12, f"max decrease {worst_step:.1e}, bound excess {worst_bound:.1e}"

    def check_phi_order(self, rng: np.random.Generator, negate: bool) -> Outcome:
        worst = 0.0
        for _ in range(100):
            f = random_field(rng, max_kernels=20)
            perm = rng.permutation(f.count)
            for t in rng.uniform(0.0, 12.0, size=10):
                worst = max(worst, abs(_blend_sum(f.alpha[perm], f.k[perm], f.t[perm], t) - float(cdf_phi(f, t))))
        return worst <= 1e-12, f"max permutation change {worst:.1e}"

    def check_single_kernel(self, rng: np.random.Generator, negate: bool) -> Outcome:
        worst = 0.0
        for _ in range(100):
            alpha, color, bg = float(rng.uniform()), rng.uniform(size=3), rng.uniform(size=3)
            f = RayField.from_kernels([RayKernel(t=1.0, k=1.0, g_max=1.0, alpha=alpha, color=color)], bg)
            expected = alpha * color + (1.0 - alpha) * bg
            worst = max(worst, float(np.abs(render_ray(f, 0.0).color - expected).max()))
        return worst <= 1e-15, f"max error {worst:.1e}"

    def check_early_stop(self, rng: np.random.Generator, negate: bool) -> Outcome:
        threshold = self.config.early_stop_transmittance
        worst = 0.0
        for _ in range(200):
            f = random_field(rng)
            worst = max(worst, float(np.abs(render_ray(f, threshold).color - render_ray(f, 0.0).color).max()))
        return worst <= threshold, f"max early-stop error {worst:.1e} (threshold {threshold:g})"

    # ========================================================================
    # volume_oracle
    # ========================================================================

    def check_small_opacity(self, rng: np.random.Generator, negate: bool) -> Outcome:
        cfg = QuadratureConfig(step=1e-3, far=8.0)
        worst_margin = -np.inf
        for _ in range(20):
            count = int(rng.integers(1, 6))
            alphas = rng.dirichlet(np.ones(count)) * rng.uniform(0.01, 0.2)
            kernels = [
                RayKernel(t=float(rng.uniform(2.0, 6.0)), k=float(rng.uniform(5.0, 50.0)), g_max=1.0, alpha=float(a), color=np.ones(3))
                for a in alphas
            ]
            f = RayField.from_kernels(kernels)
            exact = 1.0 - transmittance_exact(KernelProfile(f, "gaussian"), cfg.far, cfg)
            blended = float(cdf_phi(f, cfg.far))
            total = float(alphas.sum())
            worst_margin = max(worst_margin, abs(blended - exact) - (total**2 + 1e-4))
        return worst_margin <= 0.0, f"worst margin to (sum alpha)^2 + 1e-4: {worst_margin:.1e}"

    def check_convergence(self, rng: np.random.Generator, negate: bool) -> Outcome:
        steps = [0.04, 0.02, 0.01, 0.005]
        far = 12.0
        violations = 0
        worst = np.zeros(len(steps))
        for _ in range(20):
            f = grid_aligned_field(random_field(rng, max_kernels=5, alpha_max=0.5), steps[0])
            reference = transmittance_adaptive(f, far)
            errors = [abs(render_volume(f, QuadratureConfig(step=s, far=far)).transmittance - reference) for s in steps]
            violations += sum(b > a and b > CONVERGENCE_FLOOR for a, b in zip(errors, errors[1:]))
            worst = np.maximum(worst, errors)
        shrinking = bool(np.all((np.diff(worst) < 0.0) | (worst[1:] <= CONVERGENCE_FLOOR)))
        ok = violations == 0 and shrinking
        return ok, f"{violations} non-decreasing error steps, worst errors " + ", ".join(f"{e:.1e}" for e in worst)

    # ========================================================================
    # surface_mapping
    # ========================================================================

    def check_u0(self, rng: np.random.Generator, negate: bool) -> Outcome:
        worst_residual = 0.0
        positive = 0
        for variance in np.geomspace(1e-4, 10.0, 25):
            u0 = solve_u0(variance, self.config.solver_tol)
            worst_residual = max(worst_residual, abs(u0_residual(u0, variance)))
            positive += u0 >= 0.0
        grid = np.arange(-10.0, 0.0, 1e-5)
        values = normal_density(grid, 1.0) + grid
        crossing = grid[int(np.nonzero(np.diff(np.sign(values)))[0][0])]
        unit = solve_u0(1.0)
        ok = worst_residual <= 1e-10 and positive == 0 and abs(unit - crossing) <= 1e-3
        return ok, f"residual {worst_residual:.1e}, u0(1) = {unit:.6f}, grid {crossing:.5f}"

    def check_peak_before_surface(self, rng: np.random.Generator, negate: bool) -> Outcome:
        bad = []
        for variance in (1e-2, 0.1, 1.0, 10.0):
            sigma = np.sqrt(variance)
            diag = h_diagnostic(variance, np.linspace(-10.0 * sigma, 2.0 * sigma, 20001))
            if not diag.single_crossing or not diag.phi_prime_argmax < 0.0:
                bad.append(variance)
        return not bad, "all variances" if not bad else f"failed for sigma^2 in {bad}"

    def check_sdf_identities(self, rng: np.random.Generator, negate: bool) -> Outcome:
        # Φ carries a relative rounding error of one ulp, which the logit
        # amplifies by 1/(μ·Φ·(1-Φ)); errors are measured against that scale.
        worst_zero = worst_half = worst_trip = 0.0
        for mu in (2.0, 8.0, 32.0):
            for variance in (0.05, 0.5, 5.0):
                u0 = solve_u0(variance)
                level = iso_phi(mu, u0)
                zero_err = abs(float(sdf_from_cdf(level, mu, u0)))
                worst_zero = max(worst_zero, zero_err / logit_tolerance(level, mu, 1e-9))
                worst_half = max(worst_half, abs(float(sdf_from_cdf(0.5, mu, u0)) + u0) / 1e-12)
                u = np.linspace(-0.5, 0.5, 41)
                phi = 1.0 / (1.0 + np.exp(mu * u))
                trip_err = np.abs(sdf_from_cdf(phi, mu, u0) + u0 - u)
                worst_trip = max(worst_trip, float((trip_err / logit_tolerance(phi, mu, 1e-12)).max()))
        ok = worst_zero <= 1.0 and worst_half <= 1.0 and worst_trip <= 1.0
        return ok, f"error / tolerance: iso {worst_zero:.2f}, half {worst_half:.2f}, round trip {worst_trip:.2f}"

    # ========================================================================
    # voxel_store
    # ========================================================================

    def check_subdivision(self, rng: np.random.Generator, negate: bool) -> Outcome:
        grid = SparseVoxelGrid(1.0, mode="neural", config=self.config)
        feature = rng.uniform(-0.1, 0.1, size=self.config.feature_dim)
        grid.add_voxel(FeatureVoxel(key=(0, 0, 0, 0), edge=1.0, feature=feature))
        parent_box = grid.voxels[(0, 0, 0, 0)].bounds()

        for _ in range(self.config.max_depth + 1):
            for key in grid.sorted_keys():
                grid.register_gradients([(key, 3e-4)])
            grid.evaluate_voxels()

        leaves = [v for v in grid.voxels.values()]
        depth_ok = max(v.depth for v in leaves) == self.config.max_depth
        expected = 8 ** self.config.max_depth
        volume = sum(v.edge**3 for v in leaves)
        low = np.min([v.bounds()[0] for v in leaves], axis=0)
        high = np.max([v.bounds()[1] for v in leaves], axis=0)
        covered = np.array_equal(low, parent_box[0]) and np.array_equal(high, parent_box[1]) and volume == 1.0
        ok = depth_ok and len(leaves) == expected and covered
        return ok, f"{len(leaves)} leaves at depth {max(v.depth for v in leaves)}"

    def check_pruning(self, rng: np.random.Generator, negate: bool) -> Outcome:
        grid = SparseVoxelGrid(1.0, mode="neural", config=self.config)
        for n in range(10):
            grid.add_voxel(FeatureVoxel(key=(n, 0, 0, 0), edge=1.0, feature=np.zeros(self.config.feature_dim)))
        used = [(n, 0, 0, 0) for n in sorted(rng.choice(10, size=4, replace=False).tolist())]
        grid.register_gradients([], visible_keys=used)
        report = grid.evaluate_voxels()
        ok = sorted(grid.voxels) == used and len(report.pruned) == 6
        return ok, f"kept {len(grid)}, pruned {len(report.pruned)}"

    # ========================================================================
    # trainer
    # ========================================================================

    def check_distortion(self, rng: np.random.Generator, negate: bool) -> Outcome:
        pair = RayField.from_kernels(
            [
                RayKernel(t=2.0, k=1.0, g_max=1.0, alpha=0.5, color=np.zeros(3)),
                RayKernel(t=6.0, k=1.0, g_max=1.0, alpha=0.5, color=np.zeros(3)),
            ]
        )
        value = loss_depth_distortion(pair)
        collapsed = RayField.from_kernels(
            [RayKernel(t=3.0, k=1.0, g_max=1.0, alpha=0.4, color=np.zeros(3), index=n) for n in range(5)]
        )
        ok = abs(value - 0.5) <= 1e-12 and loss_depth_distortion(collapsed) == 0.0
        return ok, f"two-kernel value {value:.6f}"

    def check_color_gradient(self, rng: np.random.Generator, negate: bool) -> Outcome:
        cam = default_camera(size=8, distance=2.0)
        renderer = Renderer(self.config)
        target = ImageBuffer.rgb(np.full((8, 8, 3), 0.3))
        base = GaussianPrimitive([0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], [0.4, 0.4, 0.4], 0.9, [0.8, 0.2, 0.6])
        render = renderer.render_image([base], cam, return_weights=True)
        analytic = l1_color_gradient(render, target)[0]

        def loss(color: np.ndarray) -> float:
            g = GaussianPrimitive(base.position, base.rotation, base.scale, base.opacity, color)
            return loss_l1(renderer.render_image([g], cam).color, target)

        numeric = central_difference(loss, base.color, self.config.fd_step)
        error = float(np.abs(numeric - analytic).max() / max(np.abs(analytic).max(), 1e-12))
        same_sign = bool(np.all(np.sign(numeric) == np.sign(analytic)))
        return same_sign and error <= 0.05, f"relative error {error:.1e}"

    # ========================================================================
    # mesher and renderer
    # ========================================================================

    def check_marching_cubes(self, rng: np.random.Generator, negate: bool) -> Outcome:
        dims = (32, 32, 32)
        spacing = 2.4 / 31
        origin = np.full(3, -1.2)
        grid = ScalarGrid(origin, spacing, dims, np.zeros(dims))
        grid.values = np.linalg.norm(grid.points(), axis=-1) - 1.0
        mesh = MeshExtractor(self.config).marching_cubes(grid, 0.0)
        radial = float(np.abs(np.linalg.norm(mesh.vertices, axis=1) - 1.0).max())
        ok = mesh.is_edge_manifold() and radial <= np.sqrt(3.0) * spacing
        return ok, f"{len(mesh.faces)} faces, max radial error {radial:.3f}"

    def check_render_determinism(self, rng: np.random.Generator, negate: bool) -> Outcome:
        scene = build_scene("triplet", self.config)
        cam = default_camera(size=24)
        single = Renderer(self.config.model_copy(update={"threads": 1, "ray_chunk_size": 64}))
        pooled = Renderer(self.config.model_copy(update={"threads": 4, "ray_chunk_size": 64}))
        a, b = single.render_image(scene, cam), pooled.render_image(scene, cam)
        identical = all(
            np.array_equal(x, y)
            for x, y in ((a.color.data, b.color.data), (a.depth.data, b.depth.data), (a.normal.data, b.normal.data))
        )
        return identical, "bit-identical across 1 and 4 threads" if identical else "buffers differ"
