"""
Desk-scale fitting loop.

Each iteration renders one target view (round robin), scores it with
(1-λ)·L1 + λ·D-SSIM + λ_d·distortion, differentiates the loss over the
active parameter groups by central finite differences and takes one Adam
(or plain gradient) step. Positional-gradient norms feed voxel
registration, which runs on a fixed iteration cadence.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog
from skimage.metrics import structural_similarity

from gvkf.core.exceptions import EmptyInputError, InvalidParameterError, NumericalError, ShapeError
from gvkf.core.gaussian_core import GaussianCloud, inverse_covariances
from gvkf.core.opacity_field import blending_weights
from gvkf.core.renderer import Renderer, RenderOutput
from gvkf.core.voxel_store import SparseVoxelGrid, VoxelEvaluation, decode_voxel_gaussians
from gvkf.models.config import GVKFConfig, LossConfig
from gvkf.models.field import RayField
from gvkf.models.geometry import Camera, ImageBuffer
from gvkf.models.primitives import GaussianPrimitive

logger = structlog.get_logger(__name__)

Target = Tuple[Camera, ImageBuffer]

# Valid ranges parameters are projected back onto after each step
PROJECTIONS = {
    "color": (0.0, 1.0),
    "opacity": (1e-4, 1.0),
    "offset": (-0.5, 0.5),
}


def _pixels(image) -> np.ndarray:
    return image.data if isinstance(image, ImageBuffer) else np.asarray(image, dtype=np.float64)


def _check_pair(rendered: np.ndarray, target: np.ndarray) -> None:
    if rendered.shape != target.shape:
        raise ShapeError(f"image shapes differ: {rendered.shape} vs {target.shape}")


# ============================================================================
# Losses
# ============================================================================


def loss_l1(rendered, target) -> float:
    """Mean absolute per-channel difference."""
    a, b = _pixels(rendered), _pixels(target)
    _check_pair(a, b)
    return float(np.mean(np.abs(a - b)))


def loss_dssim(rendered, target, cfg: Optional[LossConfig] = None) -> float:
    """(1 - SSIM)/2 with a Gaussian window and dynamic range 1."""
    cfg = cfg or LossConfig()
    a, b = _pixels(rendered), _pixels(target)
    _check_pair(a, b)
    if min(a.shape[0], a.shape[1]) < cfg.ssim_window:
        raise ShapeError(f"image {a.shape[1]}x{a.shape[0]} is smaller than the {cfg.ssim_window}px SSIM window")
    ssim = structural_similarity(
        a,
        b,
        win_size=cfg.ssim_window,
        gaussian_weights=True,
        sigma=cfg.ssim_sigma,
        use_sample_covariance=False,
        K1=cfg.ssim_k1,
        K2=cfg.ssim_k2,
        data_range=1.0,
        channel_axis=-1,
    )
    return float(np.clip((1.0 - ssim) / 2.0, 0.0, 1.0))


def loss_depth_distortion(ray_field: RayField) -> float:
    """Σ_{i<j} w_i w_j |t_i - t_j| over the blending weights of one ray."""
    if ray_field.count < 2:
        return 0.0
    weights = blending_weights(ray_field)
    t = ray_field.t
    before_w = np.cumsum(weights) - weights
    before_wt = np.cumsum(weights * t) - weights * t
    return float(max((weights * (t * before_w - before_wt)).sum(), 0.0))


def total_loss(
    rendered: ImageBuffer,
    target: ImageBuffer,
    distortion: float,
    cfg: LossConfig,
) -> float:
    """(1-λ)·L1 + λ·D-SSIM + λ_d·distortion; terms with zero weight are skipped."""
    value = (1.0 - cfg.lambda_dssim) * loss_l1(rendered, target)
    if cfg.lambda_dssim > 0.0:
        value += cfg.lambda_dssim * loss_dssim(rendered, target, cfg)
    if cfg.lambda_dist > 0.0:
        value += cfg.lambda_dist * distortion
    return value


def l1_color_gradient(render: RenderOutput, target) -> np.ndarray:
    """
    Analytic ∂L1/∂color for every primitive of a render.

    Needs ``render.weights`` (render with ``return_weights=True``).

    Returns:
        (primitives, 3) gradient
    """
    if render.weights is None:
        raise InvalidParameterError("render was produced without blending weights")
    rendered, goal = render.color.data, _pixels(target)
    _check_pair(rendered, goal)
    height, width, _ = rendered.shape
    signs = np.sign(rendered - goal).reshape(-1, 3)
    return render.weights.T @ signs / (height * width * 3)


# ============================================================================
# Finite differences and optimizers
# ============================================================================


def central_difference(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    h: float = 1e-4,
    indices: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """
    Gradient of scalar ``f`` at ``x`` by (f(x+h) - f(x-h)) / 2h per entry.

    Args:
        f: Scalar function of an array shaped like x
        x: Evaluation point
        h: Step
        indices: Flat entries to differentiate; the rest stay zero

    Returns:
        Array shaped like x
    """
    if h <= 0.0:
        raise InvalidParameterError("finite-difference step must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = range(x.size) if indices is None else indices
    for i in flat:
        step = np.zeros(x.size)
        step[i] = h
        step = step.reshape(x.shape)
        grad.flat[i] = (f(x + step) - f(x - step)) / (2.0 * h)
    return grad


class Adam:
    """Adam update for one parameter array."""

    def __init__(self, shape: Tuple[int, ...], lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0

    def step(self, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * g
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * g * g
        mhat = self.m / (1.0 - self.beta1 ** (self.t + 1))
        vhat = self.v / (1.0 - self.beta2 ** (self.t + 1))
        self.t += 1
        return x - self.lr * mhat / (np.sqrt(vhat) + self.eps)


class GradientDescent:
    """Plain x - lr·g."""

    def __init__(self, shape: Tuple[int, ...], lr: float):
        self.lr = lr

    def step(self, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        return x - self.lr * g


OPTIMIZERS = {"adam": Adam, "sgd": GradientDescent}


# ============================================================================
# Fitting state and result
# ============================================================================


@dataclass
class FitState:
    """Mutable progress of one fit."""

    iteration: int
    grid: SparseVoxelGrid
    step_sizes: Dict[str, float]
    history: List[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.iteration < 0:
            raise InvalidParameterError("iteration must be non-negative")
        bad = [name for name, lr in self.step_sizes.items() if not lr > 0.0]
        if bad:
            raise InvalidParameterError(f"step sizes must be positive: {bad}")


@dataclass
class FitResult:
    """Fitted grid, raw and cumulative-minimum loss histories, evaluation reports."""

    grid: SparseVoxelGrid
    history: np.ndarray
    smoothed: np.ndarray
    evaluations: List[VoxelEvaluation]

    @property
    def initial_loss(self) -> Optional[float]:
        return float(self.history[0]) if len(self.history) else None

    @property
    def final_loss(self) -> Optional[float]:
        return float(self.history[-1]) if len(self.history) else None


@dataclass
class _Parameters:
    """Trainable arrays of one iteration plus what is needed to rebuild a cloud."""

    values: Dict[str, np.ndarray]
    build: Callable[[Dict[str, np.ndarray]], GaussianCloud]
    active: List[str]
    offset_mask: Optional[np.ndarray] = None
    edges: Optional[np.ndarray] = None
    slots: Optional[np.ndarray] = None


class Trainer:
    """Fits a SparseVoxelGrid to posed target images."""

    def __init__(self, config: Optional[GVKFConfig] = None, loss: Optional[LossConfig] = None):
        self.config = config or GVKFConfig()
        self.loss_cfg = loss or self.config.loss
        self.renderer = Renderer(self.config)
        self.logger = logger.bind(component="trainer")

    # ========================================================================
    # Parameter extraction and write-back
    # ========================================================================

    def _direct_parameters(self, grid: SparseVoxelGrid) -> _Parameters:
        primitives = grid.generate_gaussians()
        if primitives:
            rotations = np.stack([g.rotation for g in primitives])
            scales = np.stack([g.scale for g in primitives])
            values = {
                "position": np.stack([g.position for g in primitives]),
                "opacity": np.array([g.opacity for g in primitives]),
                "color": np.stack([g.color for g in primitives]),
            }
        else:
            rotations, scales = np.zeros((0, 4)), np.zeros((0, 3))
            values = {"position": np.zeros((0, 3)), "opacity": np.zeros(0), "color": np.zeros((0, 3))}
        base = GaussianCloud(
            positions=values["position"],
            inv_cov=inverse_covariances(rotations, scales),
            opacities=values["opacity"],
            colors=values["color"],
            radii=scales.max(axis=1) if len(scales) else np.zeros(0),
            voxel_keys=[g.voxel_key for g in primitives],
        )

        def build(current: Dict[str, np.ndarray]) -> GaussianCloud:
            return replace(
                base,
                positions=current["position"],
                opacities=current["opacity"],
                colors=current["color"],
            )

        return _Parameters(values=values, build=build, active=list(self.config.direct_groups))

    def _neural_parameters(self, grid: SparseVoxelGrid, cam: Camera) -> _Parameters:
        inputs = grid.neural_inputs()
        values = {"feature": inputs["features"], "offset": inputs["offsets"]}

        def decode(current: Dict[str, np.ndarray]):
            return decode_voxel_gaussians(
                grid.decoders,
                inputs["keys"],
                inputs["centers"],
                inputs["edges"],
                current["feature"],
                current["offset"],
                inputs["offset_mask"],
                cam.position,
            )

        return _Parameters(
            values=values,
            build=lambda current: decode(current).to_cloud(),
            active=list(self.config.neural_groups),
            offset_mask=inputs["offset_mask"],
            edges=inputs["edges"],
            slots=decode(values).slots,
        )

    def _write_back(self, grid: SparseVoxelGrid, values: Dict[str, np.ndarray]) -> None:
        if grid.mode == "direct":
            n = 0
            for key in grid.sorted_keys():
                voxel = grid.voxels[key]
                updated = []
                for g in voxel.gaussians:
                    updated.append(
                        GaussianPrimitive(
                            position=values["position"][n],
                            rotation=g.rotation,
                            scale=g.scale,
                            opacity=float(values["opacity"][n]),
                            color=values["color"][n],
                            voxel_key=g.voxel_key,
                        )
                    )
                    n += 1
                voxel.gaussians = updated
            return
        for row, key in enumerate(grid.sorted_keys()):
            voxel = grid.voxels[key]
            voxel.feature = values["feature"][row].copy()
            voxel.offsets = values["offset"][row, : len(voxel.offsets)].copy()

    # ========================================================================
    # Loss evaluation
    # ========================================================================

    def evaluate(
        self,
        cloud: GaussianCloud,
        target: Target,
        extent: float,
        background: np.ndarray,
        return_weights: bool = False,
    ) -> Tuple[float, RenderOutput]:
        cam, image = target
        render = self.renderer.render_image(cloud, cam, background, return_weights=return_weights)
        distortion = float(render.distortion.mean()) / extent
        return total_loss(render.color, image, distortion, self.loss_cfg), render

    # ========================================================================
    # Fit
    # ========================================================================

    def fit(
        self,
        grid: SparseVoxelGrid,
        targets: Sequence[Target],
        iters: int,
        background: Sequence[float] = (0.0, 0.0, 0.0),
    ) -> FitResult:
        """
        Optimize a copy of ``grid`` against ``targets`` for ``iters`` iterations.

        Raises:
            EmptyInputError: No target views
            NumericalError: The loss or a gradient became non-finite
        """
        if not targets:
            raise EmptyInputError("fitting needs at least one target view")
        if iters < 0:
            raise InvalidParameterError("iteration count must be non-negative")
        for cam, image in targets:
            if (image.height, image.width) != (cam.height, cam.width):
                raise ShapeError(
                    f"target image {image.width}x{image.height} does not match camera {cam.width}x{cam.height}"
                )

        cfg = self.config
        bg = np.asarray(background, dtype=np.float64).reshape(3)
        grid = grid.copy()
        state = FitState(iteration=0, grid=grid, step_sizes=cfg.learning_rates())
        optimizers: Dict[str, object] = {}
        evaluations: List[VoxelEvaluation] = []
        extent = self._scene_extent(grid, targets[0][0])

        self.logger.info("Starting fit", iters=iters, views=len(targets), mode=grid.mode, extent=extent)
        for it in range(iters):
            target = targets[it % len(targets)]
            params = (
                self._direct_parameters(grid) if grid.mode == "direct" else self._neural_parameters(grid, target[0])
            )
            cloud = params.build(params.values)
            loss, render = self.evaluate(cloud, target, extent, bg)
            if not np.isfinite(loss):
                raise NumericalError(
                    f"NaN loss at iteration {it} (voxel size {grid.base_voxel_size:g}); "
                    "try a smaller voxel size or step sizes"
                )

            grads = self._gradients(params, target, extent, bg)
            for name, g in grads.items():
                if not np.all(np.isfinite(g)):
                    raise NumericalError(f"NaN loss gradient for {name} at iteration {it}")
                optimizer = optimizers.get(name)
                if optimizer is None or getattr(optimizer, "m", g).shape != g.shape:
                    optimizer = OPTIMIZERS[cfg.optimizer](g.shape, state.step_sizes[name])
                    optimizers[name] = optimizer
                updated = optimizer.step(params.values[name], g)
                if name in PROJECTIONS:
                    updated = np.clip(updated, *PROJECTIONS[name])
                params.values[name] = updated
            self._write_back(grid, params.values)
            self._register(grid, cloud, render, params, grads)

            state.history.append(loss)
            state.iteration = it + 1
            if state.iteration % cfg.log_every == 0:
                self.logger.info("Fit progress", iteration=state.iteration, loss=loss)
            if state.iteration % cfg.evaluation_interval == 0:
                evaluations.append(grid.evaluate_voxels())
                optimizers.clear()

        history = np.asarray(state.history, dtype=np.float64)
        smoothed = np.minimum.accumulate(history) if history.size else history
        if history.size:
            self.logger.info("Fit finished", iterations=iters, initial=history[0], final=history[-1])
        return FitResult(grid=grid, history=history, smoothed=smoothed, evaluations=evaluations)

    def _gradients(
        self,
        params: _Parameters,
        target: Target,
        extent: float,
        background: np.ndarray,
    ) -> Dict[str, np.ndarray]:
        grads: Dict[str, np.ndarray] = {}
        for name in params.active:
            if name not in params.values:
                continue
            x0 = params.values[name]

            def objective(x: np.ndarray, name: str = name) -> float:
                trial = dict(params.values)
                trial[name] = x
                return self.evaluate(params.build(trial), target, extent, background)[0]

            indices = None
            if name == "offset" and params.offset_mask is not None:
                mask = np.repeat(params.offset_mask[:, :, None], 3, axis=2)
                indices = np.flatnonzero(mask)
            grads[name] = central_difference(objective, x0, self.config.fd_step, indices)
        return grads

    def _register(
        self,
        grid: SparseVoxelGrid,
        cloud: GaussianCloud,
        render: RenderOutput,
        params: _Parameters,
        grads: Dict[str, np.ndarray],
    ) -> None:
        keys = cloud.voxel_keys or []
        visible = np.flatnonzero(render.visible)
        visible_keys = {keys[i] for i in visible if keys[i] is not None}

        norms = None
        if "position" in grads:
            norms = np.linalg.norm(grads["position"], axis=1)
        elif "offset" in grads and params.slots is not None and len(params.slots):
            rows, cols = params.slots[:, 0], params.slots[:, 1]
            norms = np.linalg.norm(grads["offset"][rows, cols], axis=1) / params.edges[rows]

        entries = [] if norms is None else [(keys[i], float(norms[i])) for i in visible if keys[i] is not None]
        grid.register_gradients(entries, visible_keys)

    @staticmethod
    def _scene_extent(grid: SparseVoxelGrid, cam: Camera) -> float:
        box = grid.decode(cam).to_cloud().bounds()
        if box is None:
            return 1.0
        extent = float((box[1] - box[0]).max())
        return extent if extent > 0.0 else 1.0


def fit(
    grid: SparseVoxelGrid,
    targets: Sequence[Target],
    iters: int,
    cfg: Optional[LossConfig] = None,
    config: Optional[GVKFConfig] = None,
) -> FitResult:
    return Trainer(config, cfg).fit(grid, targets, iters)
