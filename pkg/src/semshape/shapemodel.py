"""Per-category linear shape models: learning, synthesis, partial-cloud fitting.

A category model is a prototype point set ``c`` (I, 3), a small deformation
basis ``v`` (D, I, 3) and an optional semantic prototype (I, C).  An instance
is synthesized as ``s * (c + sum_i a_i v_i)`` — anisotropic scale applied
after the deformation — with the semantic rows inherited unchanged, so every
reconstruction carries the same per-point descriptors.

Training runs in an auto-decoder regime: per-instance coefficients and scales
are free variables optimized jointly with the shared prototype and basis.
Each epoch freezes nearest-neighbor correspondences, takes analytic gradients
of the resulting quadratic, steps with Adam, and re-pairs.  The basis opens
gradually: the first 30% of epochs train the prototype alone, then one more
basis vector activates every 10%.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import backend
from .cloud import SemanticCloud, Space
from .errors import FormatError, NumericalError
from .geometry import farthest_point_sample, kmeanspp_init

SCALE_MIN = 1e-3
SCALE_MAX = 10.0
INFERENCE_RIDGE = 1e-3  # weight on ||coeffs||^2 when no targets are given


# -------------------------------------------------------------------------
# Types
# -------------------------------------------------------------------------


@dataclass(eq=False)
class LinearShapeModel:
    """Learned category model; arrays are float64 holding float32-exact values
    so that save/load round-trips bit-for-bit."""

    prototype: np.ndarray
    basis: np.ndarray
    semantic_prototype: np.ndarray | None = None
    category_id: str = ""

    def __post_init__(self):
        self.prototype = np.asarray(self.prototype, dtype=np.float64)
        self.basis = np.asarray(self.basis, dtype=np.float64)
        if self.prototype.ndim != 2 or self.prototype.shape[1] != 3:
            raise ValueError(f"prototype must be (I, 3), got {self.prototype.shape}")
        if self.basis.ndim != 3 or self.basis.shape[1:] != self.prototype.shape:
            raise ValueError(
                f"basis must be (D, I, 3) matching prototype, got {self.basis.shape}"
            )
        if not np.all(np.isfinite(self.prototype)) or not np.all(np.isfinite(self.basis)):
            raise ValueError("model arrays contain non-finite values")
        if self.point_count < self.basis_dim:
            raise ValueError(
                f"prototype has {self.point_count} points < basis dim {self.basis_dim}"
            )
        for i in range(self.basis_dim):
            for j in range(i + 1, self.basis_dim):
                if np.array_equal(self.basis[i], self.basis[j]):
                    raise ValueError(f"basis vectors {i} and {j} are identical")
        if self.semantic_prototype is not None:
            sem = np.asarray(self.semantic_prototype, dtype=np.float64)
            if sem.ndim != 2 or sem.shape[0] != self.point_count:
                raise ValueError(
                    f"semantic prototype must be ({self.point_count}, C), got {sem.shape}"
                )
            if not np.all(np.isfinite(sem)):
                raise ValueError("semantic prototype contains non-finite values")
            self.semantic_prototype = sem

    @property
    def point_count(self) -> int:
        return self.prototype.shape[0]

    @property
    def basis_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def semantic_dim(self) -> int:
        return 0 if self.semantic_prototype is None else self.semantic_prototype.shape[1]

    def with_semantics(self, semantic_prototype) -> "LinearShapeModel":
        """Copy of the model carrying the given semantic prototype (values
        quantized to the float32 file grid)."""
        sem = np.float64(np.float32(np.asarray(semantic_prototype)))
        return LinearShapeModel(self.prototype, self.basis, sem, self.category_id)


@dataclass
class ShapeParams:
    """Per-instance latent state: basis coefficients and anisotropic scale."""

    coeffs: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64).reshape(-1)
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("coeffs contain non-finite values")
        if not np.all(np.isfinite(self.scale)):
            raise ValueError("scale contains non-finite values")
        if np.any(self.scale <= 0) or np.any(self.scale > SCALE_MAX):
            raise ValueError(f"scale components must lie in (0, {SCALE_MAX}], got {self.scale}")

    @staticmethod
    def neutral(basis_dim: int) -> "ShapeParams":
        return ShapeParams(np.zeros(basis_dim), np.ones(3))


@dataclass
class TrainConfig:
    """Knobs for stage-1 training and stage-2 fitting."""

    basis_dim: int = 5
    prototype_points: int = 1024
    epochs: int = 1000
    learning_rate: float = 1e-3
    lambda_cd: float = 1.0
    lambda_para: float = 0.1
    lambda1: float = 1.0
    lambda2: float = 0.1
    curriculum_schedule: list[tuple[int, int]] | None = None
    augment_rot_max_deg: float = 20.0
    augment_prob: float = 0.5
    fit_iters: int = 300
    k_agg: int = 200
    resample_points: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.basis_dim < 1:
            raise ValueError("basis_dim must be >= 1")
        if self.prototype_points < self.basis_dim:
            raise ValueError("prototype_points must be >= basis_dim")
        if self.epochs < 1 or self.fit_iters < 1:
            raise ValueError("epochs and fit_iters must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        for name in ("lambda_cd", "lambda_para", "lambda1", "lambda2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0 <= self.augment_prob <= 1:
            raise ValueError("augment_prob must be in [0, 1]")
        if self.k_agg < 1:
            raise ValueError("k_agg must be >= 1")

    def schedule(self) -> list[tuple[int, int]]:
        """Curriculum as (first epoch, active basis count) rows."""
        if self.curriculum_schedule is not None:
            sched = [(int(e), int(a)) for e, a in self.curriculum_schedule]
        else:
            start = int(round(0.3 * self.epochs))
            step = max(1, int(round(0.1 * self.epochs)))
            sched = [(0, 0)] + [(start + j * step, j + 1) for j in range(self.basis_dim)]
        sched.sort()
        if sched[0][0] != 0:
            sched.insert(0, (0, 0))
        prev = 0
        for _, active in sched:
            if not 0 <= active <= self.basis_dim:
                raise ValueError(f"curriculum activates {active} of {self.basis_dim} vectors")
            if active < prev:
                raise ValueError("curriculum counts must be non-decreasing")
            prev = active
        return sched

    def active_basis_at(self, epoch: int) -> int:
        active = 0
        for start, count in self.schedule():
            if epoch >= start:
                active = count
        return active


@dataclass
class TrainResult:
    model: LinearShapeModel
    params: list[ShapeParams]
    final_cds: list[float]
    history: np.ndarray = field(repr=False)  # rows: (epoch, active_basis, mean_cd)


@dataclass
class PartialFit:
    """Outcome of fitting a partial observation."""

    params: ShapeParams
    reconstruction: SemanticCloud
    offset: np.ndarray  # translation aligning the partial into the model frame
    converged: bool
    final_cd: float
    iterations: int


# -------------------------------------------------------------------------
# Synthesis
# -------------------------------------------------------------------------


def synthesize(model: LinearShapeModel, params: ShapeParams) -> SemanticCloud:
    """Instantiate the model: scale * (prototype + coeffs . basis), semantic
    rows copied through untouched."""
    if params.coeffs.shape[0] != model.basis_dim:
        raise ValueError(
            f"params have {params.coeffs.shape[0]} coeffs, model expects {model.basis_dim}"
        )
    base = model.prototype + np.tensordot(params.coeffs, model.basis, axes=1)
    points = params.scale * base
    desc = None
    if model.semantic_prototype is not None:
        desc = model.semantic_prototype.copy()
    return SemanticCloud(points, desc, Space.NOCS)


def transfer_semantics(model: LinearShapeModel, params: ShapeParams) -> SemanticCloud:
    """Synthesize with semantics required (see :mod:`semshape.semantics`)."""
    if model.semantic_prototype is None:
        raise ValueError("model has no semantic prototype; build one first")
    return synthesize(model, params)


# -------------------------------------------------------------------------
# Optimizer
# -------------------------------------------------------------------------


class _Adam:
    """Plain Adam on a numpy array parameter."""

    def __init__(self, shape, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0

    def step(self, grad: np.ndarray) -> np.ndarray:
        """Return the update to subtract from the parameter."""
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# -------------------------------------------------------------------------
# Stage 1: category training
# -------------------------------------------------------------------------


def train_category_model(
    instances: list[SemanticCloud],
    cfg: TrainConfig,
    category_id: str = "",
) -> TrainResult:
    """Learn prototype + basis from complete normalized instances.

    Objective: sum over instances of the symmetric squared Chamfer distance
    (mean form) between the instance and its synthesized counterpart.
    Correspondences are frozen per epoch and re-paired after every step.
    """
    if len(instances) < 2:
        raise ValueError(f"need at least 2 instances, got {len(instances)}")
    clouds = []
    for i, inst in enumerate(instances):
        inst.require_nonempty("train_category_model")
        if cfg.resample_points is not None and len(inst) > cfg.resample_points:
            inst = farthest_point_sample(inst, cfg.resample_points, seed=cfg.seed + i)
        if len(inst) < cfg.prototype_points:
            raise ValueError(
                f"instance {i} has {len(inst)} points < prototype size "
                f"{cfg.prototype_points}; cannot train"
            )
        clouds.append(np.ascontiguousarray(inst.points))

    n_inst = len(clouds)
    big_i = cfg.prototype_points
    dim = cfg.basis_dim
    rng = np.random.Generator(np.random.PCG64(cfg.seed))

    prototype = kmeanspp_init(clouds, big_i, seed=cfg.seed)
    basis = rng.normal(0.0, 1e-3, size=(dim, big_i, 3))
    coeffs = np.zeros((n_inst, dim))
    scales = np.ones((n_inst, 3))

    opt_proto = _Adam(prototype.shape, cfg.learning_rate)
    opt_basis = _Adam(basis.shape, cfg.learning_rate)
    opt_coeff = _Adam(coeffs.shape, cfg.learning_rate)
    opt_scale = _Adam(scales.shape, cfg.learning_rate)

    history = np.zeros((cfg.epochs, 3))
    for epoch in range(cfg.epochs):
        active = cfg.active_basis_at(epoch)
        g_proto = np.zeros_like(prototype)
        g_basis = np.zeros_like(basis)
        g_coeff = np.zeros_like(coeffs)
        g_scale = np.zeros_like(scales)
        total = 0.0
        for i in range(n_inst):
            data = clouds[i]
            n_pts = data.shape[0]
            if active > 0:
                deform = prototype + np.tensordot(coeffs[i, :active], basis[:active], axes=1)
            else:
                deform = prototype
            synth = scales[i] * deform
            idx_sp, sq_sp, idx_ps, sq_ps = backend.nearest_both(synth, data)
            total += sq_sp.mean() + sq_ps.mean()

            g_x = (2.0 / big_i) * (synth - data[idx_sp])
            res = synth[idx_ps] - data
            np.add.at(g_x, idx_ps, (2.0 / n_pts) * res)

            g_y = g_x * scales[i]
            g_proto += g_y
            g_scale[i] = np.einsum("ij,ij->j", g_x, deform)
            if active > 0:
                g_basis[:active] += coeffs[i, :active, None, None] * g_y
                g_coeff[i, :active] = np.einsum("kij,ij->k", basis[:active], g_y)

        mean_cd = total / n_inst
        if not np.isfinite(mean_cd):
            raise NumericalError(f"training loss became non-finite at epoch {epoch}")
        history[epoch] = (epoch, active, mean_cd)

        prototype -= opt_proto.step(g_proto)
        basis -= opt_basis.step(g_basis)
        coeffs -= opt_coeff.step(g_coeff)
        scales -= opt_scale.step(g_scale)
        np.clip(scales, SCALE_MIN, SCALE_MAX, out=scales)

    # quantize to the float32 file grid so saved bytes equal in-memory state
    prototype = np.float64(np.float32(prototype))
    basis = np.float64(np.float32(basis))
    model = LinearShapeModel(prototype, basis, None, category_id)

    params = []
    final_cds = []
    for i in range(n_inst):
        p = ShapeParams(coeffs[i], scales[i])
        params.append(p)
        synth = synthesize(model, p).points
        _, sq_sp, _, sq_ps = backend.nearest_both(synth, clouds[i])
        final_cds.append(float(sq_sp.mean() + sq_ps.mean()))
    return TrainResult(model, params, final_cds, history)


# -------------------------------------------------------------------------
# Stage 2: fitting a partial observation
# -------------------------------------------------------------------------


def fit_partial(
    model: LinearShapeModel,
    partial: SemanticCloud,
    cfg: TrainConfig | None = None,
    targets: ShapeParams | None = None,
) -> PartialFit:
    """Recover instance params from a centered partial observation.

    Minimizes ``lambda_cd *`` one-sided squared Chamfer (partial into the
    synthesized cloud) plus, with ``targets``, ``lambda_para * (lambda1
    |a - a_bar|_1 + lambda2 |s - s_bar|_1)``; without targets a small ridge
    on the coefficients keeps the fit near the prototype manifold.  A free
    translation offset between the partial and the model frame is optimized
    alongside (partial centroids are biased under occlusion); the returned
    reconstruction stays in the model frame.  If the loss stops improving
    for a patience window the best-so-far state is returned with
    ``converged=False``.
    """
    cfg = cfg or TrainConfig()
    partial.require_nonempty("fit_partial")
    if targets is not None and targets.coeffs.shape[0] != model.basis_dim:
        raise ValueError("target params do not match model basis dimension")

    data = np.ascontiguousarray(partial.points)
    n_pts = data.shape[0]
    dim = model.basis_dim
    proto = model.prototype
    basis = model.basis

    a = np.zeros(dim)
    s = np.ones(3)
    delta = np.zeros(3)
    opt_a = _Adam(a.shape, cfg.learning_rate)
    opt_s = _Adam(s.shape, cfg.learning_rate)
    opt_d = _Adam(delta.shape, cfg.learning_rate)

    best = (np.inf, a.copy(), s.copy(), delta.copy(), 0)
    patience = 100
    diverged = False
    it = 0
    for it in range(1, cfg.fit_iters + 1):
        deform = proto + np.tensordot(a, basis, axes=1)
        synth = s * deform
        shifted = data - delta
        idx, sqd = backend.nearest_neighbors(shifted, synth)
        cd = sqd.mean()

        loss = cfg.lambda_cd * cd
        if targets is not None:
            loss += cfg.lambda_para * (
                cfg.lambda1 * np.abs(a - targets.coeffs).sum()
                + cfg.lambda2 * np.abs(s - targets.scale).sum()
            )
        else:
            loss += INFERENCE_RIDGE * float(a @ a)
        if not np.isfinite(loss):
            diverged = True
            break

        if loss < best[0]:
            best = (loss, a.copy(), s.copy(), delta.copy(), it)
        elif it - best[4] > patience:
            diverged = True
            break

        res = shifted - synth[idx]  # (N, 3)
        w = cfg.lambda_cd * 2.0 / n_pts
        g_x = np.zeros_like(synth)
        np.add.at(g_x, idx, -w * res)
        g_delta = -w * res.sum(axis=0)
        g_s = np.einsum("ij,ij->j", g_x, deform)
        g_a = np.einsum("kij,ij->k", basis, g_x * s)
        if targets is not None:
            g_a += cfg.lambda_para * cfg.lambda1 * np.sign(a - targets.coeffs)
            g_s += cfg.lambda_para * cfg.lambda2 * np.sign(s - targets.scale)
        else:
            g_a += 2.0 * INFERENCE_RIDGE * a

        a -= opt_a.step(g_a)
        s -= opt_s.step(g_s)
        delta -= opt_d.step(g_delta)
        np.clip(s, SCALE_MIN, SCALE_MAX, out=s)

    _, a_best, s_best, d_best, _ = best
    if not np.isfinite(best[0]):
        raise NumericalError("partial fit never reached a finite loss")
    params = ShapeParams(a_best, s_best)
    recon = synthesize(model, params)
    _, sqd = backend.nearest_neighbors(data - d_best, recon.points)
    return PartialFit(
        params=params,
        reconstruction=recon,
        offset=d_best,
        converged=not diverged,
        final_cd=float(sqd.mean()),
        iterations=it,
    )


# -------------------------------------------------------------------------
# Rotation augmentation (stage-2 robustness utility)
# -------------------------------------------------------------------------


def augment_partial(
    cloud: SemanticCloud,
    max_deg: float = 20.0,
    prob: float = 0.5,
    seed: int = 0,
) -> SemanticCloud:
    """With probability ``prob`` rotate the cloud by per-axis angles drawn
    uniformly from [0, max_deg] degrees (composed X, then Y, then Z)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    if rng.random() >= prob:
        return cloud
    ang = np.radians(rng.uniform(0.0, max_deg, size=3))
    cx, sx = np.cos(ang[0]), np.sin(ang[0])
    cy, sy = np.cos(ang[1]), np.sin(ang[1])
    cz, sz = np.cos(ang[2]), np.sin(ang[2])
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    rot = rz @ ry @ rx
    desc = None if cloud.descriptors is None else cloud.descriptors.copy()
    return SemanticCloud(cloud.points @ rot.T, desc, cloud.space)


# -------------------------------------------------------------------------
# Model files (.dlsm)
# -------------------------------------------------------------------------

DLSM_MAGIC = b"DLSM"


def save_model(path, model: LinearShapeModel) -> None:
    """Binary layout: magic, u32 I, u32 D, u32 C (0 when no semantics), then
    prototype / basis / semantic arrays as row-major little-endian float32,
    then a u32-length-prefixed UTF-8 category id."""
    cat = model.category_id.encode("utf-8")
    parts = [
        DLSM_MAGIC,
        struct.pack("<III", model.point_count, model.basis_dim, model.semantic_dim),
        np.ascontiguousarray(model.prototype, dtype="<f4").tobytes(),
        np.ascontiguousarray(model.basis, dtype="<f4").tobytes(),
    ]
    if model.semantic_prototype is not None:
        parts.append(np.ascontiguousarray(model.semantic_prototype, dtype="<f4").tobytes())
    parts.append(struct.pack("<I", len(cat)))
    parts.append(cat)
    Path(path).write_bytes(b"".join(parts))


def load_model(path) -> LinearShapeModel:
    blob = Path(path).read_bytes()
    if len(blob) < 16:
        raise FormatError(f"{path}: truncated header", offset=len(blob))
    if blob[:4] != DLSM_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}", offset=0)
    big_i, dim, sem_c = struct.unpack("<III", blob[4:16])
    pos = 16

    def take(count: int, what: str) -> np.ndarray:
        nonlocal pos
        nbytes = 4 * count
        if len(blob) < pos + nbytes:
            raise FormatError(f"{path}: truncated while reading {what}", offset=len(blob))
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=pos)
        pos += nbytes
        return arr.astype(np.float64)

    prototype = take(big_i * 3, "prototype").reshape(big_i, 3)
    basis = take(dim * big_i * 3, "basis").reshape(dim, big_i, 3)
    semantic = None
    if sem_c:
        semantic = take(big_i * sem_c, "semantic prototype").reshape(big_i, sem_c)

    category = ""
    if pos < len(blob):
        if len(blob) < pos + 4:
            raise FormatError(f"{path}: truncated category id length", offset=len(blob))
        (cat_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        if len(blob) < pos + cat_len:
            raise FormatError(f"{path}: truncated category id", offset=len(blob))
        category = blob[pos : pos + cat_len].decode("utf-8")
        pos += cat_len

    arrays = [prototype, basis] + ([semantic] if semantic is not None else [])
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"{path}: non-finite values in model arrays", offset=pos)
    try:
        return LinearShapeModel(prototype, basis, semantic, category)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
