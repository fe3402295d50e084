"""Synthetic prompt-tuning testbed.

A frozen random "encoder" task stands in for a pretrained backbone: every
class has a fixed unit direction, image samples are noisy copies of their
class direction, and the classifier scores a sample against per-class
features by temperature-scaled cosine similarity.  Class features are
normalize(mix @ [prompt; class_embedding]), so one small tunable prompt
vector shifts every class feature at once, which is the minimal structure
where prompt tuning can specialize on training (base) classes at the expense
of held-out (new) classes.

Four training modes: plain gradient descent on the prompt; the same with
per-step Gaussian noise; quantization-aware training through the
straight-through estimator with scheduled re-clustering; and post-training
quantization of the finished prompt.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import scheduler as cac
from .errors import BadConfig, NonPositive, ZeroNorm
from .quantizer import Codebook, WeightTensor, compute_stats, fit_codebook, quant_error, quantize
from .ste import NoiseConfig, add_gaussian_noise, noise_generator, ste_backward, ste_forward

MODES = ("baseline", "noise", "qat", "ptq")


@dataclass(frozen=True)
class TaskConfig:
    """Frozen geometry of the synthetic task.

    Class directions are generated through the same prompt-conditioned
    feature map the classifier uses, at a hidden reference prompt: so the
    tunable prompt family genuinely contains the task structure, training on
    base classes has real leverage, and overfitting the finite noisy base
    samples damages the held-out classes.
    """

    dim: int = 64
    n_base: int = 16
    n_new: int = 16
    prompt_dim: int = 64
    samples_per_class: int = 32
    sample_noise: float = 0.25
    prompt_scale: float = 0.8
    hidden_residue: float = 0.1
    spur_frac: float = 0.08
    spur_mult: float = 2.5
    prompt_gain: float = 1.0
    max_abs_cos: float = 0.9
    seed: int = 0


@dataclass(frozen=True)
class ToyTask:
    """Materialized task: directions, mixing matrices, and frozen data splits."""

    cfg: TaskConfig
    class_dirs: np.ndarray      # (n_base + n_new, dim), unit rows
    mix_prompt: np.ndarray      # (dim, prompt_dim)
    embed_feats: np.ndarray     # (n_base + n_new, dim): embedding side of the mix
    gate_feats: np.ndarray      # (n_base + n_new, dim): per-class prompt gates
    hidden_prompt: np.ndarray   # (prompt_dim,) reference prompt behind class_dirs
    train_x: np.ndarray         # (n_base * spc, dim), base classes only
    train_y: np.ndarray         # (n_base * spc,) in [0, n_base)
    test_base_x: np.ndarray
    test_base_y: np.ndarray
    test_new_x: np.ndarray
    test_new_y: np.ndarray      # in [0, n_new)

    @property
    def base_ids(self) -> np.ndarray:
        return np.arange(self.cfg.n_base)

    @property
    def new_ids(self) -> np.ndarray:
        return np.arange(self.cfg.n_base, self.cfg.n_base + self.cfg.n_new)


@dataclass(frozen=True)
class MethodConfig:
    """One training run: mode plus optimization and scheduler settings."""

    mode: str = "baseline"
    bits: int = 1
    noise_std: float = 0.0
    noise_per_step: bool = True
    epochs: int = 50
    lr: float = 2.0
    lr_decay: bool = True
    batch: int = 32
    seed: int = 0
    tau: float = 0.1
    init_std: float = 0.02
    weight_decay: float = 0.0
    warmup_epochs: int = 1
    cac_interval: int = 50
    cac_threshold: float = 0.01
    cac_error_gate: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise BadConfig(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.lr <= 0:
            raise BadConfig(f"lr must be > 0, got {self.lr}")
        if self.tau <= 0:
            raise BadConfig(f"tau must be > 0, got {self.tau}")
        if self.epochs < 1 or self.batch < 1:
            raise BadConfig("epochs and batch must be >= 1")


@dataclass
class TrainReport:
    """Per-epoch metrics for one (task, method, seed) run."""

    mode: str
    bits: int
    seed: int
    epochs: list[int] = field(default_factory=list)
    base_acc: list[float] = field(default_factory=list)
    new_acc: list[float] = field(default_factory=list)
    h_mean: list[float] = field(default_factory=list)
    quant_err: list[float] = field(default_factory=list)
    kld: list[float] = field(default_factory=list)
    recluster_steps: list[int] = field(default_factory=list)
    steps_per_epoch: int = 0
    final_codebook: Codebook | None = None
    snapshots: list[WeightTensor] = field(default_factory=list)


def harmonic_mean(base: float, new: float) -> float:
    """2*base*new / (base + new); both inputs must be strictly positive."""
    if base <= 0 or new <= 0:
        raise NonPositive(f"harmonic mean needs positive inputs, got ({base}, {new})")
    return 2.0 * base * new / (base + new)


def _safe_h(base: float, new: float) -> float:
    return harmonic_mean(base, new) if base > 0 and new > 0 else 0.0


def predict(f_v, class_feats, tau: float) -> np.ndarray:
    """Softmax over cosine similarities divided by tau, for one sample."""
    if tau <= 0:
        raise NonPositive(f"tau must be > 0, got {tau}")
    f = np.asarray(f_v, dtype=np.float64).reshape(-1)
    feats = np.asarray(class_feats, dtype=np.float64)
    fn = np.linalg.norm(f)
    cn = np.linalg.norm(feats, axis=1)
    if fn == 0 or np.any(cn == 0):
        raise ZeroNorm("cosine similarity undefined for zero-norm vectors")
    sims = (feats @ f) / (cn * fn)
    z = sims / tau
    z -= z.max()
    e = np.exp(z)
    return e / e.sum()


def build_task(cfg: TaskConfig) -> ToyTask:
    """Deterministically materialize a task from its config."""
    if cfg.dim < 8:
        raise BadConfig(f"dim must be >= 8, got {cfg.dim}")
    if cfg.n_base < 2 or cfg.n_new < 2:
        raise BadConfig("need at least 2 base and 2 new classes")
    if cfg.samples_per_class < 1 or cfg.prompt_dim < 1:
        raise BadConfig("samples_per_class and prompt_dim must be >= 1")
    rng = np.random.default_rng(cfg.seed)
    n_classes = cfg.n_base + cfg.n_new

    mix_embed = rng.normal(size=(cfg.dim, cfg.dim)) / np.sqrt(cfg.dim)
    mix_gate = rng.normal(size=(cfg.dim, cfg.dim))
    mix_prompt = cfg.prompt_gain * rng.normal(size=(cfg.dim, cfg.prompt_dim)) / np.sqrt(cfg.prompt_dim)
    # Coarse sign structure plus a Gaussian residue: the generalizable part of
    # the reference prompt survives aggressive quantization, the residue is
    # only reachable at higher bit widths.
    raw = rng.choice([-1.0, 1.0], size=cfg.prompt_dim)
    raw += cfg.hidden_residue * rng.normal(size=cfg.prompt_dim)
    hidden = cfg.prompt_scale * raw / np.linalg.norm(raw)
    # Base classes additionally carry dataset-specific prompt structure that
    # new classes do not share: a few large-amplitude coordinates.
    # Specializing into them is what costs generalization, and coarse
    # codebooks cannot represent them.
    spur = np.zeros(cfg.prompt_dim)
    n_spur = int(round(cfg.spur_frac * cfg.prompt_dim))
    if n_spur > 0:
        coord_amp = cfg.prompt_scale / np.sqrt(cfg.prompt_dim)
        where = rng.choice(cfg.prompt_dim, size=n_spur, replace=False)
        spur[where] = cfg.spur_mult * coord_amp * rng.choice([-1.0, 1.0], size=n_spur)
    mapped_base = mix_prompt @ (hidden + spur)
    mapped_new = mix_prompt @ hidden

    dirs = np.zeros((n_classes, cfg.dim))
    embed_feats = np.zeros((n_classes, cfg.dim))
    gate_feats = np.zeros((n_classes, cfg.dim))
    accepted = 0
    attempts = 0
    while accepted < n_classes:
        attempts += 1
        if attempts > 1000 * n_classes:
            raise BadConfig(
                f"could not place {n_classes} directions with |cos| < {cfg.max_abs_cos}"
            )
        embed = rng.normal(size=cfg.dim)
        embed /= np.linalg.norm(embed)
        feat = mix_embed @ embed
        gate = mix_gate @ embed
        mapped = mapped_base if accepted < cfg.n_base else mapped_new
        cand = feat + gate * mapped
        cand = cand / np.linalg.norm(cand)
        if accepted and np.any(np.abs(dirs[:accepted] @ cand) >= cfg.max_abs_cos):
            continue
        dirs[accepted] = cand
        embed_feats[accepted] = feat
        gate_feats[accepted] = gate
        accepted += 1

    def draw(class_ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        reps = np.repeat(class_ids, cfg.samples_per_class)
        x = dirs[reps] + cfg.sample_noise * rng.normal(size=(reps.size, cfg.dim))
        y = np.repeat(np.arange(class_ids.size), cfg.samples_per_class)
        return x, y

    base_ids = np.arange(cfg.n_base)
    new_ids = np.arange(cfg.n_base, n_classes)
    train_x, train_y = draw(base_ids)
    test_base_x, test_base_y = draw(base_ids)
    test_new_x, test_new_y = draw(new_ids)
    return ToyTask(
        cfg=cfg,
        class_dirs=dirs,
        mix_prompt=mix_prompt,
        embed_feats=embed_feats,
        gate_feats=gate_feats,
        hidden_prompt=hidden,
        train_x=train_x,
        train_y=train_y,
        test_base_x=test_base_x,
        test_base_y=test_base_y,
        test_new_x=test_new_x,
        test_new_y=test_new_y,
    )


def _class_features_raw(task: ToyTask, prompt: np.ndarray, class_ids: np.ndarray) -> np.ndarray:
    mapped = task.mix_prompt @ prompt
    return task.embed_feats[class_ids] + task.gate_feats[class_ids] * mapped[None, :]


def _normalize_rows(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms == 0):
        raise ZeroNorm("zero-norm feature vector")
    return m / norms[:, None], norms


def _accuracy(task: ToyTask, prompt: np.ndarray, x: np.ndarray, y: np.ndarray, class_ids: np.ndarray) -> float:
    feats, _ = _normalize_rows(_class_features_raw(task, prompt, class_ids))
    xn, _ = _normalize_rows(x)
    pred = np.argmax(xn @ feats.T, axis=1)
    return float(np.mean(pred == y))


def _ce_gradient(
    task: ToyTask, prompt: np.ndarray, x: np.ndarray, y: np.ndarray, tau: float
) -> np.ndarray:
    """Gradient of the mean cross-entropy over base classes w.r.t. the prompt."""
    class_ids = task.base_ids
    raw = _class_features_raw(task, prompt, class_ids)   # (C, d)
    feats, norms = _normalize_rows(raw)
    xn, _ = _normalize_rows(x)                           # (n, d)
    sims = xn @ feats.T                                  # (n, C)
    z = sims / tau
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    g = p.copy()
    g[np.arange(y.size), y] -= 1.0
    g /= y.size * tau                                    # dL/dsims
    a = g.T @ xn                                         # (C, d): sum_i g_ic * x_i
    b = (g * sims).sum(axis=0)                           # (C,):   sum_i g_ic * s_ic
    du = (a - b[:, None] * feats) / norms[:, None]       # (C, d)
    return task.mix_prompt.T @ (task.gate_feats[class_ids] * du).sum(axis=0)


def _quantized_values(latent: WeightTensor, cb: Codebook) -> np.ndarray:
    return ste_forward(latent, cb).values


def _live_codebook(latent: WeightTensor, cb: Codebook) -> Codebook:
    """Cached normalized-space centers paired with the tensor's current stats.

    Normalization absorbs the scale/offset drift of the training weights so
    the scheduled codebook only has to track distribution shape; without it
    the reconstruction would stay frozen at the scale of the last re-cluster.
    """
    return Codebook(bits=cb.bits, centers=cb.centers, stats=compute_stats(latent))


def train(task: ToyTask, m: MethodConfig) -> TrainReport:
    """Run one training mode end to end; deterministic under (task, m)."""
    cfg = task.cfg
    rng = np.random.default_rng(m.seed)
    prompt = rng.normal(0.0, m.init_std, size=cfg.prompt_dim)
    report = TrainReport(mode=m.mode, bits=m.bits, seed=m.seed)

    noise_cfg = NoiseConfig(std=m.noise_std, seed=m.seed)
    noise_rng = noise_generator(noise_cfg)
    if m.mode == "noise" and not m.noise_per_step and m.noise_std > 0:
        prompt = add_gaussian_noise(WeightTensor(prompt), noise_cfg, noise_rng).values

    # The quantized phase starts from the codebook fit at the end of warm-up,
    # mirroring an initial clustering of pretrained weights; the warm-up
    # itself runs at full precision.
    cb: Codebook | None = None
    state: cac.CACState | None = None
    qat_active = False

    n_train = task.train_x.shape[0]
    steps_per_epoch = (n_train + m.batch - 1) // m.batch
    report.steps_per_epoch = steps_per_epoch
    global_step = 0

    for epoch in range(m.epochs):
        order = rng.permutation(n_train)
        for start in range(0, n_train, m.batch):
            take = order[start : start + m.batch]
            xb, yb = task.train_x[take], task.train_y[take]
            if epoch < m.warmup_epochs:
                frac = (global_step % steps_per_epoch + 1) / steps_per_epoch
                lr_t = m.lr * frac
            elif m.lr_decay:
                total = max(1, (m.epochs - m.warmup_epochs) * steps_per_epoch)
                done = global_step - m.warmup_epochs * steps_per_epoch
                lr_t = m.lr * 0.5 * (1.0 + np.cos(np.pi * done / total))
            else:
                lr_t = m.lr

            if m.mode == "qat" and qat_active:
                wt = WeightTensor(prompt)
                cb = _live_codebook(wt, cb)
                forward_w = _quantized_values(wt, cb)
                grad_q = _ce_gradient(task, forward_w, xb, yb, m.tau)
                grad = ste_backward(grad_q, prompt.size) + m.weight_decay * prompt
                prompt = prompt - lr_t * grad
                wt = WeightTensor(prompt)
                decision, state, cb = cac.step(state, wt, _live_codebook(wt, cb))
                if decision.recluster:
                    report.recluster_steps.append(global_step)
            elif m.mode == "noise" and m.noise_per_step and m.noise_std > 0:
                noisy = add_gaussian_noise(WeightTensor(prompt), noise_cfg, noise_rng).values
                grad = _ce_gradient(task, noisy, xb, yb, m.tau) + m.weight_decay * prompt
                prompt = prompt - lr_t * grad
            else:
                grad = _ce_gradient(task, prompt, xb, yb, m.tau) + m.weight_decay * prompt
                prompt = prompt - lr_t * grad
            global_step += 1

        if m.mode == "qat" and not qat_active and epoch >= m.warmup_epochs - 1:
            wt = WeightTensor(prompt)
            cb = fit_codebook(wt, m.bits)
            state = cac.initial_state(
                wt,
                cb,
                t_min=m.cac_interval,
                kl_threshold=m.cac_threshold,
                error_gate=m.cac_error_gate,
            )
            qat_active = True

        if m.mode == "qat":
            wt = WeightTensor(prompt)
            cb = _live_codebook(wt, cb)
            deliverable = _quantized_values(wt, cb)
            err = quant_error(wt, quantize(wt, cb))
            kld = cac.kl_divergence(cac.index_distribution(wt, cb), state.p_old)
        elif m.mode == "ptq" and epoch == m.epochs - 1:
            cb = fit_codebook(WeightTensor(prompt), m.bits)
            deliverable = _quantized_values(WeightTensor(prompt), cb)
            err = quant_error(WeightTensor(prompt), quantize(WeightTensor(prompt), cb))
            kld = float("nan")
        else:
            deliverable = prompt
            err = float("nan")
            kld = float("nan")

        base = _accuracy(task, deliverable, task.test_base_x, task.test_base_y, task.base_ids)
        new = _accuracy(task, deliverable, task.test_new_x, task.test_new_y, task.new_ids)
        report.epochs.append(epoch)
        report.base_acc.append(base)
        report.new_acc.append(new)
        report.h_mean.append(_safe_h(base, new))
        report.quant_err.append(err)
        report.kld.append(kld)
        report.snapshots.append(WeightTensor(deliverable.copy()))

    report.final_codebook = cb
    return report


def train_many(task: ToyTask, m: MethodConfig, seeds: list[int]) -> list[TrainReport]:
    """One report per seed, in seed order."""
    from dataclasses import replace

    return [train(task, replace(m, seed=s)) for s in seeds]


def mean_curve(reports: list[TrainReport], field_name: str) -> np.ndarray:
    """Mean per-epoch curve across seed reports."""
    return np.mean([getattr(r, field_name) for r in reports], axis=0)
