"""Training loop: cluster, probe prototypes, self-distill, EMA teacher.

Each epoch re-clusters the unlabelled features, rebuilds the prototype
buffers with the fresh centers plus the persistent potential pool, then
runs mini-batch SGD on the student while the teacher trails it by an
exponential moving average. Everything is seeded; two runs with the same
seeds produce identical parameter trajectories and metrics (timing
fields aside).
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .datagen import augment
from .errors import (
    ConfigurationError,
    ContractViolation,
    DegenerateInputError,
    NumericDivergenceError,
    ParameterError,
)
from .fastcluster import estimate_k
from .numerics import GradientTape, l2_normalize_rows, l2_normalize_rows_vjp
from .objectives import (
    combine,
    loss_crl,
    loss_cru,
    loss_sup,
    loss_unsup,
    prediction_backward,
    student_predict,
    teacher_predict,
)
from .prototypes import MemoryBuffer, PrototypeBank, init_buffers, write_back

_ENCODER_KEYS = ("enc_w1", "enc_b1", "enc_w2", "enc_b2")
_HEAD_KEYS = ("head_w1", "head_b1", "head_w2", "head_b2", "head_w3", "head_b3")


# ---------------------------------------------------------------------------
# schedules

def omega_schedule(t, total, omega_min, omega_max, corrected=True):
    """EMA momentum ramp: cosine from omega_max-(1-omega_min) up to omega_max.

    The uncorrected variant keeps the "+1" inside the cosine argument;
    it is retained only for auditing since it exceeds 1 late in training.
    """
    if total <= 0:
        raise ParameterError(f"total epochs must be > 0, got {total}")
    if not 0.0 < omega_min <= omega_max <= 1.0:
        raise ParameterError(
            f"need 0 < omega_min <= omega_max <= 1, got {omega_min}, {omega_max}"
        )
    if t < 0 or t > total:
        raise ParameterError(f"epoch {t} outside [0, {total}]")
    x = math.pi * t / total
    if corrected:
        return omega_max - (1.0 - omega_min) * (math.cos(x) + 1.0) / 2.0
    return omega_max - (1.0 - omega_min) * math.cos(x + 1.0) / 2.0


def lr_schedule(step, total_steps, lr0):
    """Cosine decay from lr0 at step 0 to 0 at the final step."""
    if total_steps <= 0:
        raise ParameterError(f"total_steps must be > 0, got {total_steps}")
    if step < 0 or step > total_steps:
        raise ParameterError(f"step {step} outside [0, {total_steps}]")
    return lr0 * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0


def tau_t_schedule(epoch, start=0.07, end=0.04, warmup_epochs=30):
    """Teacher temperature: cosine warm-up from ``start`` to ``end``."""
    if warmup_epochs <= 0:
        raise ParameterError(f"warmup_epochs must be > 0, got {warmup_epochs}")
    if epoch < 0:
        raise ParameterError(f"epoch must be >= 0, got {epoch}")
    t = min(epoch, warmup_epochs)
    return end + (start - end) * (math.cos(math.pi * t / warmup_epochs) + 1.0) / 2.0


def ema_update(target, source, omega):
    """In-place convex blend target <- omega*target + (1-omega)*source.

    Accepts matching dicts of arrays or a pair of arrays; returns target.
    """
    if not 0.0 <= omega <= 1.0:
        raise ParameterError(f"omega must lie in [0, 1], got {omega}")
    if isinstance(target, dict) != isinstance(source, dict):
        raise ContractViolation("ema_update needs two dicts or two arrays")
    if isinstance(target, dict) and set(target) != set(source):
        raise ContractViolation("ema_update dicts carry different parameters")
    pairs = (
        [(target[k], source[k]) for k in target]
        if isinstance(target, dict)
        else [(target, source)]
    )
    for t_arr, s_arr in pairs:
        if t_arr.shape != s_arr.shape:
            raise ContractViolation(
                f"ema shape mismatch: {t_arr.shape} vs {s_arr.shape}"
            )
        t_arr *= omega
        t_arr += (1.0 - omega) * s_arr
    return target


# ---------------------------------------------------------------------------
# configuration

@dataclass
class TrainConfig:
    """Hyper-parameters; defaults follow the experimental protocol."""

    tau: float = 0.1
    tau_t_start: float = 0.07
    tau_t_end: float = 0.04
    tau_t_warmup_epochs: int = 30
    tau_r: float = 1.0
    tau_f: float = 0.6
    gamma: float = 2.0
    alpha1: float = 0.65
    beta1: float = 0.35
    omega_min: float = 0.7
    omega_max: float = 0.99
    epochs: int = 200
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    buffer_multiplier: int = 4
    knn_k: int = 10
    num_restarts: int = 8
    encoder_hidden: int = 64
    head_hidden: int = 64
    out_dim: int = 16
    aug_noise_sd: float = 0.05
    aug_dropout_p: float = 0.1
    seed: int = 0
    normalize_features: bool = True
    cross_view_denominator: bool = False
    printed_omega: bool = False
    train_last_layer_only: bool = False
    potential_prototypes: bool = True
    frozen_potential: bool = False
    checkpoint_every: int = 0
    divergence_threshold: float = 1e6

    def __post_init__(self):
        for name in ("tau", "tau_t_start", "tau_t_end", "tau_r"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be > 0")
        if not 0.0 < self.omega_min <= self.omega_max <= 1.0:
            raise ConfigurationError(
                "need 0 < omega_min <= omega_max <= 1, got "
                f"{self.omega_min}, {self.omega_max}"
            )
        for name in ("alpha1", "beta1"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1]")
        if self.gamma < 0:
            raise ConfigurationError("gamma must be >= 0")
        for name in ("epochs", "batch_size", "buffer_multiplier", "knn_k",
                     "num_restarts", "encoder_hidden", "head_hidden",
                     "out_dim", "tau_t_warmup_epochs"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be >= 2")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError("momentum must lie in [0, 1)")
        if self.lr < 0:
            raise ConfigurationError("lr must be >= 0")


# ---------------------------------------------------------------------------
# prober: encoder + projection head with hand-rolled backward passes

def _affine(rng, n_out, n_in):
    return rng.standard_normal((n_out, n_in)) / math.sqrt(n_in)


def init_prober(in_dim, config, seed):
    """Fresh encoder + head parameters; biases are (1, n) rows."""
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 11)))
    h, hh, d = config.encoder_hidden, config.head_hidden, config.out_dim
    return {
        "enc_w1": _affine(rng, h, in_dim),
        "enc_b1": np.zeros((1, h)),
        "enc_w2": _affine(rng, d, h),
        "enc_b2": np.zeros((1, d)),
        "head_w1": _affine(rng, hh, d),
        "head_b1": np.zeros((1, hh)),
        "head_w2": _affine(rng, hh, hh),
        "head_b2": np.zeros((1, hh)),
        "head_w3": _affine(rng, d, hh),
        "head_b3": np.zeros((1, d)),
    }


def encoder_forward(params, x):
    """Returns (v_normalized, v_raw, cache)."""
    x = np.asarray(x, dtype=np.float64)
    h = np.tanh(x @ params["enc_w1"].T + params["enc_b1"])
    v_raw = h @ params["enc_w2"].T + params["enc_b2"]
    v = l2_normalize_rows(v_raw)
    return v, v_raw, (x, h, v_raw)


def encoder_backward(params, cache, grad_v, tape, grad_v_raw=None):
    """Accumulate encoder gradients given adjoints at v and/or v_raw."""
    x, h, v_raw = cache
    g_raw = np.zeros_like(v_raw)
    if grad_v is not None:
        g_raw += l2_normalize_rows_vjp(v_raw, grad_v)
    if grad_v_raw is not None:
        g_raw += grad_v_raw
    tape.accumulate("enc_w2", g_raw.T @ h)
    tape.accumulate("enc_b2", g_raw.sum(axis=0, keepdims=True))
    g_h = (g_raw @ params["enc_w2"]) * (1.0 - h * h)
    tape.accumulate("enc_w1", g_h.T @ x)
    tape.accumulate("enc_b1", g_h.sum(axis=0, keepdims=True))


def head_forward(params, v):
    """Projection head: three affine layers, unit-normalized output."""
    t1 = np.tanh(v @ params["head_w1"].T + params["head_b1"])
    t2 = np.tanh(t1 @ params["head_w2"].T + params["head_b2"])
    z_raw = t2 @ params["head_w3"].T + params["head_b3"]
    z = l2_normalize_rows(z_raw)
    return z, (v, t1, t2, z_raw)


def head_backward(params, cache, grad_z, tape):
    """Accumulate head gradients; returns the adjoint at the head input."""
    v, t1, t2, z_raw = cache
    g3 = l2_normalize_rows_vjp(z_raw, grad_z)
    tape.accumulate("head_w3", g3.T @ t2)
    tape.accumulate("head_b3", g3.sum(axis=0, keepdims=True))
    g2 = (g3 @ params["head_w3"]) * (1.0 - t2 * t2)
    tape.accumulate("head_w2", g2.T @ t1)
    tape.accumulate("head_b2", g2.sum(axis=0, keepdims=True))
    g1 = (g2 @ params["head_w2"]) * (1.0 - t1 * t1)
    tape.accumulate("head_w1", g1.T @ v)
    tape.accumulate("head_b1", g1.sum(axis=0, keepdims=True))
    return g1 @ params["head_w1"]


# ---------------------------------------------------------------------------
# state

@dataclass
class TrainState:
    """Mutable training state owned by a single logical thread."""

    config: TrainConfig
    student: dict
    teacher: dict
    bank: PrototypeBank
    label_map: dict
    velocity: dict = field(default_factory=dict)
    epoch: int = 0
    global_step: int = 0
    steps_per_epoch: int = 0
    m_s: MemoryBuffer = None
    m_t: MemoryBuffer = None
    last_result: object = None
    last_tape: object = None

    @property
    def mu_l(self):
        return self.bank.labelled_protos


def _seed_mix(seed, *parts):
    out = int(seed) & 0xFFFFFFFF
    for p in parts:
        out = (out * 1000003 + int(p)) & 0xFFFFFFFFFFFFFFFF
    return out


def init_state(dataset, config):
    """Build student/teacher parameters and the prototype bank."""
    if dataset.num_labelled == 0 or dataset.num_unlabelled == 0:
        raise DegenerateInputError("training needs labelled and unlabelled data")
    student = init_prober(dataset.dim, config, config.seed)
    teacher = {k: student[k].copy() for k in _ENCODER_KEYS}
    bank = PrototypeBank(
        num_labelled_classes=len(dataset.old_classes),
        dim=config.out_dim,
        buffer_multiplier=config.buffer_multiplier,
        seed=_seed_mix(config.seed, 23),
    )
    label_map = {c: i for i, c in enumerate(sorted(dataset.old_classes))}
    velocity = {k: np.zeros_like(v) for k, v in student.items()}
    velocity["mu_l"] = np.zeros_like(bank.labelled_protos)
    return TrainState(
        config=config,
        student=student,
        teacher=teacher,
        bank=bank,
        label_map=label_map,
        velocity=velocity,
    )


def _augment_rows(x, row_ids, config, epoch):
    v1 = np.empty_like(x)
    v2 = np.empty_like(x)
    for r, gid in enumerate(row_ids):
        pair = augment(
            x[r], config.aug_noise_sd, config.aug_dropout_p,
            (config.seed, epoch, int(gid)),
        )
        v1[r] = pair.view1
        v2[r] = pair.view2
    return v1, v2


def _encode_all(params, x):
    v, _, _ = encoder_forward(params, x)
    return v


def _buffers_for_epoch(bank, k_e, epoch, config):
    if config.potential_prototypes:
        return init_buffers(bank, k_e, epoch)
    slots = bank.cluster_protos.copy()
    return (
        MemoryBuffer(slots.copy(), k_e, epoch, "student"),
        MemoryBuffer(slots.copy(), k_e, epoch, "teacher"),
    )


def _train_step(state, x1, x2, labels_row, lab_mask, epoch, lr):
    """One mini-batch: forward, losses, backward, SGD + EMA updates.

    ``labels_row`` carries mapped class indices with -1 on unlabelled
    rows. Returns the LossBreakdown.
    """
    cfg = state.config
    student = state.student
    unlab = ~lab_mask

    v1, v1_raw, cache1 = encoder_forward(student, x1)
    v2, v2_raw, cache2 = encoder_forward(student, x2)
    z1, hcache1 = head_forward(student, v1)
    z2, hcache2 = head_forward(student, v2)
    feat1 = v1 if cfg.normalize_features else v1_raw

    v2t, v2t_raw, _ = encoder_forward(state.teacher, x2)
    feat2t = v2t if cfg.normalize_features else v2t_raw

    tau_t = tau_t_schedule(
        epoch, cfg.tau_t_start, cfg.tau_t_end, cfg.tau_t_warmup_epochs
    )
    pred_s = student_predict(feat1[unlab], state.m_s.slots, cfg.tau)
    pred_t = teacher_predict(feat2t[unlab], state.m_t.slots, tau_t)

    l_cru, g_logits, reg = loss_cru(pred_s, pred_t, cfg.gamma)
    l_crl, g_crl_v, g_mu_l = loss_crl(
        feat1[lab_mask], labels_row[lab_mask], state.mu_l, cfg.tau
    )
    l_sup, g_z1_sup = loss_sup(z1, labels_row, cfg.tau_r)
    l_unsup, g_z1_uns, g_z2_uns = loss_unsup(
        z1, z2, cfg.tau_r, cfg.cross_view_denominator
    )
    breakdown = combine(
        l_cru, l_crl, l_sup, l_unsup, cfg.alpha1, cfg.beta1, regularizer=reg
    )
    if not math.isfinite(breakdown.total) \
            or abs(breakdown.total) > cfg.divergence_threshold:
        err = NumericDivergenceError(
            f"loss diverged at epoch {epoch} step {state.global_step}: "
            f"{breakdown.as_dict()}"
        )
        err.snapshot = {
            "epoch": epoch,
            "step": state.global_step,
            **breakdown.as_dict(),
        }
        raise err

    tape = GradientTape()
    g_feat1 = np.zeros_like(feat1)
    gv, gm = prediction_backward(pred_s, g_logits)
    g_feat1[unlab] += cfg.alpha1 * gv
    tape.accumulate("m_s", cfg.alpha1 * gm)
    g_feat1[lab_mask] += (1.0 - cfg.alpha1) * g_crl_v
    tape.accumulate("mu_l", (1.0 - cfg.alpha1) * g_mu_l)

    g_z1 = cfg.beta1 * g_z1_sup + (1.0 - cfg.beta1) * g_z1_uns
    g_z2 = (1.0 - cfg.beta1) * g_z2_uns
    g_v1_head = head_backward(student, hcache1, g_z1, tape)
    g_v2_head = head_backward(student, hcache2, g_z2, tape)

    if cfg.normalize_features:
        encoder_backward(student, cache1, g_feat1 + g_v1_head, tape)
    else:
        encoder_backward(student, cache1, g_v1_head, tape, grad_v_raw=g_feat1)
    encoder_backward(student, cache2, g_v2_head, tape)

    if cfg.train_last_layer_only:
        for name in ("enc_w1", "enc_b1"):
            if name in tape:
                tape.get(name)[:] = 0.0
    if cfg.frozen_potential and "m_s" in tape:
        tape.get("m_s")[state.m_s.k_e:] = 0.0

    params = dict(student)
    params["m_s"] = state.m_s.slots
    params["mu_l"] = state.mu_l
    for name, grad in tape.items():
        vel = state.velocity[name]
        vel *= cfg.momentum
        vel += grad
        params[name] -= lr * vel

    omega = omega_schedule(
        epoch, cfg.epochs, cfg.omega_min, cfg.omega_max,
        corrected=not cfg.printed_omega,
    )
    ema_update(state.teacher, {k: student[k] for k in _ENCODER_KEYS}, omega)
    ema_update(state.m_t.slots, state.m_s.slots, omega)

    state.last_tape = tape
    state.global_step += 1
    return breakdown


def train_epoch(state, dataset, config=None, epoch=None):
    """One full pass: cluster, rebuild buffers, optimize, hand back pool.

    Returns a metrics dict (losses averaged over the epoch's steps,
    cluster count, schedule values, timings).
    """
    cfg = config if config is not None else state.config
    ep = state.epoch if epoch is None else int(epoch)
    t_epoch = time.perf_counter()

    v_u = _encode_all(state.student, dataset.unlabelled_x)
    t0 = time.perf_counter()
    result = estimate_k(
        v_u, cfg.tau_f, cfg.knn_k,
        seed=_seed_mix(cfg.seed, ep, 1),
        num_restarts=cfg.num_restarts,
    )
    cluster_ms = (time.perf_counter() - t0) * 1000.0
    state.last_result = result
    k_e = result.num_clusters

    state.bank.refresh_clusters(v_u, result.assignment)
    state.m_s, state.m_t = _buffers_for_epoch(state.bank, k_e, ep, cfg)
    state.velocity["m_s"] = np.zeros_like(state.m_s.slots)

    n_lab, n_unlab = dataset.num_labelled, dataset.num_unlabelled
    rng = np.random.default_rng(
        np.random.SeedSequence((cfg.seed, ep, 7))
    )
    lab_order = rng.permutation(n_lab)
    unlab_order = rng.permutation(n_unlab)
    n_batches = max(
        1,
        min(-(-(n_lab + n_unlab) // cfg.batch_size), n_lab, n_unlab),
    )
    state.steps_per_epoch = n_batches
    total_steps = cfg.epochs * n_batches

    mapped = np.array(
        [state.label_map[int(c)] for c in dataset.labelled_y], dtype=np.int64
    )
    sums = {}
    lr_last = 0.0
    for lab_idx, unlab_idx in zip(
        np.array_split(lab_order, n_batches),
        np.array_split(unlab_order, n_batches),
    ):
        x = np.concatenate(
            [dataset.labelled_x[lab_idx], dataset.unlabelled_x[unlab_idx]]
        )
        labels_row = np.concatenate(
            [mapped[lab_idx], np.full(len(unlab_idx), -1, dtype=np.int64)]
        )
        lab_mask = labels_row >= 0
        row_ids = np.concatenate([lab_idx, n_lab + unlab_idx])
        x1, x2 = _augment_rows(x, row_ids, cfg, ep)

        lr_last = lr_schedule(
            min(state.global_step, total_steps), total_steps, cfg.lr
        )
        breakdown = _train_step(state, x1, x2, labels_row, lab_mask, ep, lr_last)
        for key, val in breakdown.as_dict().items():
            sums[key] = sums.get(key, 0.0) + val

    if cfg.potential_prototypes and not cfg.frozen_potential:
        write_back(state.bank, state.m_s)
    state.epoch = ep + 1

    metrics = {
        "epoch": ep,
        "k_e": k_e,
        "codelength": result.codelength,
        "omega": omega_schedule(
            ep, cfg.epochs, cfg.omega_min, cfg.omega_max,
            corrected=not cfg.printed_omega,
        ),
        "lr": lr_last,
        "tau_t": tau_t_schedule(
            ep, cfg.tau_t_start, cfg.tau_t_end, cfg.tau_t_warmup_epochs
        ),
        "steps": n_batches,
        "cluster_ms": cluster_ms,
        "epoch_ms": (time.perf_counter() - t_epoch) * 1000.0,
    }
    for key, val in sums.items():
        metrics[key] = val / n_batches
    return metrics


def train(dataset, config, metrics_callback=None):
    """Full training run; returns (state, list of per-epoch metrics)."""
    state = init_state(dataset, config)
    history = []
    for epoch in range(config.epochs):
        metrics = train_epoch(state, dataset, config, epoch)
        history.append(metrics)
        if metrics_callback is not None:
            metrics_callback(metrics)
    return state, history


def infer(state, features, config=None):
    """Three-step inference: encode with the student, cluster, hand over.

    Returns (ClusterResult, per-instance labels).
    """
    cfg = config if config is not None else state.config
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise DegenerateInputError("inference needs a non-empty feature matrix")
    v = _encode_all(state.student, features)
    result = estimate_k(
        v, cfg.tau_f, cfg.knn_k,
        seed=_seed_mix(cfg.seed, 0, 2),
        num_restarts=cfg.num_restarts,
    )
    return result, result.assignment
