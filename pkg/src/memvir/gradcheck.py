"""Central finite-difference checks of the analytic loss gradients."""

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from .losses import LossConfig, LossOutput, LossVariant, loss_forward
from .memory import (
    MemVirConfig,
    MemVirState,
    Mode,
    assemble_extended_batch,
    enqueue_step,
    memvir_training_step,
    select_virtual,
)


@dataclass
class GradcheckSettings:
    instances: int = 100
    seed: int = 0
    h: float = 1e-6
    tol: float = 1e-5
    dim: int = 8
    n_classes: int = 5
    batch: int = 6
    variants: tuple = tuple(v.value for v in LossVariant)
    memvir: bool = True


def relative_error(analytic, numeric):
    """||a - n|| / max(||a||, ||n||), with a tiny floor for all-zero gradients."""
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-12))


def numeric_grad(f: Callable[[np.ndarray], float], x, h=1e-6):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        fp = f(x)
        x[i] = orig - h
        fm = f(x)
        x[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return g


def random_loss_config(variant, rng):
    """Variant config with a randomized running ``t`` for CurricularFace."""
    variant = LossVariant(variant)
    if variant is LossVariant.CURRICULARFACE:
        return LossConfig(variant, curricular_t=float(rng.uniform(0.0, 0.5)))
    return LossConfig(variant)


def check_instance(cfg: LossConfig, X, y, W, h=1e-6, loss_fn=loss_forward):
    out = loss_fn(cfg, X, y, W)
    nx = numeric_grad(lambda Xp: loss_forward(cfg, Xp, y, W).value, X, h)
    nw = numeric_grad(lambda Wp: loss_forward(cfg, X, y, Wp).value, W, h)
    return relative_error(np.concatenate([out.d_embeddings.ravel(), out.d_weights.ravel()]),
                          np.concatenate([nx.ravel(), nw.ravel()]))


def check_memvir_instance(cfg: LossConfig, rng, s: GradcheckSettings, loss_fn=loss_forward):
    """Gradcheck of the extended loss w.r.t. the current X and W only.

    Two past snapshots are queued with MemVir(2, 0); they enter the loss as
    constants.
    """
    D, C, B = s.dim, s.n_classes, s.batch
    mv = MemVirConfig(n_steps=2, margin=0, warmup_step=0, mode=Mode.FULL)
    base = MemVirState()
    for _ in range(2):
        enqueue_step(base, mv, rng.standard_normal((D, C)), rng.standard_normal((B, D)), rng.integers(0, C, B))
    base.step = 2
    X = rng.standard_normal((B, D))
    W = rng.standard_normal((D, C))
    y = rng.integers(0, C, B)

    def value(Xp, Wp):
        st = MemVirState(base.weight_queue.copy(), base.embed_queue.copy(), base.step)
        return memvir_training_step(st, mv, Xp, y, Wp, cfg).loss

    st = MemVirState(base.weight_queue.copy(), base.embed_queue.copy(), base.step)
    if loss_fn is loss_forward:
        out = memvir_training_step(st, mv, X, y, W, cfg).loss
    else:
        # route the analytic side through the supplied loss (negative controls)
        virt = select_virtual(st, mv, C, D)
        Xe, We, ye = assemble_extended_batch(X, y, W, virt)
        full = loss_fn(cfg, Xe, ye, We)
        out = LossOutput(full.value, full.d_embeddings[:B], full.d_weights[:, :C])
    nx = numeric_grad(lambda Xp: value(Xp, W).value, X, s.h)
    nw = numeric_grad(lambda Wp: value(X, Wp).value, W, s.h)
    return relative_error(np.concatenate([out.d_embeddings.ravel(), out.d_weights.ravel()]),
                          np.concatenate([nx.ravel(), nw.ravel()]))


@dataclass
class GradcheckReport:
    max_error: Dict[str, float] = field(default_factory=dict)
    tol: float = 1e-5

    @property
    def failing(self):
        return [k for k, v in self.max_error.items() if not v < self.tol]

    @property
    def ok(self):
        return not self.failing

    def table(self):
        lines = [f"{'variant':<24}{'max rel err':>14}  status"]
        for name, err in self.max_error.items():
            lines.append(f"{name:<24}{err:>14.3e}  {'ok' if err < self.tol else 'FAIL'}")
        return "\n".join(lines)


def run_gradcheck(settings: Optional[GradcheckSettings] = None, loss_fn=loss_forward) -> GradcheckReport:
    """Max relative gradient error per variant over random (X, y, W) instances.

    ``loss_fn`` supplies the analytic side and defaults to :func:`loss_forward`;
    the numeric side always differentiates ``loss_forward`` values.
    """
    s = settings or GradcheckSettings()
    report = GradcheckReport(tol=s.tol)
    for variant in s.variants:
        rng = np.random.default_rng([s.seed, list(LossVariant).index(LossVariant(variant))])
        worst = 0.0
        for _ in range(s.instances):
            cfg = random_loss_config(variant, rng)
            X = rng.standard_normal((s.batch, s.dim))
            W = rng.standard_normal((s.dim, s.n_classes))
            y = rng.integers(0, s.n_classes, s.batch)
            worst = max(worst, check_instance(cfg, X, y, W, s.h, loss_fn))
        report.max_error[LossVariant(variant).value] = worst
    if s.memvir:
        for variant in s.variants:
            rng = np.random.default_rng([s.seed, 100 + list(LossVariant).index(LossVariant(variant))])
            worst = 0.0
            for _ in range(max(1, s.instances // 10)):
                cfg = random_loss_config(variant, rng)
                worst = max(worst, check_memvir_instance(cfg, rng, s, loss_fn))
            report.max_error[f"MemVir+{LossVariant(variant).value}"] = worst
    return report
