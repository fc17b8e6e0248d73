"""Adversarial attacks on forecasting models: FGSM, PGD, a C&W variant
adapted to sequence regression, and the frequency-enhanced Fre-CW.

All attacks perturb the input window inside an elementwise epsilon ball
around the clean input (the projection runs after every step), work in
targeted or non-targeted mode, and are deterministic given their config.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import engine, spectral
from .engine import AdamState, Tensor2

__all__ = [
    "ATTACK_NAMES",
    "AttackConfig",
    "AdversarialResult",
    "build_target",
    "clip_to_ball",
    "fgsm",
    "pgd",
    "cw_tsf",
    "fre_cw",
    "run_attack",
    "non_targeted_wrap",
    "resolve_target",
]

ATTACK_NAMES = ("fgsm", "pgd", "cw", "frecw")

# iteration budgets when the config leaves n_iter unset: FGSM is single
# step by construction, PGD takes a short sign-step schedule, the
# optimizer-based attacks run the full budget
DEFAULT_N_ITER = {"fgsm": 1, "pgd": 10, "cw": 100, "frecw": 100}

MODES = ("targeted", "non-targeted")
FREQ_VARIANTS = ("algorithm1", "eq7")


@dataclass(frozen=True)
class AttackConfig:
    """Shared knobs for every attack.

    ``epsilon`` is the elementwise perturbation radius in normalized units,
    ``alpha`` the frequency-loss weight in [0, 1], ``target_scale`` the
    relative offset used to build targets from the truth, and ``c`` the
    balance factor on the time-domain error term. ``n_iter=None`` means
    each attack's own default budget.
    """

    epsilon: float = 0.25
    alpha: float = 0.6
    n_iter: int | None = None
    lr: float = 0.01
    mode: str = "targeted"
    target_scale: float = 0.1
    freq_variant: str = "algorithm1"
    seed: int = 0
    c: float = 1.0
    random_start: bool = False

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.n_iter is not None and self.n_iter < 0:
            raise ValueError(f"n_iter must be >= 0, got {self.n_iter}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.freq_variant not in FREQ_VARIANTS:
            raise ValueError(
                f"freq_variant must be one of {FREQ_VARIANTS}, "
                f"got {self.freq_variant!r}"
            )

    def iterations(self, attack):
        return DEFAULT_N_ITER[attack] if self.n_iter is None else self.n_iter

    def objective_sign(self):
        # +1 pulls the forecast toward the target, -1 pushes it away
        return 1.0 if self.mode == "targeted" else -1.0


@dataclass(frozen=True)
class AdversarialResult:
    x_adv: Tensor2
    perturbation_linf: float
    perturbation_l2: float
    loss_trace: list = field(default_factory=list)
    iterations_run: int = 0


def build_target(truth, a):
    """Target sequence: y' = y + a * |y| elementwise."""
    arr = engine.as_array(truth)
    return Tensor2(arr + a * np.abs(arr))


def clip_to_ball(x_adv, x, epsilon):
    """Clamp ``x_adv`` into the elementwise interval [x - eps, x + eps]."""
    adv = engine.as_array(x_adv)
    ref = engine.as_array(x)
    if adv.shape != ref.shape:
        raise ValueError(f"clip_to_ball: shape mismatch {adv.shape} vs {ref.shape}")
    return Tensor2(np.clip(adv, ref - epsilon, ref + epsilon))


def _result(x, x_adv, trace, iters):
    delta = x_adv - x
    return AdversarialResult(
        x_adv=Tensor2(x_adv),
        perturbation_linf=float(np.abs(delta).max()) if delta.size else 0.0,
        perturbation_l2=float(np.sqrt((delta * delta).sum())),
        loss_trace=list(trace),
        iterations_run=iters,
    )


def _identity_result(x):
    return _result(x, x.copy(), [], 0)


def _start_point(x, config):
    if not config.random_start or config.epsilon == 0.0:
        return x.copy()
    rng = np.random.default_rng(config.seed)
    jitter = rng.uniform(-config.epsilon, config.epsilon, size=x.shape)
    return x + jitter


def _loss_and_grad(model, x_arr, target, sign):
    """Signed forecast MSE against ``target`` and its input gradient."""
    x_node = engine.leaf(x_arr, requires_grad=True)
    out = model.forward_node(x_node)
    loss = engine.mse(out, engine.constant(target.array))
    engine.backward(loss)
    return sign * loss.item(), sign * x_node.grad


def fgsm(model, window, target, config):
    """Single signed-gradient step of size epsilon.

    Targeted mode descends the forecast error against the target;
    non-targeted mode ascends the error against the reference sequence.
    """
    x = window.input.array
    if config.epsilon == 0.0 or config.iterations("fgsm") == 0:
        return _identity_result(x)
    loss, grad = _loss_and_grad(model, x, target, config.objective_sign())
    x_adv = x - config.epsilon * np.sign(grad)
    return _result(x, x_adv, [loss], 1)


def pgd(model, window, target, config):
    """Iterated signed-gradient steps, projected into the ball after each.

    The per-iteration step size is epsilon / sqrt(n_iter), so a single
    iteration reduces to an FGSM step.
    """
    x = window.input.array
    n = config.iterations("pgd")
    if config.epsilon == 0.0 or n == 0:
        return _identity_result(x)
    step = config.epsilon / np.sqrt(n)
    sign = config.objective_sign()
    x_adv = _start_point(x, config)
    x_adv = np.clip(x_adv, x - config.epsilon, x + config.epsilon)
    trace = []
    for _ in range(n):
        loss, grad = _loss_and_grad(model, x_adv, target, sign)
        trace.append(loss)
        x_adv = x_adv - step * np.sign(grad)
        x_adv = np.clip(x_adv, x - config.epsilon, x + config.epsilon)
    return _result(x, x_adv, trace, n)


def _optimize(model, window, target, config, attack):
    """Shared Adam loop for the optimizer-based attacks.

    Per iteration: evaluate the time-domain term (perturbation L2 norm plus
    signed forecast MSE), optionally the spectral L1 terms, fuse with the
    alpha weighting, take one Adam step on the adversarial input, then clip
    back into the ball. The trace records the fused loss at each iterate.
    """
    include_freq = attack == "frecw"
    x = window.input.array
    n = config.iterations(attack)
    if config.epsilon == 0.0 or n == 0:
        return _identity_result(x)
    sign = config.objective_sign()
    x_adv = _start_point(x, config)
    x_adv = np.clip(x_adv, x - config.epsilon, x + config.epsilon)

    x_const = engine.constant(x)
    target_const = engine.constant(target.array)
    if include_freq:
        x_spec = spectral.normalize_spectrum(spectral.dft(x))
        if config.freq_variant == "algorithm1":
            y_ref = target.array
        else:
            y_ref = model.forward(window.input).array
        y_spec = spectral.normalize_spectrum(spectral.dft(y_ref))

    state = AdamState.init(x.shape)
    trace = []
    for _ in range(n):
        x_node = engine.leaf(x_adv, requires_grad=True)
        out = model.forward_node(x_node)
        r = engine.sub(x_node, x_const)
        time_err = engine.mse(out, target_const)
        l_tmp = engine.add(
            engine.l2norm(r), engine.scalar_mul(time_err, sign * config.c)
        )
        if include_freq:
            term_in = spectral.spectral_l1_term(x_node, x_spec)
            term_out = spectral.spectral_l1_term(out, y_spec)
            l_freq = engine.add(term_in, engine.scalar_mul(term_out, sign))
            loss = engine.add(
                engine.scalar_mul(l_freq, config.alpha),
                engine.scalar_mul(l_tmp, 1.0 - config.alpha),
            )
        else:
            loss = l_tmp
        loss_val = loss.item()
        if not np.isfinite(loss_val):
            raise RuntimeError(
                f"{attack}: non-finite loss after {len(trace)} iterations; "
                f"trace={trace}"
            )
        trace.append(loss_val)
        engine.backward(loss)
        x_adv, state = engine.adam_step(x_adv, x_node.grad, state, config.lr)
        x_adv = np.clip(x_adv, x - config.epsilon, x + config.epsilon)
    return _result(x, x_adv, trace, n)


def cw_tsf(model, window, target, config):
    """Optimizer-based attack on the time-domain loss only: the perturbation
    L2 norm plus the signed forecast MSE, with per-step ball projection."""
    return _optimize(model, window, target, config, "cw")


def fre_cw(model, window, target, config):
    """Fused time/frequency attack.

    The frequency term compares unit-normalized spectra of the adversarial
    input against the clean input, and of the adversarial forecast against
    the reference sequence (the attack target by default, the clean
    forecast under the "eq7" variant). With alpha = 0 the loop degenerates
    to :func:`cw_tsf` exactly.
    """
    return _optimize(model, window, target, config, "frecw")


_DISPATCH = {"fgsm": fgsm, "pgd": pgd, "cw": cw_tsf, "frecw": fre_cw}


def resolve_target(window, config):
    """Reference sequence for the attack objective.

    Targeted mode offsets the truth by ``target_scale``; non-targeted mode
    measures against the truth itself.
    """
    if config.mode == "targeted":
        return build_target(window.truth, config.target_scale)
    return window.truth


def run_attack(name, model, window, config):
    """Dispatch one attack on one window; returns (result, reference used)."""
    try:
        fn = _DISPATCH[name]
    except KeyError:
        raise ValueError(
            f"unknown attack {name!r}; valid names: {', '.join(ATTACK_NAMES)}"
        ) from None
    target = resolve_target(window, config)
    return fn(model, window, target, config), target


def non_targeted_wrap(attack_fn, model, window, config):
    """Run an attack in non-targeted mode against the true future sequence."""
    if config.mode != "non-targeted":
        config = replace(config, mode="non-targeted")
    return attack_fn(model, window, window.truth, config)
