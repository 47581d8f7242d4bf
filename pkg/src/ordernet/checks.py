"""Property suites behind ``ordernet check``.

Each suite builds throwaway models or instances from a seed and returns a
``CheckResult``; nothing here depends on trained weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from . import tsp
from .model import ModelConfig, OrderNet, parameter_count

__all__ = [
    "CheckResult",
    "check_equivariance",
    "check_causality",
    "check_gradients",
    "check_params",
    "check_oracles",
    "SUITES",
    "TSP_PARAMS_TARGET",
    "WORD_ORDER_PARAMS_TARGET",
]

TSP_PARAMS_TARGET = 73_000
WORD_ORDER_PARAMS_TARGET = 1_400_000


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_deviation: float
    seed: int
    details: dict = field(default_factory=dict)

    def summary(self) -> str:
        status = "ok" if self.passed else "VIOLATED"
        extra = " ".join(f"{k}={v}" for k, v in self.details.items())
        return f"{self.name}: {status} max_deviation={self.max_deviation:.3g} seed={self.seed} {extra}".rstrip()


def _rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=tsp.derive_seed(seed, *keys)))


def check_equivariance(seed: int = 0, trials: int = 50, tol: float = 1e-5, config: ModelConfig | None = None) -> CheckResult:
    """encode(PX) = P encode(X) and permuted teacher-forced logits, both BN modes."""
    config = config or ModelConfig.tsp()
    model = OrderNet(config, seed=tsp.derive_seed(seed, 0))
    worst = {"encoder": 0.0, "logits": 0.0}
    with T.no_grad():
        for trial in range(trials):
            rng = _rng(seed, 1, trial)
            n = int(rng.integers(3, 11))
            x = rng.random((1, n, config.input_dim))
            order = rng.permutation(n)[None]
            perm = rng.permutation(n)
            inverse = np.argsort(perm)
            for mode in ("train", "eval"):
                getattr(model, mode)()
                enc = model.encode(x).data[0]
                enc_p = model.encode(x[:, perm]).data[0]
                worst["encoder"] = max(worst["encoder"], float(np.abs(enc_p - enc[perm]).max()))
                logits = model.forward(x, order).data[0]
                # the same tour expressed in the permuted indexing
                logits_p = model.forward(x[:, perm], inverse[order]).data[0]
                worst["logits"] = max(worst["logits"], float(np.abs(logits_p - logits[:, perm]).max()))
    dev = max(worst.values())
    return CheckResult("equivariance", dev <= tol, dev, seed, {k: f"{v:.3g}" for k, v in worst.items()} | {"trials": trials})


def check_causality(seed: int = 0, trials: int = 50, config: ModelConfig | None = None) -> CheckResult:
    """Eval-mode logits at steps <= t0 ignore prefix entries at positions >= t0 (bit-exact)."""
    config = config or ModelConfig.tsp()
    model = OrderNet(config, seed=tsp.derive_seed(seed, 0)).eval()
    worst = 0.0
    violations = 0
    with T.no_grad():
        for trial in range(trials):
            rng = _rng(seed, 2, trial)
            n = int(rng.integers(3, 11))
            x = rng.random((1, n, config.input_dim))
            order = rng.permutation(n)
            t0 = int(rng.integers(1, n))
            other = order.copy()
            other[t0:] = rng.permutation(order[t0:])
            if np.array_equal(other, order):
                other[t0:] = order[t0:][::-1] if n - t0 > 1 else order[t0:]
            a = model.forward(x, order[None]).data[0, : t0 + 1]
            b = model.forward(x, other[None]).data[0, : t0 + 1]
            diff = float(np.abs(a - b).max())
            worst = max(worst, diff)
            violations += int(not np.array_equal(a, b))
    return CheckResult("causality", violations == 0, worst, seed, {"trials": trials, "violations": violations})


def check_gradients(seed: int = 0, n: int = 4, h: float = 1e-5, tol: float = 1e-4, config: ModelConfig | None = None) -> CheckResult:
    """Central differences vs backward for every scalar parameter (64-bit).

    The error for a parameter tensor is ``max|g - fd| / max(max|g|, max|fd|, 1e-6)``.
    Some gradients are exactly zero by shift invariance of the softmax (the
    output bias, the last shift); for those the differences are pure
    round-off of order 1e-11, and the floor keeps that from reading as error. Parameters are jittered first: freshly initialised
    biases are exactly zero, which puts every all-zero cell (padding,
    emitted elements) on the ReLU kink where central differences average
    the two one-sided slopes.
    """
    config = config or ModelConfig.tsp(encoder_blocks=1, decoder_blocks=1, precision="float64")
    model = OrderNet(config, seed=tsp.derive_seed(seed, 0)).train()
    rng = _rng(seed, 3)
    for p in model.params.values():
        p.data += rng.normal(0.0, 0.05, p.shape)
    x = rng.random((1, n, config.input_dim))
    order = rng.permutation(n)[None]
    with T.precision("float64"):
        model.params.zero_grad()
        model.loss(x, order).backward()
        analytic = {name: p.grad.copy() for name, p in model.params.items()}
        errors = {}
        with T.no_grad():
            for name, p in model.params.items():
                flat = p.data.reshape(-1)
                fd = np.empty_like(flat)
                for k in range(flat.size):
                    keep = flat[k]
                    flat[k] = keep + h
                    up = model.loss(x, order).item()
                    flat[k] = keep - h
                    down = model.loss(x, order).item()
                    flat[k] = keep
                    fd[k] = (up - down) / (2 * h)
                g = analytic[name].reshape(-1)
                scale = max(np.abs(g).max(), np.abs(fd).max(), 1e-6)
                errors[name] = float(np.abs(g - fd).max() / scale)
    worst_name = max(errors, key=errors.get)
    dev = errors[worst_name]
    return CheckResult("gradcheck", dev <= tol, dev, seed,
                       {"parameters": len(errors), "scalars": model.params.count(), "worst": worst_name})


def check_params(seed: int = 0, rel_tol: float = 0.03) -> CheckResult:
    """Analytic and instantiated parameter counts against the reference sizes."""
    rows = {}
    dev = 0.0
    ok = True
    for label, config, target in (("tsp", ModelConfig.tsp(), TSP_PARAMS_TARGET),
                                  ("word_order", ModelConfig.word_order(), WORD_ORDER_PARAMS_TARGET)):
        counted = parameter_count(config)
        rel = abs(counted - target) / target
        rows[label] = f"{counted}(target {target}, {(counted - target) / target:+.2%})"
        dev = max(dev, rel)
        ok = ok and rel <= rel_tol
    built = OrderNet(ModelConfig.tsp(), seed=seed).params.count()
    ok = ok and built == parameter_count(ModelConfig.tsp())
    rows["tsp_instantiated"] = built
    return CheckResult("params", ok, dev, seed, rows)


def check_oracles(seed: int = 0, instances: int = 200, christofides_instances: int = 100) -> CheckResult:
    """Held-Karp vs brute force (n in [4, 9]) and the Christofides 1.5 bound (n in [5, 12])."""
    worst_gap = 0.0
    mismatches = 0
    for k in range(instances):
        n = 4 + k % 6
        inst = tsp.generate_instance(n, tsp.derive_seed(seed, 4, k))
        gap = abs(tsp.held_karp(inst).length - tsp.brute_force(inst).length)
        worst_gap = max(worst_gap, gap)
        mismatches += int(gap > 1e-9)
    ratios = []
    for k in range(christofides_instances):
        n = 5 + k % 8
        inst = tsp.generate_instance(n, tsp.derive_seed(seed, 5, k))
        tour = tsp.christofides(inst)
        ratios.append(tour.length / tsp.held_karp(inst).length)
    lo, hi = min(ratios), max(ratios)
    ratio_ok = lo >= 1.0 - 1e-12 and hi <= 1.5
    return CheckResult("oracles", mismatches == 0 and ratio_ok, worst_gap, seed,
                       {"hk_vs_brute": instances, "mismatches": mismatches,
                        "christofides_ratio": f"[{lo:.4f}, {hi:.4f}]"})


SUITES = {
    "equivariance": check_equivariance,
    "causality": check_causality,
    "gradcheck": check_gradients,
    "params": check_params,
    "oracles": check_oracles,
}
