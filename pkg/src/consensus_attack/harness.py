"""Experiment orchestration: configs, attack campaigns, metrics and exports.

A campaign attacks every correctly classified input of a dataset with one
optimizer, optionally split into independent restarts, and aggregates the
query statistics (averages and medians over successful runs, with the
all-runs average counting failures as ``Q``).
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import io as tensor_io
from ._validation import check_image, check_int, check_positive, check_random_state
from .broker import AttackObjective, FunctionObjective, RunRecord
from .classifiers import LinearSoftmax, load_tiny_mlp, toy_linear_classifier
from .constraints import LossSpec
from .ensemble import CboConfig, ch_expected_step, run_cbo
from .exceptions import InvalidConfigError, TransportError
from .gradients import ChNesConfig, EstimatorKind, nes_expected_step, run_ch_nes
from .noise import DctNoise, EsConfig, SquareNoise, run_one_plus_lambda
from .spaces import BoxSpace, make_space

__all__ = [
    "OPTIMIZERS",
    "ExperimentConfig",
    "CampaignStats",
    "CampaignResult",
    "CampaignAborted",
    "derive_seed",
    "build_classifier",
    "random_dataset",
    "load_dataset",
    "run_optimizer",
    "run_attack",
    "run_campaign",
    "aggregate_stats",
    "robust_accuracy",
    "PcaResult",
    "pca_trajectory",
    "query_histogram",
    "export_results",
    "BENCHMARKS",
    "run_benchmark",
    "loglog_slope",
    "verify_nes_rate",
    "verify_ch_rate",
    "verify_ch_nes_alignment",
]

logger = logging.getLogger(__name__)

OPTIMIZERS = ("CBO", "CH", "NES", "OnePlusLambda", "CauchyOnePlusOne")

_MASK64 = (1 << 64) - 1


def derive_seed(master, index):
    """Per-run seed from a master seed and a run index (splitmix64 finalizer).

    The state is ``master + (index + 1) * 0x9E3779B97F4A7C15`` mod 2**64, mixed
    by the usual splitmix64 shifts and multiplies.
    """
    z = (int(master) + (int(index) + 1) * 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a campaign.

    ``restarts`` lists per-restart query budgets; when given they must sum to
    ``budget``. An empty list means a single run with the whole budget.
    ``classifier`` is a dict with a ``kind`` of "toy_linear", "linear",
    "tiny_mlp" or "remote". ``dataset`` is a list of ``{"path", "label"}``
    entries, or a dict ``{"random": n, "seed": s}`` of uniform random images
    labelled by the classifier itself.
    """

    optimizer: str = "CBO"
    optimizer_params: dict = field(default_factory=dict)
    space: str = "direct"
    space_params: dict = field(default_factory=dict)
    image_shape: tuple = (1, 4, 4)
    epsilon: float = 0.5
    norm: str = "linf"
    budget: int = 2000
    restarts: list = field(default_factory=list)
    targeted: bool = False
    target: int | None = None
    classifier: dict = field(default_factory=lambda: {"kind": "toy_linear"})
    dataset: object = field(default_factory=lambda: {"random": 50, "seed": 0})
    seed: int = 0
    max_iter: int = 100_000
    workers: int = 1

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise InvalidConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        self.image_shape = tuple(int(v) for v in self.image_shape)
        if len(self.image_shape) != 3:
            raise InvalidConfigError("image_shape must be (C, H, W)")
        check_positive(self.epsilon, "epsilon")
        if self.norm not in ("linf", "l2"):
            raise InvalidConfigError(f"norm must be 'linf' or 'l2', got {self.norm!r}")
        check_int(self.budget, "budget", minimum=1)
        self.restarts = [check_int(q, "restart budget", minimum=1) for q in self.restarts]
        if self.restarts and sum(self.restarts) != self.budget:
            raise InvalidConfigError(f"restart budgets sum to {sum(self.restarts)}, expected {self.budget}")
        if self.targeted and self.target is None:
            raise InvalidConfigError("targeted attacks need a target label")
        check_int(self.workers, "workers", minimum=1)

    @property
    def schedule(self):
        return list(self.restarts) if self.restarts else [self.budget]

    def loss_for(self, label):
        if self.targeted:
            return LossSpec(label=int(self.target), targeted=True)
        return LossSpec(label=int(label))

    def to_dict(self):
        d = asdict(self)
        d["image_shape"] = list(self.image_shape)
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise InvalidConfigError(f"{path}: not valid JSON ({exc})") from exc


def build_classifier(spec, image_shape=None):
    kind = spec.get("kind", "toy_linear")
    if kind == "toy_linear":
        return toy_linear_classifier()
    if kind == "linear":
        return LinearSoftmax(np.asarray(spec["weights"], dtype=float), spec.get("bias"))
    if kind == "tiny_mlp":
        return load_tiny_mlp(spec["path"])
    if kind == "remote":
        from .protocol import RemoteClassifier

        dim = None if image_shape is None else int(np.prod(image_shape))
        return RemoteClassifier(
            spec["endpoint"], input_dim=dim, n_classes=spec.get("n_classes"),
            timeout=spec.get("timeout", 30.0), outputs=spec.get("outputs", "logits"),
        )
    raise InvalidConfigError(f"unknown classifier kind {kind!r}")


def random_dataset(classifier, image_shape, n, seed=0):
    """``n`` uniform random images labelled with the classifier's own prediction."""
    rng = check_random_state(seed)
    X = rng.random((int(n),) + tuple(image_shape))
    labels = classifier.predict(X.reshape(len(X), -1))
    return [(x, int(y)) for x, y in zip(X, labels)]


def load_dataset(spec, classifier, image_shape):
    if isinstance(spec, dict) and "random" in spec:
        return random_dataset(classifier, image_shape, spec["random"], spec.get("seed", 0))
    items = []
    for entry in spec:
        x = tensor_io.read_tensor(entry["path"])
        if tuple(x.shape) != tuple(image_shape):
            raise InvalidConfigError(f"{entry['path']}: shape {x.shape} != {tuple(image_shape)}")
        items.append((x, int(entry["label"])))
    if not items:
        raise InvalidConfigError("dataset is empty")
    return items


def _cbo_noise(name, space, config, budget, seed):
    if name in ("anisotropic", "isotropic", None):
        return name
    if name == "dct":
        if space.latent_dim != int(np.prod(space.image_shape)):
            raise InvalidConfigError("dct noise needs a latent of image size")
        return DctNoise(space.image_shape, config.n_particles, seed=seed)
    if name == "square":
        steps = max(1, budget // config.batch_size)
        return SquareNoise(space.image_shape, space.budget.epsilon, steps, seed=seed)
    raise InvalidConfigError(f"unknown CBO noise {name!r}")


def run_optimizer(name, objective, space, params=None, seed=None, max_iter=100_000):
    """Dispatch to one optimizer by its config name."""
    params = dict(params or {})
    if name == "CBO":
        noise_name = params.pop("noise", "anisotropic")
        config = CboConfig(seed=seed, **params)
        noise = _cbo_noise(noise_name, space, config, objective.budget, derive_seed(seed or 0, 1 << 20))
        return run_cbo(objective, space, config, max_iter=max_iter, noise=noise)
    if name in ("CH", "NES"):
        alpha = params.pop("alpha", 10.0)
        kind = EstimatorKind(name.lower(), alpha)
        return run_ch_nes(objective, space, ChNesConfig(seed=seed, **params), kind, max_iter=max_iter)
    if name == "OnePlusLambda":
        return run_one_plus_lambda(objective, space, EsConfig(seed=seed, **params), max_iter=max_iter)
    if name == "CauchyOnePlusOne":
        params.update(noise="cauchy", n_candidates=1)
        return run_one_plus_lambda(objective, space, EsConfig(seed=seed, **params), max_iter=max_iter)
    raise InvalidConfigError(f"unknown optimizer {name!r}")


def run_attack(classifier, x, label, config, seed=0, on_query=None):
    """Attack one input, spending the restart schedule until success.

    Inputs the classifier already gets wrong are not attacked; the returned
    record has ``skipped=True`` and zero queries.
    """
    x = check_image(x)
    space = make_space(config.space, config.image_shape, config.epsilon, config.norm,
                       seed=derive_seed(seed, 0), **config.space_params)
    predicted = int(classifier.predict(x.reshape(1, -1))[0])
    if predicted != int(label):
        return RunRecord(config.optimizer, False, 0, skipped=True, seed=seed,
                         output_image=x.copy(), output_label=predicted, restarts=0,
                         info={"label": int(label)})
    loss = config.loss_for(label)
    used = 0
    record = None
    for r, q in enumerate(config.schedule):
        objective = AttackObjective(classifier, space, x, loss, budget=q, on_query=on_query)
        record = run_optimizer(config.optimizer, objective, space, config.optimizer_params,
                               seed=derive_seed(seed, r + 1), max_iter=config.max_iter)
        record.restarts = r + 1
        if record.success:
            record.success_query += used
        used += record.queries_used
        record.queries_used = used
        if record.success:
            break
    record.seed = seed
    record.info["label"] = int(label)
    if record.output_image is None:
        record.output_image = x.copy()
        record.output_label = predicted
    record.info["l2"] = float(np.linalg.norm(record.output_image - x))
    record.info["linf"] = float(np.max(np.abs(record.output_image - x)))
    return record


@dataclass
class CampaignStats:
    n_runs: int = 0
    n_skipped: int = 0
    n_success: int = 0
    failure_rate: float = 0.0
    avg_queries_success: float = 0.0
    avg_queries_all: float = 0.0
    median_queries_success: float = 0.0
    avg_l2: float = 0.0
    budget: int = 0

    def to_dict(self):
        return asdict(self)


def aggregate_stats(records, budget):
    """Query statistics over the attacked (non-skipped) runs.

    Means and the median use successful runs only; ``avg_queries_all`` counts
    each failed run as ``budget`` queries. Empty campaigns give all zeros.
    """
    runs = [r for r in records if not r.skipped]
    hits = [r.success_query for r in runs if r.success]
    stats = CampaignStats(n_runs=len(runs), n_skipped=len(records) - len(runs), n_success=len(hits),
                          budget=int(budget))
    if not runs:
        return stats
    stats.failure_rate = 1.0 - len(hits) / len(runs)
    if hits:
        stats.avg_queries_success = float(np.mean(hits))
        stats.median_queries_success = float(np.median(hits))
    stats.avg_queries_all = float(np.mean([r.success_query if r.success else budget for r in runs]))
    stats.avg_l2 = float(np.mean([r.info.get("l2", 0.0) for r in runs]))
    return stats


def robust_accuracy(records, dataset=None):
    """Fraction of inputs still classified correctly after the attack.

    Inputs misclassified before the attack count as not robust.
    """
    if not records:
        return 0.0
    labels = [r.info.get("label") for r in records] if dataset is None else [int(y) for _, y in dataset]
    robust = [not r.skipped and not r.success and r.output_label == y for r, y in zip(records, labels)]
    return float(np.mean(robust))


@dataclass
class CampaignResult:
    stats: CampaignStats
    records: list
    robust_accuracy: float


class CampaignAborted(TransportError):
    """Raised when the classifier becomes unreachable; carries the finished runs."""

    def __init__(self, message, partial):
        super().__init__(message)
        self.partial = partial


def run_campaign(config, classifier=None, dataset=None, out_dir=None, on_query=None):
    """Attack every dataset item; run ``i`` is seeded with ``derive_seed(config.seed, i)``.

    With ``config.workers > 1`` runs are spread over threads; results do not
    depend on the worker count. If the classifier becomes unreachable, the
    finished runs are exported to ``out_dir`` (when given) and
    :class:`CampaignAborted` is raised.
    """
    classifier = build_classifier(config.classifier, config.image_shape) if classifier is None else classifier
    dataset = load_dataset(config.dataset, classifier, config.image_shape) if dataset is None else dataset
    if len(dataset) == 0:
        raise InvalidConfigError("dataset is empty")

    def one(i):
        x, y = dataset[i]
        return run_attack(classifier, x, y, config, seed=derive_seed(config.seed, i), on_query=on_query)

    records = [None] * len(dataset)
    try:
        if config.workers > 1:
            with ThreadPoolExecutor(config.workers) as pool:
                for i, rec in enumerate(pool.map(one, range(len(dataset)))):
                    records[i] = rec
        else:
            for i in range(len(dataset)):
                records[i] = one(i)
    except TransportError as exc:
        done = [r for r in records if r is not None]
        partial = CampaignResult(aggregate_stats(done, config.budget), done, robust_accuracy(done))
        if out_dir is not None:
            export_results(partial.stats, done, out_dir, config.budget)
        raise CampaignAborted(f"campaign aborted after {len(done)} runs: {exc}", partial) from exc
    result = CampaignResult(aggregate_stats(records, config.budget), records, robust_accuracy(records, dataset))
    if out_dir is not None:
        export_results(result.stats, records, out_dir, config.budget, extra={"robust_accuracy": result.robust_accuracy})
    return result


@dataclass
class PcaResult:
    coords: np.ndarray
    explained: np.ndarray
    residuals: np.ndarray
    components: np.ndarray


def pca_trajectory(path):
    """Two-component PCA of an optimization path, centred at its end point.

    The path is shifted so the last point is the origin, then mean-centred.
    ``explained`` holds every component's share ``s_i**2 / sum(s_j**2)``
    (padded with zeros to at least two entries) and ``residuals`` the l2
    distance of each point to its rank-2 reconstruction.
    """
    P = np.asarray(path, dtype=float)
    if P.ndim != 2 or len(P) < 3:
        raise InvalidConfigError("pca_trajectory needs at least three points of equal length")
    A = P - P[-1]
    A = A - A.mean(axis=0)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    total = float(np.sum(s**2))
    explained = np.zeros(max(2, len(s)))
    if total > 0.0:
        explained[: len(s)] = s**2 / total
    else:
        explained[0] = 1.0
    k = min(2, len(s))
    coords = np.zeros((len(P), 2))
    coords[:, :k] = U[:, :k] * s[:k]
    # drop numerically-null directions so collinear paths report an exact zero second axis
    if len(s) > 1 and s[1] <= 1e-12 * max(s[0], 1e-300):
        coords[:, 1] = 0.0
        explained[0] += explained[1]
        explained[1] = 0.0
    recon = coords[:, :k] @ Vt[:k]
    residuals = np.linalg.norm(A - recon, axis=1)
    components = np.zeros((2, P.shape[1]))
    components[:k] = Vt[:k]
    return PcaResult(coords, explained, residuals, components)


def query_histogram(records, budget, bins=40):
    """Counts of queries used per attacked run over ``bins`` equal bins on [0, budget]."""
    q = [r.success_query if r.success else r.queries_used for r in records if not r.skipped]
    counts, edges = np.histogram(np.asarray(q, dtype=float), bins=bins, range=(0.0, float(budget)))
    return counts, edges


def export_results(stats, records, out_dir, budget, bins=40, pca_path=None, extra=None):
    """Write stats JSON, histogram CSV, optional PCA CSV and adversarial tensors.

    Returns a dict of the written paths.
    """
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    paths = {}
    payload = {"stats": stats.to_dict(), "runs": [_record_summary(r) for r in records]}
    if extra:
        payload.update(extra)
    paths["stats"] = os.path.join(out_dir, "stats.json")
    with open(paths["stats"], "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    counts, edges = query_histogram(records, budget, bins)
    paths["histogram"] = os.path.join(out_dir, "histogram.csv")
    with open(paths["histogram"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
    if pca_path is not None:
        pca = pca_trajectory(pca_path)
        paths["pca"] = os.path.join(out_dir, "pca.csv")
        with open(paths["pca"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "pc1", "pc2", "residual"])
            for i, (c, r) in enumerate(zip(pca.coords, pca.residuals)):
                w.writerow([i, repr(float(c[0])), repr(float(c[1])), repr(float(r))])
    tensors = []
    for i, rec in enumerate(records):
        if rec.output_image is not None and not rec.skipped:
            p = os.path.join(out_dir, f"adv_{i:05d}.tensor")
            tensor_io.write_tensor(p, rec.output_image)
            tensors.append(p)
    paths["tensors"] = tensors
    return paths


def _record_summary(rec):
    return {
        "method": rec.method,
        "success": bool(rec.success),
        "skipped": bool(rec.skipped),
        "queries_used": int(rec.queries_used),
        "success_query": rec.success_query,
        "restarts": int(rec.restarts),
        "seed": rec.seed,
        "label": rec.info.get("label"),
        "output_label": rec.output_label,
        "l2": rec.info.get("l2"),
    }


# --- analytic benchmarks -----------------------------------------------------

def _sphere(X):
    return 0.5 * np.sum(X**2, axis=1)


def _rastrigin(X):
    return 10.0 * X.shape[1] + np.sum(X**2 - 10.0 * np.cos(2 * np.pi * X), axis=1)


def _ackley(X):
    d = X.shape[1]
    a = -20.0 * np.exp(-0.2 * np.sqrt(np.sum(X**2, axis=1) / d))
    return a - np.exp(np.sum(np.cos(2 * np.pi * X), axis=1) / d) + 20.0 + math.e


def _rosenbrock(X):
    return np.sum(100.0 * (X[:, 1:] - X[:, :-1] ** 2) ** 2 + (1 - X[:, :-1]) ** 2, axis=1)


# name -> (function, box half-width, shift of the minimizer, minimum value)
BENCHMARKS = {
    "sphere": (_sphere, 5.0, 1.0, 0.0),
    "rastrigin": (_rastrigin, 5.12, 1.0, 0.0),
    "ackley": (_ackley, 32.768, 1.0, 0.0),
    "rosenbrock": (_rosenbrock, 5.0, 0.0, 0.0),
}


def run_benchmark(name, optimizer="CBO", dim=10, budget=20_000, seed=0, params=None, tol=1e-4):
    """Minimize a shifted analytic test function inside its usual box.

    Success is reaching ``minimum + tol``. Returns the run record; the gap to
    the minimum is ``record.best_value - minimum``.
    """
    if name not in BENCHMARKS:
        raise InvalidConfigError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}")
    func, half, shift, minimum = BENCHMARKS[name]
    offset = np.full(dim, shift)

    def f(X):
        return func(np.atleast_2d(X) - offset)

    objective = FunctionObjective(f, budget=budget, success_below=minimum + tol)
    space = BoxSpace(dim, -half, half)
    params = dict(params or {})
    if optimizer in ("CH", "NES"):
        params.setdefault("sigma", 0.1)
        params.setdefault("eta", 0.5)
    elif optimizer in ("OnePlusLambda", "CauchyOnePlusOne"):
        params.setdefault("tau_mut", 0.3)
    record = run_optimizer(optimizer, objective, space, params, seed=seed)
    record.info.update(benchmark=name, dim=dim, minimum=minimum, gap=record.best_value - minimum)
    return record


# --- rate and alignment checks for the small-step expansions -------------------

def loglog_slope(xs, ys):
    """Least-squares slope of ``log ys`` against ``log xs``."""
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def _half_norm_sq(X):
    return 0.5 * np.sum(np.atleast_2d(X) ** 2, axis=1)


def verify_nes_rate(taus=(0.04, 0.01, 0.0025), d=5, n_samples=1_000_000, seed=0, eta=1.0):
    """NES expected step against ``tau * grad f`` for ``f = |x|^2 / 2``.

    ``sigma**2 = tau / eta``; the same Gaussian samples are reused for every
    ``tau`` (common random numbers). Returns taus, errors and the log-log slope.
    """
    mu = np.ones(d)
    errors = []
    for tau in taus:
        sigma = math.sqrt(tau / eta)
        step = nes_expected_step(_half_norm_sq, mu, sigma, eta, n_samples, np.random.default_rng(seed))
        errors.append(float(np.linalg.norm(step - tau * mu)))
    return {"taus": list(taus), "errors": errors, "slope": loglog_slope(taus, errors)}


def verify_ch_rate(taus=(0.04, 0.01, 0.0025), d=5, n_samples=1_000_000, seed=0, alpha=100.0):
    """Consensus-hopping step against ``-tau * grad f`` with ``sigma_tilde**2 = tau / alpha``."""
    c = np.ones(d)
    errors = []
    for tau in taus:
        st = math.sqrt(tau / alpha)
        step = ch_expected_step(_half_norm_sq, c, st, alpha, n_samples, np.random.default_rng(seed))
        errors.append(float(np.linalg.norm(step + tau * c)))
    return {"taus": list(taus), "errors": errors, "slope": loglog_slope(taus, errors)}


def verify_ch_nes_alignment(tau=0.01, d=5, n_samples=100_000, seed=0, eta=1.0, alpha=100.0):
    """Cosine similarity of the CH and NES descent steps on a random SPD quadratic.

    Both estimators use the same standard Gaussian samples.
    """
    rng = np.random.default_rng(seed)
    # spectrum in [0.5, 2] and a unit-distance start keep the softmax weights
    # of the consensus estimator well spread at this sample size
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    A = Q @ np.diag(rng.uniform(0.5, 2.0, d)) @ Q.T
    m = rng.standard_normal(d)
    u = rng.standard_normal(d)
    mu = m + u / np.linalg.norm(u)

    def f(X):
        Z = np.atleast_2d(X) - m
        return 0.5 * np.einsum("ni,ij,nj->n", Z, A, Z)

    nes = -nes_expected_step(f, mu, math.sqrt(tau / eta), eta, n_samples, np.random.default_rng(seed + 1))
    ch = ch_expected_step(f, mu, math.sqrt(tau / alpha), alpha, n_samples, np.random.default_rng(seed + 1))
    cos = float(nes @ ch / (np.linalg.norm(nes) * np.linalg.norm(ch)))
    return {"cosine": cos, "nes_step": nes, "ch_step": ch, "gradient": A @ (mu - m)}
