"""scikit-learn style front ends.

The optimizers are exposed as estimators whose ``minimize`` method plays the
role of ``fit`` (there is no training data, only an objective), and the attack
as a transformer mapping clean images to adversarial ones.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_finite_array, check_int, check_positive
from .broker import FunctionObjective
from .exceptions import InvalidInputError, ShapeError
from .harness import ExperimentConfig, aggregate_stats, derive_seed, robust_accuracy, run_attack, run_optimizer
from .spaces import BoxSpace

__all__ = [
    "CBO",
    "ConsensusHopping",
    "NES",
    "OnePlusLambdaES",
    "CauchyOnePlusOneES",
    "ClosedBoxAttack",
]


class _OptimizerEstimator(BaseEstimator):
    _name = None

    def _params(self):
        raise NotImplementedError

    def minimize(self, func, dim, lower=-1.0, upper=1.0, target=None):
        """Minimize a vectorized ``func(X) -> values`` over the box ``[lower, upper]^dim``.

        ``target``, if given, stops the run once a value drops below it.
        Sets ``x_``, ``fun_``, ``n_queries_`` and ``record_``.
        """
        check_int(self.budget, "budget", minimum=1)
        objective = FunctionObjective(lambda X: np.asarray(func(np.atleast_2d(X)), dtype=float),
                                      budget=self.budget, success_below=target)
        space = BoxSpace(dim, lower, upper)
        rec = run_optimizer(self._name, objective, space, self._params(), seed=self.seed,
                            max_iter=self.max_iter)
        self.record_ = rec
        self.x_ = rec.best_point
        self.fun_ = rec.best_value
        self.n_queries_ = rec.queries_used
        self.success_ = rec.success
        return self


class CBO(_OptimizerEstimator):
    """Mini-batched consensus-based optimization."""

    _name = "CBO"

    def __init__(self, tau=1.3, lam=1.0, sigma=1.0, n_particles=50, batch_size=10, alpha=None,
                 eta_ess=0.1, noise="anisotropic", budget=10_000, max_iter=100_000, seed=None):
        self.tau = tau
        self.lam = lam
        self.sigma = sigma
        self.n_particles = n_particles
        self.batch_size = batch_size
        self.alpha = alpha
        self.eta_ess = eta_ess
        self.noise = noise
        self.budget = budget
        self.max_iter = max_iter
        self.seed = seed

    def _params(self):
        return dict(tau=self.tau, lam=self.lam, sigma=self.sigma, n_particles=self.n_particles,
                    batch_size=self.batch_size, alpha=self.alpha, eta_ess=self.eta_ess, noise=self.noise)


class _ChNes(_OptimizerEstimator):
    def __init__(self, sigma=0.001, eta=0.01, n_samples=50, momentum=0.9, schedule="plateau",
                 budget=10_000, max_iter=100_000, seed=None):
        self.sigma = sigma
        self.eta = eta
        self.n_samples = n_samples
        self.momentum = momentum
        self.schedule = schedule
        self.budget = budget
        self.max_iter = max_iter
        self.seed = seed

    def _params(self):
        return dict(sigma=self.sigma, eta=self.eta, n_samples=self.n_samples,
                    momentum=self.momentum, schedule=self.schedule)


class NES(_ChNes):
    """Antithetic Gaussian NES with normalized momentum steps."""

    _name = "NES"


class ConsensusHopping(_ChNes):
    """Consensus hopping: hop to the softmax-weighted mean of local samples."""

    _name = "CH"

    def __init__(self, alpha=10.0, sigma=0.001, eta=0.01, n_samples=50, momentum=0.9,
                 schedule="plateau", budget=10_000, max_iter=100_000, seed=None):
        super().__init__(sigma, eta, n_samples, momentum, schedule, budget, max_iter, seed)
        self.alpha = alpha

    def _params(self):
        return dict(super()._params(), alpha=self.alpha)


class OnePlusLambdaES(_OptimizerEstimator):
    """(1 + lambda)-ES; ``noise="basis"`` gives the SimBA rule."""

    _name = "OnePlusLambda"

    def __init__(self, tau_mut=0.05, n_candidates=1, noise="gaussian", budget=10_000,
                 max_iter=100_000, seed=None):
        self.tau_mut = tau_mut
        self.n_candidates = n_candidates
        self.noise = noise
        self.budget = budget
        self.max_iter = max_iter
        self.seed = seed

    def _params(self):
        return dict(tau_mut=self.tau_mut, n_candidates=self.n_candidates, noise=self.noise)


class CauchyOnePlusOneES(_OptimizerEstimator):
    """(1 + 1)-ES with Cauchy mutations of fixed scale."""

    _name = "CauchyOnePlusOne"

    def __init__(self, tau_mut=0.05, budget=10_000, max_iter=100_000, seed=None):
        self.tau_mut = tau_mut
        self.budget = budget
        self.max_iter = max_iter
        self.seed = seed

    def _params(self):
        return dict(tau_mut=self.tau_mut)


class ClosedBoxAttack(BaseEstimator, TransformerMixin):
    """Transformer from clean images to adversarial images for a fixed classifier.

    ``fit(X, y)`` attacks every row of ``X`` against its label; ``transform``
    attacks against the classifier's own predictions. ``score`` is the robust
    accuracy on ``(X, y)``.

    Parameters
    ----------
    classifier : Classifier
        Anything with ``predict_logits`` and ``predict`` on flattened inputs.
    image_shape : tuple, optional
        Needed when ``X`` is passed flattened as ``(n, d)``.
    """

    def __init__(self, classifier=None, optimizer="CBO", optimizer_params=None, space="direct",
                 space_params=None, epsilon=0.05, norm="linf", budget=10_000, restarts=None,
                 image_shape=None, seed=0):
        self.classifier = classifier
        self.optimizer = optimizer
        self.optimizer_params = optimizer_params
        self.space = space
        self.space_params = space_params
        self.epsilon = epsilon
        self.norm = norm
        self.budget = budget
        self.restarts = restarts
        self.image_shape = image_shape
        self.seed = seed

    def _images(self, X):
        X = check_finite_array(X, "X")
        if X.ndim == 4:
            shape = X.shape[1:]
        elif X.ndim == 2:
            if self.image_shape is None:
                raise ShapeError("flattened inputs need image_shape")
            shape = tuple(self.image_shape)
            if int(np.prod(shape)) != X.shape[1]:
                raise ShapeError(f"image_shape {shape} does not match {X.shape[1]} features")
        else:
            raise ShapeError(f"expected (n, C, H, W) or (n, d) inputs, got ndim={X.ndim}")
        if X.min() < 0.0 or X.max() > 1.0:
            raise InvalidInputError("images must lie in [0, 1]")
        return X.reshape((len(X),) + tuple(shape)), tuple(shape)

    def _config(self, shape):
        if self.classifier is None:
            raise InvalidInputError("ClosedBoxAttack needs a classifier")
        check_positive(self.epsilon, "epsilon")
        return ExperimentConfig(
            optimizer=self.optimizer, optimizer_params=dict(self.optimizer_params or {}),
            space=self.space, space_params=dict(self.space_params or {}), image_shape=shape,
            epsilon=self.epsilon, norm=self.norm, budget=self.budget,
            restarts=list(self.restarts or []), seed=self.seed,
        )

    def _attack(self, X, y):
        images, shape = self._images(X)
        config = self._config(shape)
        y = np.asarray(y).astype(int).ravel()
        if len(y) != len(images):
            raise ShapeError(f"{len(images)} inputs but {len(y)} labels")
        records = [run_attack(self.classifier, x, label, config, seed=derive_seed(self.seed, i))
                   for i, (x, label) in enumerate(zip(images, y))]
        adv = np.stack([r.output_image for r in records]).reshape(np.shape(X))
        return adv, records, config

    def fit(self, X, y):
        adv, records, config = self._attack(X, y)
        self.adversarial_ = adv
        self.records_ = records
        self.stats_ = aggregate_stats(records, config.budget)
        self.robust_accuracy_ = robust_accuracy(records)
        return self

    def fit_transform(self, X, y=None, **fit_params):
        if y is None:
            return self.transform(X)
        return self.fit(X, y).adversarial_

    def transform(self, X):
        X_arr = np.asarray(X, dtype=float)
        labels = self.classifier.predict(X_arr.reshape(len(X_arr), -1))
        return self._attack(X_arr, labels)[0]

    def score(self, X, y):
        """Robust accuracy: fraction of inputs that stay correctly classified."""
        _, records, _ = self._attack(X, y)
        return robust_accuracy(records)
