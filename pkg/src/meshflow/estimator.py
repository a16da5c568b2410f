"""Scikit-learn style estimator wrapping the fit/deform pipeline."""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .flow import FlowConfig, integrate
from .mesh import TriangleMesh, make_icosphere
from .synthetic import DEFAULT_BASE_RADIUS
from .train import ParameterSet, default_schedule, evaluate_chamfer, fit
from .validation import check_condition_array, check_mesh, check_target_meshes


class TemplateDeformer(BaseEstimator):
    """Learns condition-dependent deformations of a template sphere.

    ``fit`` takes conditions X (shape (n,) or (n, 1)) and target meshes y,
    and optimizes a multi-resolution velocity-field mixture whose flow
    carries the template onto each target. ``predict`` integrates the
    learned flow for new conditions and returns the deformed meshes.

    Parameters
    ----------
    n_levels, n_fields, base_resolution:
        Velocity pyramid size: R resolution levels (each half the previous,
        finest = base_resolution^3) with M fields per level.
    hidden:
        Widths of the attention network's hidden layers.
    mode:
        'ctvf' (full), 'tvf' (ignore condition), 'cvf' (ignore time) or
        'svf' (ignore both).
    a_range:
        Condition range mapped onto [-1, 1] for the attention input.
    steps, horizon:
        Euler step count K and integration horizon T.
    stage_epochs, loss, n_samples, steps_per_item:
        Two-stage schedule controls (see train.default_schedule).
    seed:
        Seed for network init and per-epoch surface sampling.
    """

    def __init__(
        self,
        n_levels: int = 3,
        n_fields: int = 4,
        base_resolution: int = 16,
        hidden=(64, 64),
        mode: str = "ctvf",
        a_range=(27.0, 45.0),
        steps: int = 50,
        horizon: float = 1.0,
        stage_epochs=(30, 30),
        loss: str = "chamfer",
        n_samples: int = 2000,
        steps_per_item: int = 16,
        seed: int = 0,
    ):
        self.n_levels = n_levels
        self.n_fields = n_fields
        self.base_resolution = base_resolution
        self.hidden = hidden
        self.mode = mode
        self.a_range = a_range
        self.steps = steps
        self.horizon = horizon
        self.stage_epochs = stage_epochs
        self.loss = loss
        self.n_samples = n_samples
        self.steps_per_item = steps_per_item
        self.seed = seed

    def _flow_config(self) -> FlowConfig:
        return FlowConfig(steps=self.steps, horizon=self.horizon)

    def fit(self, X, y, template: TriangleMesh | None = None):
        """Learn fields deforming the template onto the targets in y."""
        a = check_condition_array(X)
        targets = check_target_meshes(y, len(a))
        if template is None:
            template = make_icosphere(4, radius=DEFAULT_BASE_RADIUS)
        check_mesh(template, "template")

        params = ParameterSet.create(
            n_levels=self.n_levels,
            n_fields=self.n_fields,
            base_resolution=self.base_resolution,
            hidden=tuple(self.hidden),
            mode=self.mode,
            a_range=tuple(self.a_range),
            seed=self.seed,
        )
        schedule = default_schedule(
            epochs=tuple(self.stage_epochs),
            loss=self.loss,
            n_samples=self.n_samples,
            steps_per_item=self.steps_per_item,
        )
        result = fit(
            list(zip(a, targets)), template, params,
            schedule=schedule, seed=self.seed, flow=self._flow_config(),
        )
        self.params_ = params
        self.template_ = template
        self.history_ = result.history
        self.diverged_ = result.diverged
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        """Deformed template meshes for each condition in X."""
        check_is_fitted(self, "params_")
        a = check_condition_array(X)
        return [
            integrate(self.template_, self.params_.pyramid, self.params_.net,
                      float(ai), self._flow_config())
            for ai in a
        ]

    def transform(self, X):
        """Alias of predict, for pipeline-style use."""
        return self.predict(X)

    def score(self, X, y, n_samples: int = 4000, seed: int = 12345) -> float:
        """Negative mean sampled chamfer distance (greater is better)."""
        check_is_fitted(self, "params_")
        a = check_condition_array(X)
        targets = check_target_meshes(y, len(a))
        return -evaluate_chamfer(
            self.params_, list(zip(a, targets)), self.template_,
            n=n_samples, seed=seed, flow=self._flow_config(),
        )
