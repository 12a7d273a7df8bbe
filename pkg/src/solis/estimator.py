"""scikit-learn style estimators wrapping the curriculum trainer and the baselines."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_dataset, check_states
from .blocks import MlpSpec, MoeSpec, RffSpec
from .evaluation import (BaselineResult, BaselineSpec, BaselineTrainer, evaluate_rollout,
                         portrait_similarity, reconstruction_accuracy)
from .networks import ParameterNetwork, SolutionNetwork
from .surrogate import canonical_fields, linear_input, rollout
from .trainer import CurriculumTrainer, TrainConfig, TrainingData


class _SolutionModel(BaseEstimator):
    """Shared solution-network plumbing: architecture options and reconstruction."""

    def _solution_network(self, normalization):
        rff = RffSpec(self.rff_features, self.rff_sigma) if self.rff_features else None
        return SolutionNetwork(hidden=tuple(self.sol_hidden), gru_hidden=self.gru_hidden,
                               context_points=self.context_points, use_x0=True, rff=rff,
                               normalization=normalization)

    def _config(self):
        cfg = self.train_config if self.train_config is not None else TrainConfig()
        return TrainConfig.from_dict({**cfg.to_dict(), "seed": self.seed})

    def reconstruct(self, dataset, times=None):
        """Solution-network states ``(n, 2)`` for every trajectory of ``dataset``.

        Trajectories need not be the training ones: the context encoder only
        uses each trajectory's input profile and first measurement.
        """
        check_is_fitted(self, "sol_params_")
        dataset = check_dataset(dataset)
        u_seqs, x0n = self.sol_net_.context_inputs(list(dataset))
        ctx = self.sol_net_.context(self.sol_params_, u_seqs, x0n)
        out = []
        for j, tr in enumerate(dataset):
            t = tr.t_meas if times is None else np.asarray(times[j], dtype=float)
            y, v = self.sol_net_.forward(self.sol_params_, t, np.full(t.size, j), ctx,
                                         self.sol_buffers_)
            out.append(np.column_stack([y, v]))
        return out

    def reconstruction_scores(self, dataset):
        states = self.reconstruct(dataset)
        return reconstruction_accuracy(lambda j, t: (states[j][:, 0], states[j][:, 1]), dataset)

    # -- surrogate ------------------------------------------------------

    def coefficients(self, y, v, u):
        """Surrogate coefficients ``(k, d, g)`` at the given states and inputs."""
        check_is_fitted(self, "sol_params_")
        y, v, u = check_states(y, v, u)
        return self.coefficient_fn()(y, v, u)

    def canonical(self, y, v, u):
        """``(omega_n, zeta, gain, valid)`` along states; NaN where k <= 0."""
        return canonical_fields(*self.coefficients(y, v, u))

    def simulate(self, x0, t_input, u_input, grid):
        """Open-loop rollout from ``x0`` under a sampled input; returns ``(n, 2)``."""
        return rollout(self.coefficient_fn(), np.asarray(x0, dtype=float),
                       linear_input(t_input, u_input), np.asarray(grid, dtype=float))

    def predict(self, dataset):
        """Rollout predictions at the measurement times, one ``(n, 2)`` array per trajectory."""
        res = evaluate_rollout(self.coefficient_fn(), check_dataset(dataset))
        return [None if p is None else np.column_stack(p[1:]) for p in res.predictions]

    def score(self, dataset, y=None):
        """Mean open-loop rollout accuracy in percent."""
        check_is_fitted(self, "sol_params_")
        return evaluate_rollout(self.coefficient_fn(), check_dataset(dataset)).mean

    def portrait_similarity(self, dataset, resolution=41):
        dataset = check_dataset(dataset)
        if dataset.spec is None:
            raise ValueError("portrait similarity needs a dataset with a known system")
        return portrait_similarity(self.coefficient_fn(), dataset.spec,
                                   dataset.measurement_states(), resolution)[0]


class SOLIS(_SolutionModel):
    """State-conditioned second-order surrogate learned with the two-phase curriculum.

    Parameters mirror the architecture of both networks; training options
    live in ``train_config`` (a :class:`TrainConfig`) and are reachable as
    ``train_config__<name>`` through ``set_params``.
    """

    def __init__(self, train_config=None, sol_hidden=(64, 64), gru_hidden=16, context_points=32,
                 rff_features=0, rff_sigma=1.0, param_hidden=(32, 32), augment=False,
                 n_experts=0, theta_scale=(1.0, 1.0, 1.0), seed=0):
        self.train_config = train_config
        self.sol_hidden = sol_hidden
        self.gru_hidden = gru_hidden
        self.context_points = context_points
        self.rff_features = rff_features
        self.rff_sigma = rff_sigma
        self.param_hidden = param_hidden
        self.augment = augment
        self.n_experts = n_experts
        self.theta_scale = theta_scale
        self.seed = seed

    def _parameter_network(self, normalization):
        moe = None
        if self.n_experts:
            nf = 9 if self.augment else 3
            moe = MoeSpec(self.n_experts, MlpSpec(nf, tuple(self.param_hidden), 3),
                          MlpSpec(nf, (16,), self.n_experts))
        return ParameterNetwork(hidden=tuple(self.param_hidden), augment=self.augment, moe=moe,
                                theta_scale=self.theta_scale, normalization=normalization)

    def build_trainer(self, dataset):
        dataset = check_dataset(dataset)
        sol = self._solution_network(dataset.normalization)
        par = self._parameter_network(dataset.normalization)
        return CurriculumTrainer(sol, par, self._config(), TrainingData(dataset, sol))

    def fit(self, dataset, y=None, callback=None):
        trainer = self.build_trainer(dataset)
        trainer.fit(callback=callback)
        return self._adopt(trainer, dataset)

    def _adopt(self, trainer, dataset):
        self.trainer_ = trainer
        self.sol_net_ = trainer.sol_net
        self.param_net_ = trainer.param_net
        self.sol_params_ = trainer.sol_params
        self.sol_buffers_ = trainer.sol_buffers
        self.param_params_ = trainer.param_params
        self.log_ = trainer.log
        self.dataset_hash_ = dataset.dataset_hash
        return self

    def coefficient_fn(self):
        check_is_fitted(self, "param_params_")
        return self.param_net_.coefficient_fn(self.param_params_)

    def model_payload(self, best=False):
        """Architecture and weights; ``best=True`` uses the best Phase-1 snapshot."""
        check_is_fitted(self, "param_params_")
        sol, par = self.sol_params_, self.param_params_
        if best and self.trainer_.best is not None:
            sol, par = self.trainer_.best["sol_params"], self.trainer_.best["param_params"]
        return {"model": "solis",
                "architecture": {"solution": self.sol_net_.to_dict(),
                                 "parameter": self.param_net_.to_dict()},
                "weights": {"solution": sol, "buffers": self.sol_buffers_, "parameter": par}}

    def load_payload(self, payload):
        arch = payload["architecture"]
        self.sol_net_ = SolutionNetwork(**arch["solution"])
        self.param_net_ = ParameterNetwork(**arch["parameter"])
        self.sol_params_ = payload["weights"]["solution"]
        self.sol_buffers_ = payload["weights"]["buffers"]
        self.param_params_ = payload["weights"]["parameter"]
        return self


class IPINN(_SolutionModel):
    """Inverse PINN with three global coefficients.

    ``kind="ipinn"`` trains on the single trajectory ``trajectory``;
    ``kind="ipinn_m"`` shares the coefficients across every trajectory and
    uses the same conditioned solution network as :class:`SOLIS`.
    """

    def __init__(self, kind="ipinn_m", trajectory=0, train_config=None, sol_hidden=(64, 64),
                 gru_hidden=16, context_points=32, rff_features=0, rff_sigma=1.0, seed=0):
        self.kind = kind
        self.trajectory = trajectory
        self.train_config = train_config
        self.sol_hidden = sol_hidden
        self.gru_hidden = gru_hidden
        self.context_points = context_points
        self.rff_features = rff_features
        self.rff_sigma = rff_sigma
        self.seed = seed

    def build_trainer(self, dataset):
        dataset = check_dataset(dataset)
        sol = self._solution_network(dataset.normalization)
        return BaselineTrainer(BaselineSpec(self.kind, self.trajectory), dataset, self._config(),
                               sol)

    def fit(self, dataset, y=None):
        trainer = self.build_trainer(dataset).fit()
        return self._adopt(trainer, dataset)

    def _adopt(self, trainer, dataset):
        res = trainer.result()
        self.trainer_ = trainer
        self.result_ = res
        self.sol_net_ = res.sol_net
        self.sol_params_ = res.sol_params
        self.sol_buffers_ = res.sol_buffers
        self.theta_ = res.theta
        self.log_ = res.log
        self.dataset_hash_ = dataset.dataset_hash
        self.training_set_ = trainer.dataset
        return self

    def reconstruct(self, dataset, times=None):
        """As :meth:`SOLIS.reconstruct`; a single-trajectory model only sees its own trajectory."""
        return super().reconstruct(BaselineSpec(self.kind, self.trajectory).select(dataset), times)

    def model_payload(self):
        check_is_fitted(self, "theta_")
        return {"model": BaselineSpec(self.kind).kind, "trajectory": self.trajectory,
                "architecture": {"solution": self.sol_net_.to_dict()},
                "weights": {"solution": self.sol_params_, "buffers": self.sol_buffers_,
                            "theta": self.theta_}}

    def load_payload(self, payload):
        self.sol_net_ = SolutionNetwork(**payload["architecture"]["solution"])
        self.sol_params_ = payload["weights"]["solution"]
        self.sol_buffers_ = payload["weights"]["buffers"]
        self.theta_ = np.asarray(payload["weights"]["theta"], dtype=float)
        self.result_ = BaselineResult(BaselineSpec(self.kind, self.trajectory), self.sol_net_,
                                      self.sol_params_, self.sol_buffers_, self.theta_, [])
        return self

    def coefficient_fn(self):
        check_is_fitted(self, "theta_")
        return self.result_.coefficient_fn()
