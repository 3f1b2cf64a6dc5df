import numpy as np
import pytest

from coopsense.estimation import estimate_delay
from coopsense.fusion import build_fim_context, preliminary_position, search_region
from coopsense.harness import ExperimentConfig, generate_scenario, trial_rng
from coopsense.klt import window_covariance
from coopsense.scene import delay_bounds, synthesize_echo


class Trial:
    """Everything the FC knows after the estimate upload of one seeded trial."""

    def __init__(self, cfg: ExperimentConfig, trial: int):
        rng = trial_rng(cfg.seed, trial)
        self.scene, self.w = generate_scenario(cfg, rng)
        self.region = search_region(self.scene.target_region)
        self.records = [synthesize_echo(self.scene, self.w, n, rng) for n in range(self.scene.n_receivers)]
        self.estimates = []
        for n, rec in enumerate(self.records):
            lo, hi = delay_bounds(self.scene, n, self.region)
            pad = 3.0 * self.w.pulse_width
            self.estimates.append(estimate_delay(rec, self.w, self.scene.tx_energy,
                                                 float(self.scene.noise_var[n]), (lo - pad, hi + pad)))
        self.codecs = [window_covariance(e, self.w, self.scene.tx_energy,
                                         float(self.scene.noise_var[e.receiver_id])) for e in self.estimates]
        self.theta0 = preliminary_position(self.estimates, self.scene, self.region).theta
        self.ctx = build_fim_context(self.theta0, self.scene, self.estimates, self.codecs, self.w)


_TRIALS = {}


def make_trial(trial: int = 0, **overrides) -> Trial:
    key = (trial, tuple(sorted(overrides.items())))
    if key not in _TRIALS:
        _TRIALS[key] = Trial(ExperimentConfig(**overrides), trial)
    return _TRIALS[key]


@pytest.fixture(scope="session")
def default_trial():
    return make_trial(0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
