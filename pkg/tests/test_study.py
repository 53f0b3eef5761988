import numpy as np
import pytest

from bundlechoice.errors import ConfigError
from bundlechoice.study import StudyConfig, parse_model, run_study


def test_parse_model():
    assert parse_model("TVFA-Endo") == ("TVFA", True)
    assert parse_model("RE-Exo") == ("RE", False)
    with pytest.raises(ConfigError):
        parse_model("TV-FA Endo")


def test_tiny_study_populates_table():
    cfg = StudyConfig(trials=1, models=["RE-Exo", "FA-Exo", "TVFA-Endo"], sizes=[{"N": 40, "T": 3}],
                      mcmc={"burn_in": 10, "draws": 10}, max_draws=5, truth_n_sim=1, seed=1)
    res = run_study(cfg)
    assert res.failures == 0
    for m in cfg.models:
        rm, se, n = res.rmse(m, "N=40,T=3")
        assert n == 1 and rm.shape == (3, 3) and np.all(np.isfinite(rm))
    rows = res.table_rows()
    assert len(rows) == 27
    hits, n = res.alpha_coverage("TVFA-Endo", "N=40,T=3")
    assert n == 1 and hits in (0, 1)


def test_trials_are_order_independent():
    base = dict(models=["FA-Exo"], sizes=[{"N": 30, "T": 2}], mcmc={"burn_in": 3, "draws": 3}, max_draws=2,
                truth_n_sim=1, seed=4)
    two = run_study(StudyConfig(trials=2, **base))
    one = run_study(StudyConfig(trials=1, **base))
    assert two.records[0].estimate == one.records[0].estimate


def test_config_validation():
    with pytest.raises(ConfigError):
        StudyConfig(trials=0)
    with pytest.raises(ConfigError):
        StudyConfig(sizes=[{"N": 3}])
