"""Monte-Carlo recovery study: simulate, estimate several models, score elasticities.

Every trial draws a fresh dataset per sample size from its own stream
(``root / trial<k> / N<N>T<T>``), so trials are independent and can run in
any order or in parallel without changing results. The reference
elasticities of a trial are evaluated at the true parameters on that trial's
own dataset; RMSE is taken over trials of ``posterior-mean - truth``.
"""
from __future__ import annotations

import logging
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .dgp import DgpConfig, default_sharing, simulate_dataset
from .errors import BundleChoiceError, ConfigError
from .kernels import RngStream
from .mcmc import McmcSettings, ModelSpec, Priors, run_chain
from .predict import ChainSource, TruthSource, price_elasticities

log = logging.getLogger(__name__)

MODEL_LABELS = ("RE-Exo", "FA-Exo", "FA-Endo", "TVFA-Exo", "TVFA-Endo")


def parse_model(label: str) -> tuple[str, bool]:
    """``'TVFA-Endo'`` -> ``('TVFA', True)``."""
    try:
        structure, kind = str(label).split("-")
    except ValueError:
        raise ConfigError(f"model label {label!r} is not of the form <RE|FA|TVFA>-<Exo|Endo>") from None
    if structure not in ("RE", "FA", "TVFA") or kind not in ("Exo", "Endo"):
        raise ConfigError(f"unknown model {label!r}; choose from {MODEL_LABELS}")
    return structure, kind == "Endo"


@dataclass
class StudyConfig:
    trials: int = 10
    models: list = field(default_factory=lambda: ["FA-Exo", "TVFA-Endo"])
    sizes: list = field(default_factory=lambda: [{"N": 500, "T": 6}])
    dgp: dict = field(default_factory=dict)
    mcmc: dict = field(default_factory=lambda: {"burn_in": 2000, "draws": 2000})
    priors: dict = field(default_factory=dict)
    n_factors: dict = field(default_factory=dict)
    max_draws: int | None = 200
    truth_n_sim: int = 20
    step: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be positive")
        for m in self.models:
            parse_model(m)
        for s in self.sizes:
            if set(s) != {"N", "T"}:
                raise ConfigError("each size needs exactly the keys N and T")
        for m in self.n_factors:
            parse_model(m)

    def size_label(self, s) -> str:
        return f"N={s['N']},T={s['T']}"


@dataclass
class TrialRecord:
    trial: int
    size: str
    model: str
    ok: bool
    truth: list | None = None
    estimate: list | None = None
    alpha_mean: float | None = None
    alpha_sd: float | None = None
    error: str | None = None


def _alpha_index(names) -> int:
    for k, n in enumerate(names):
        if "z_1_1" in n.split("="):
            return k
    return 0


def run_trial(cfg: StudyConfig, trial: int) -> list[TrialRecord]:
    root = RngStream(cfg.seed).child(f"trial{trial}")
    out = []
    for size in cfg.sizes:
        label = cfg.size_label(size)
        stream = root.child(f"N{size['N']}T{size['T']}")
        dgp_kw = dict(cfg.dgp)
        dgp_kw.update(N=size["N"], T=size["T"])
        J = int(dgp_kw.get("J", 3))
        dcfg = DgpConfig.for_goods(J, **{k: v for k, v in dgp_kw.items() if k != "J"})
        data, truth = simulate_dataset(dcfg, stream.child("data"))
        tsrc = TruthSource.from_truth(truth, data)
        true_tab = price_elasticities(tsrc, data, rng=stream.child("truth"), n_sim=cfg.truth_n_sim,
                                      step=cfg.step)
        for m, model in enumerate(cfg.models):
            structure, endo = parse_model(model)
            mseed = int(stream.child(f"model:{model}").generator.integers(2**31))
            spec = ModelSpec(structure=structure, endogenous=endo, n_factors=cfg.n_factors.get(model),
                             priors=Priors(**cfg.priors), mcmc=McmcSettings(**{**cfg.mcmc, "seed": mseed}),
                             shared=truth.shared)
            try:
                chain = run_chain(data, spec)
                tab = price_elasticities(ChainSource(chain, cfg.max_draws), data,
                                         rng=stream.child(f"predict:{model}"), step=cfg.step)
                a = _alpha_index(chain.param_names)
                out.append(TrialRecord(trial, label, model, True, true_tab.good.tolist(), tab.good.tolist(),
                                       float(chain.theta[:, a].mean()), float(chain.theta[:, a].std(ddof=1))))
            except (BundleChoiceError, np.linalg.LinAlgError, FloatingPointError) as e:
                log.warning("trial %d, %s, %s failed: %s", trial, label, model, e)
                out.append(TrialRecord(trial, label, model, False, true_tab.good.tolist(), error=str(e)))
            log.info("trial %d %s %s done", trial, label, model)
    return out


@dataclass
class StudyResult:
    config: StudyConfig
    records: list

    @property
    def failures(self) -> int:
        return sum(not r.ok for r in self.records)

    def _cell(self, model, size):
        return [r for r in self.records if r.model == model and r.size == size and r.ok]

    def rmse(self, model: str, size: str) -> tuple[np.ndarray, np.ndarray, int]:
        """``(rmse, mc_se, n_ok)``; ``mc_se`` is a delta-method error bar over trials."""
        recs = self._cell(model, size)
        if not recs:
            return np.full((1, 1), np.nan), np.full((1, 1), np.nan), 0
        err = np.array([np.subtract(r.estimate, r.truth) for r in recs])
        sq = err ** 2
        mse = np.nanmean(sq, axis=0)
        rm = np.sqrt(mse)
        n = len(recs)
        with np.errstate(divide="ignore", invalid="ignore"):
            se = np.nanstd(sq, axis=0, ddof=1) / math.sqrt(n) / (2 * rm) if n > 1 else np.full_like(rm, np.nan)
        return rm, se, n

    def alpha_coverage(self, model: str, size: str, k: float = 3.0, alpha_true: float | None = None):
        a0 = self.config.dgp.get("alpha", -1.0) if alpha_true is None else alpha_true
        recs = self._cell(model, size)
        hits = [abs(r.alpha_mean - a0) <= k * r.alpha_sd for r in recs]
        return sum(hits), len(hits)

    def table_rows(self) -> list[list]:
        rows = []
        cfg = self.config
        for size in (cfg.size_label(s) for s in cfg.sizes):
            for model in cfg.models:
                rm, se, n = self.rmse(model, size)
                if n == 0:
                    continue
                J = rm.shape[0]
                recs = self._cell(model, size)
                truth = np.mean([r.truth for r in recs], axis=0)
                for j in range(J):
                    for k in range(J):
                        rows.append([size, model, f"E_{j + 1}{k + 1}", float(truth[j, k]), float(rm[j, k]),
                                     float(se[j, k]), n])
        return rows

    def as_dict(self) -> dict:
        return {"config": asdict(self.config), "failures": self.failures,
                "records": [asdict(r) for r in self.records]}


def _trial_job(args):
    cfg, trial = args
    try:
        return run_trial(cfg, trial)
    except Exception:  # keep the pool alive; the failure is recorded
        return [TrialRecord(trial, "*", "*", False, error=traceback.format_exc(limit=3))]


def run_study(cfg: StudyConfig, workers: int = 1, progress=None) -> StudyResult:
    jobs = [(cfg, k) for k in range(cfg.trials)]
    records = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            for recs in ex.map(_trial_job, jobs):
                records.extend(recs)
                if progress:
                    progress(recs)
    else:
        for job in jobs:
            recs = _trial_job(job)
            records.extend(recs)
            if progress:
                progress(recs)
    return StudyResult(cfg, records)


def sharing_for(J: int):
    return default_sharing(J)
