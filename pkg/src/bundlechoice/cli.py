"""Command-line front door.

    bundlechoice simulate|estimate|predict|mc-study --config run.json [--seed N] [--out DIR] [--threads K]

Every run writes ``manifest.json`` next to its outputs with the resolved
configuration, its hash, the seed, the package version and sha256 digests of
inputs and outputs. Exit codes: 0 success, 2 configuration or usage error,
3 data or file error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .dgp import DgpConfig, default_sharing, simulate_dataset
from .errors import BundleChoiceError, ConfigError, UsageError
from .io import (read_chain, read_json, read_panel, write_chain, write_elasticities, write_json, write_panel,
                 write_shares, write_summary)
from .kernels import RngStream
from .mcmc import ModelSpec, continue_chain, data_hash, run_chain
from .predict import ChainSource, Scenario, predict_shares, price_elasticities
from .study import StudyConfig, run_study

log = logging.getLogger("bundlechoice")

COMMANDS = ("simulate", "estimate", "predict", "mc-study")
_REQUIRED = {"simulate": (), "estimate": ("data", "model"), "predict": ("data", "chain"), "mc-study": ("study",)}


def load_schema() -> dict:
    return json.loads(resources.files("bundlechoice").joinpath("schemas/run_config.json").read_text())


def validate_config(doc: dict, command: str | None = None) -> None:
    try:
        jsonschema.validate(doc, load_schema())
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {e.message}") from None
    if command is not None:
        missing = [k for k in _REQUIRED[command] if k not in doc]
        if missing:
            raise ConfigError(f"{command} needs config sections {missing}")


@dataclass
class RunConfig:
    command: str
    doc: dict
    base_dir: Path
    seed: int = 0
    out: Path = Path(".")
    threads: int = 1
    inputs: dict = field(default_factory=dict)

    @classmethod
    def load(cls, command: str, path, seed=None, out=None, threads=None) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        validate_config(doc, command)
        if seed is not None:
            doc["seed"] = int(seed)
        env = os.environ.get("BUNDLECHOICE_THREADS")
        if threads is None and env:
            try:
                threads = int(env)
            except ValueError:
                raise ConfigError(f"BUNDLECHOICE_THREADS must be an integer, got {env!r}") from None
        threads = int(threads if threads is not None else doc.get("threads", 1))
        if threads < 1:
            raise ConfigError("threads must be positive")
        base = path.resolve().parent
        out_dir = Path(out) if out is not None else base / doc.get("out", "out")
        return cls(command, doc, base, int(doc.get("seed", 0)), out_dir, threads)

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.doc, sort_keys=True).encode()).hexdigest()[:16]


def _sha(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _manifest(rc: RunConfig, outputs: list[str], extra=None) -> None:
    man = {
        "command": rc.command,
        "config": rc.doc,
        "config_hash": rc.config_hash(),
        "seed": rc.seed,
        "version": __version__,
        "numpy": np.__version__,
        "inputs": {str(k): _sha(v) for k, v in rc.inputs.items()},
        "outputs": {name: _sha(rc.out / name) for name in outputs},
    }
    if extra:
        man.update(extra)
    write_json(man, rc.out / "manifest.json")


def _shared(doc_model: dict, J: int):
    shared = doc_model.get("shared", ())
    return default_sharing(J) if shared == "default" else shared


def _load_data(rc: RunConfig):
    dpath = rc.path(rc.doc["data"]["path"])
    rc.inputs[dpath.name] = dpath
    return read_panel(dpath, rc.doc["data"].get("price_slot", 0))


def _prepare_out(rc: RunConfig) -> None:
    try:
        rc.out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        from .errors import ArtifactIOError
        raise ArtifactIOError(f"cannot create output directory {rc.out}: {e}") from e


def cmd_simulate(rc: RunConfig) -> list[str]:
    cfg = dict(rc.doc.get("dgp", {}))
    cfg["seed"] = rc.seed
    J = int(cfg.pop("J", 3))
    dcfg = DgpConfig.for_goods(J, **cfg)
    data, truth = simulate_dataset(dcfg)
    _prepare_out(rc)
    write_panel(data, rc.out / "panel.csv")
    (rc.out / "truth.json").write_text(truth.to_json() + "\n", encoding="utf-8")
    log.info("simulated %d rows (N=%d, T=%d, J=%d)", data.n_obs, data.N, data.T, J)
    return ["panel.csv", "truth.json"]


def cmd_estimate(rc: RunConfig) -> list[str]:
    data = _load_data(rc)
    model = dict(rc.doc["model"])
    model["shared"] = _shared(model, data.choice_set.J)
    mc = dict(model.get("mcmc", {}))
    mc["seed"] = rc.seed
    model["mcmc"] = mc
    spec = ModelSpec.from_dict(model)
    _prepare_out(rc)
    if "resume" in rc.doc:
        cpath = rc.path(rc.doc["resume"]["chain"])
        rc.inputs[cpath.name] = cpath
        prev = read_chain(cpath)
        if prev.spec.spec_hash() != spec.spec_hash():
            raise UsageError("resume chain was produced by a different model specification "
                             f"({prev.spec.spec_hash()} vs {spec.spec_hash()})")
        chain = continue_chain(data, prev, rc.doc["resume"]["sweeps"])
    else:
        chain = run_chain(data, spec)
    write_chain(chain, rc.out / "chain.bin")
    write_summary(chain, rc.out / "summary.csv")
    log.info("%s: %d draws stored", spec.label, chain.n_draws)
    return ["chain.bin", "summary.csv"]


def cmd_predict(rc: RunConfig) -> list[str]:
    data = _load_data(rc)
    cpath = rc.path(rc.doc["chain"])
    rc.inputs[cpath.name] = cpath
    chain = read_chain(cpath)
    if chain.metadata.get("data_hash") != data_hash(data):
        raise UsageError("chain was estimated on a different dataset (data hash mismatch); refusing to predict")
    if chain.metadata.get("spec_hash") != chain.spec.spec_hash():
        raise UsageError("chain header is inconsistent: stored spec hash does not match its specification")
    opts = rc.doc.get("predict", {})
    src = ChainSource(chain, opts.get("max_draws", 200))
    n_sim = int(opts.get("n_sim", 1))
    root = RngStream(rc.seed).child("predict")
    _prepare_out(rc)
    outputs = []
    base = predict_shares(src, data, None, rng=root.child("scenario:baseline"), n_sim=n_sim)
    write_shares(base, rc.out / "shares_baseline.csv")
    outputs.append("shares_baseline.csv")
    results = {"baseline": {"bundle": base.bundle.tolist(), "good": base.good.tolist()}}
    for k, sc in enumerate(opts.get("scenarios", [])):
        label = sc.get("label", f"scenario{k + 1}")
        scen = Scenario(tuple(sc["price_multipliers"]), label, dict(sc.get("overrides", {})))
        # same stream as the baseline: shares differ only through the scenario
        res = predict_shares(src, data, scen, rng=root.child("scenario:baseline"), n_sim=n_sim)
        name = f"shares_{label}.csv"
        write_shares(res, rc.out / name)
        outputs.append(name)
        results[label] = {"bundle": res.bundle.tolist(), "good": res.good.tolist()}
    if opts.get("elasticities", True):
        tab = price_elasticities(src, data, rng=root.child("elasticities"), n_sim=n_sim,
                                 step=float(opts.get("step", 0.05)),
                                 common_random_numbers=bool(opts.get("common_random_numbers", True)))
        write_elasticities(tab, rc.out / "elasticities.csv")
        write_json(tab.as_dict(), rc.out / "elasticities.json")
        outputs += ["elasticities.csv", "elasticities.json"]
        for d in tab.diagnostics:
            log.warning(d)
    write_json(results, rc.out / "shares.json")
    outputs.append("shares.json")
    return outputs


def cmd_mc_study(rc: RunConfig) -> list[str]:
    st = dict(rc.doc["study"])
    st["seed"] = rc.seed
    cfg = StudyConfig(**st)

    def progress(recs):
        for r in recs:
            log.info("trial %d %s %s %s", r.trial, r.size, r.model, "ok" if r.ok else f"FAILED: {r.error}")

    res = run_study(cfg, workers=rc.threads, progress=progress)
    _prepare_out(rc)
    write_json(res.as_dict(), rc.out / "study_records.json")
    from .io import _write_rows

    _write_rows(rc.out / "rmse.csv", ["size", "model", "elasticity", "truth_mean", "rmse", "mc_se", "trials"],
                res.table_rows())
    cov = [[cfg.size_label(s), m, *res.alpha_coverage(m, cfg.size_label(s))] for s in cfg.sizes for m in cfg.models]
    _write_rows(rc.out / "alpha_coverage.csv", ["size", "model", "within_3sd", "trials"], cov)
    if res.failures:
        log.warning("%d trial/model runs failed and were excluded", res.failures)
    rc.failures = res.failures
    return ["study_records.json", "rmse.csv", "alpha_coverage.csv"]


HANDLERS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "predict": cmd_predict, "mc-study": cmd_mc_study}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bundlechoice", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--out", help="output directory (default: config 'out' or ./out next to the config)")
    ap.add_argument("--threads", type=int, help="worker processes for mc-study (env BUNDLECHOICE_THREADS)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = RunConfig.load(args.command, args.config, args.seed, args.out, args.threads)
        outputs = HANDLERS[args.command](rc)
        failures = getattr(rc, "failures", 0)
        _manifest(rc, outputs, {"failures": failures} if args.command == "mc-study" else None)
    except BundleChoiceError as e:
        print(f"bundlechoice {args.command}: {e}", file=sys.stderr)
        return e.exit_code
    if getattr(rc, "failures", 0):
        print(f"bundlechoice mc-study: {rc.failures} runs failed (see study_records.json)", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
