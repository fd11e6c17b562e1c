"""Command-line experiment runner.

Exit codes: 0 pass, 1 check failure, 2 config error, 3 I/O error.
All JSON outputs embed the resolved config and a schema version and are
written with sorted keys, so equal seeds give byte-identical files.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .bounds import assemble_overall, early_stopping_bound, model_marginal, sweep, sweep_csv
from .config import ExperimentConfig, load_config
from .core import total_variation
from .ctmc import RngStream, build_partition, empirical_distribution, uniformization_samples
from .exceptions import ConfigError, DiscreteFlowError, RateBoundError
from .paths import OracleRate, boundedness_constants
from .rates import Rate, ZeroRate
from .train import SCHEMA_VERSION, TabularRateModel, decompose_error, fit_tabular, generate_dataset, k1_diagnostic
from .validation import run_suite

log = logging.getLogger("discrete_flow")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3
SAMPLE_CHUNK = 50_000


class ModelLoadError(DiscreteFlowError):
    """A model file could not be read or parsed."""


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _payload(cfg: ExperimentConfig, **body) -> dict:
    return {"schema_version": SCHEMA_VERSION, "config": cfg.to_json(), **body}


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    log.info("wrote %s", path)
    return path


def load_model(path, cfg: ExperimentConfig) -> Rate:
    """'oracle', 'zero', or a tabular model JSON file written by ``train``."""
    if path == "oracle":
        return OracleRate(cfg.path, cfg.target_model())
    if path == "zero":
        return ZeroRate(cfg.space)
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
        model = TabularRateModel.from_json(obj, cfg.path)
    except OSError as exc:
        raise ModelLoadError(f"cannot read model file {path}: {exc}") from exc
    except (ValueError, KeyError, TypeError, DiscreteFlowError) as exc:
        raise ModelLoadError(f"corrupted model file {path}: {exc}") from exc
    if model.space != cfg.space:
        raise ModelLoadError(f"model file {path} is for {model.space}, config has {cfg.space}")
    return model


# ---------------------------------------------------------------------------
# Commands


def cmd_validate(cfg: ExperimentConfig, out: Path, threads: int = 1) -> int:
    checks = run_suite(cfg, threads)
    ok = all(c.passed for c in checks)
    _write(out, "validate.json", dumps(_payload(cfg, passed=ok, checks=[c.to_json() for c in checks])))
    for c in checks:
        log.info("%-30s %s value=%.6g threshold=%.6g", c.name, "PASS" if c.passed else "FAIL",
                 c.value, c.threshold)
    if not ok:
        first = next(c for c in checks if not c.passed)
        print(f"check failed: {first.name} (value {first.value:.6g} > threshold {first.threshold:.6g})",
              file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def _train(cfg: ExperimentConfig):
    path, target = cfg.path, cfg.target_model()
    data = generate_dataset(path, target, cfg.tau, cfg.n_samples, RngStream(cfg.seed, 1))
    model = fit_tabular(data, path, cfg.n_time_bins, cfg.clamp)
    return data, model, decompose_error(model, data, path, target, cfg.tau)


def cmd_train(cfg: ExperimentConfig, out: Path, threads: int = 1) -> int:
    data, model, report = _train(cfg)
    _write(out, "dataset.csv", data.to_csv())
    _write(out, "model.json", dumps({**model.to_json(), "config": cfg.to_json()}))
    _write(out, "loss_report.json", dumps(_payload(cfg, loss=report.to_json())))
    return EXIT_OK


def _model_identity(model_path) -> dict:
    """Model name and content hash; the directory is omitted so reports do not depend on it."""
    if model_path in ("oracle", "zero"):
        return {"model": model_path}
    path = Path(model_path)
    return {"model": path.name, "model_sha256": hashlib.sha256(path.read_bytes()).hexdigest()}


def cmd_sample(cfg: ExperimentConfig, out: Path, model_path, threads: int = 1) -> int:
    model = load_model(model_path, cfg)
    path, target = cfg.path, cfg.target_model()
    p0 = path.source_distribution()
    part = build_partition(model, cfg.tau, cfg.n_intervals)
    single = build_partition(model, cfg.tau, 1)
    rng = RngStream(cfg.seed, 2)
    n = cfg.n_trajectories
    sizes = [min(SAMPLE_CHUNK, n - lo) for lo in range(0, n, SAMPLE_CHUNK)]

    def run(i):
        return uniformization_samples(model, p0, part, rng.substream(i), sizes[i], return_draws=True)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(i) for i in range(len(sizes))]
    y = np.concatenate([p[0] for p in parts])
    draws = int(sum(int(np.sum(p[1])) for p in parts))
    log.info("Poisson candidate draws: %d (expected %.1f per chain with %d intervals, %.1f with one)",
             draws, part.expected_steps, len(part.lambdas), single.expected_steps)
    emp = empirical_distribution(cfg.space, y)
    p_hat = model_marginal(model, path, cfg.tau)
    _write(out, "samples.csv", "x\n" + "".join(f"{int(v)}\n" for v in y))
    report = {
        **_model_identity(model_path), "n": n,
        "tv_to_model_marginal": total_variation(emp, p_hat),
        "tv_to_p1": total_variation(emp, target.p1),
        "mc_error": math.sqrt(cfg.space.n_states / (4.0 * n)),
        "varrho": early_stopping_bound(path.schedule, cfg.space, cfg.tau),
        "poisson_draws": draws,
        "expected_steps": part.expected_steps,
        "expected_steps_single_interval": single.expected_steps,
    }
    _write(out, "sample_report.json", dumps(_payload(cfg, sample=report)))
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, out: Path, threads: int = 1) -> int:
    sw = cfg.sweep or {}
    if not any(sw.get(k) for k in ("taus", "ns", "seeds")):
        raise ConfigError("sweep spec is empty; give at least one of sweep.taus, sweep.ns, sweep.seeds")
    taus = sw.get("taus") or [cfg.tau]
    ns = sw.get("ns") or [cfg.n_samples]
    seeds = sw.get("seeds") or [cfg.seed]
    rows = sweep(cfg.path, cfg.target_model(), taus, ns, seeds, cfg.n_time_bins, cfg.clamp)
    _write(out, "sweep.csv", sweep_csv(rows))
    _write(out, "sweep.json", dumps(_payload(cfg, rows=rows)))
    return EXIT_OK


def cmd_bounds(cfg: ExperimentConfig, out: Path, threads: int = 1) -> int:
    path, target = cfg.path, cfg.target_model()
    _, model, loss = _train(cfg)
    report = assemble_overall(loss, model, path, target, cfg.tau)
    m_bar_c, m_under_c = boundedness_constants(path, target, cfg.tau)
    _write(out, "bounds.json", dumps(_payload(
        cfg, bounds=report.to_json(), loss=loss.to_json(),
        k1=k1_diagnostic(m_bar_c, m_under_c, cfg.clamp), m_bar_c=m_bar_c, m_under_c=m_under_c,
    )))
    return EXIT_OK if report.holds else EXIT_FAIL


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="discrete-flow", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("validate", "train", "sample", "sweep", "bounds"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--seed", type=int, help="override the config seed (unsigned 64-bit)")
        p.add_argument("--out", help="output directory (overrides out_dir)")
        p.add_argument("--threads", type=int, default=1, help="worker threads for trajectory batches")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "sample":
            p.add_argument("--model", help="model JSON path, 'oracle' or 'zero' (default: <out>/model.json)")
    return ap


def _resolve(args) -> tuple[ExperimentConfig, Path]:
    cfg = load_config(args.config)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError(f"--seed must be an unsigned 64-bit integer, got {args.seed}")
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = dataclasses.replace(cfg, out_dir=args.out)
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    return cfg, Path(cfg.out_dir)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg, out = _resolve(args)
        if args.command == "validate":
            return cmd_validate(cfg, out, args.threads)
        if args.command == "train":
            return cmd_train(cfg, out, args.threads)
        if args.command == "sample":
            model = args.model if args.model is not None else str(out / "model.json")
            return cmd_sample(cfg, out, model, args.threads)
        if args.command == "sweep":
            return cmd_sweep(cfg, out, args.threads)
        return cmd_bounds(cfg, out, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ModelLoadError as exc:
        print(f"load error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except RateBoundError as exc:
        print(f"sampler error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
