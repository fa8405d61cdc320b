"""Command line runner: train, evaluate, sweep, grid-search, oracle.

Every subcommand reads a TOML config. Unknown keys are rejected with the
offending key path so that a typo never silently falls back to a default.
Outputs are CSV/JSON/text and reproducible byte for byte from the config
and master seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import inspect
import json
import logging
import os
import platform
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import checks as suite
from . import estimators as est
from .adversary import CorrelationSpec
from .envs import TomatoConfig, make_chain, make_env
from .errors import ArtifactError, ConfigError, RobustPOError
from .evaluation import DEFAULT_R_MIN, evaluate_policy, r_grid_search, robustness_sweep, write_metrics_csv
from .mdp import SoftmaxPolicy
from .policy_opt import TrainConfig, train

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("robustpo")

OUT_ENV = "ROBUSTPO_OUT"
POLICY_MAGIC = "# robustpo-policy"
REFERENCE = "reference"
DEFAULT_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalSettings:
    r: float | None = None  # None -> the training r
    r_min: float = DEFAULT_R_MIN
    r_grid: tuple = DEFAULT_GRID
    n_samples: int = 1000
    tol: float = 0.02
    linear: bool = False
    max_proposals: int = 2_000_000


@dataclass(frozen=True)
class OracleSettings:
    n_instances: int = 50
    checks: tuple = tuple(suite.CHECKS)
    tolerances: suite.OracleTolerances = suite.OracleTolerances()


@dataclass(frozen=True)
class RunConfig:
    env_name: str
    env_params: dict
    train: TrainConfig
    evaluation: EvalSettings = EvalSettings()
    oracle: OracleSettings = OracleSettings()
    out: str | None = None
    seed: int = 0
    source: str = ""

    def canonical(self) -> dict:
        return {
            "seed": self.seed,
            "environment": {"name": self.env_name, **self.env_params},
            "algorithm": _jsonable(dataclasses.asdict(self.train)),
            "evaluation": _jsonable(dataclasses.asdict(self.evaluation)),
            "oracle": _jsonable(dataclasses.asdict(self.oracle)),
        }

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.canonical(), sort_keys=True).encode()).hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _reject_unknown(table: dict, allowed, where: str):
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)} (allowed: {', '.join(sorted(allowed))})")


def _field_names(cls):
    return [f.name for f in dataclasses.fields(cls)]


def _build(cls, table: dict, where: str, **nested):
    _reject_unknown(table, _field_names(cls), where)
    kwargs = {}
    for k, v in table.items():
        if k in nested:
            if not isinstance(v, dict):
                raise ConfigError(f"{where}.{k} must be a table")
            kwargs[k] = nested[k](v, f"{where}.{k}")
        elif isinstance(v, list):
            kwargs[k] = tuple(tuple(x) if isinstance(x, list) else x for x in v)
        else:
            kwargs[k] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


def _env_params(name: str, params: dict, where: str) -> dict:
    if name == "tomato":
        allowed = _field_names(TomatoConfig)
    elif name == "chain":
        allowed = list(inspect.signature(make_chain).parameters)
    else:
        raise ConfigError(f"{where}.name: unknown environment {name!r} (expected 'tomato' or 'chain')")
    _reject_unknown(params, allowed, where)
    return {k: (tuple(tuple(x) if isinstance(x, list) else x for x in v) if isinstance(v, list) else v) for k, v in params.items()}


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    _reject_unknown(doc, ("seed", "out", "environment", "algorithm", "evaluation", "oracle"), "top level")
    if "environment" not in doc:
        raise ConfigError(f"{source}: missing required section 'environment'")
    env = dict(doc["environment"])
    if "name" not in env:
        raise ConfigError(f"{source}: missing required key 'environment.name'")
    name = env.pop("name")
    params = _env_params(name, env, "environment")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")
    algo = dict(doc.get("algorithm", {}))
    algo.setdefault("seed", seed)
    train_cfg = _build(TrainConfig, algo, "algorithm", discriminator=lambda t, w: _build(est.DiscriminatorConfig, t, w))
    evaluation = _build(EvalSettings, doc.get("evaluation", {}), "evaluation")
    oracle = _build(OracleSettings, doc.get("oracle", {}), "oracle", tolerances=lambda t, w: _build(suite.OracleTolerances, t, w))
    unknown_checks = set(oracle.checks) - set(suite.CHECKS)
    if unknown_checks:
        raise ConfigError(f"oracle.checks: unknown check(s) {sorted(unknown_checks)}")
    out = doc.get("out")
    return RunConfig(name, params, train_cfg, evaluation, oracle, out, seed, source)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


def apply_overrides(cfg: RunConfig, seed=None, mode=None) -> RunConfig:
    train_cfg = cfg.train
    if seed is not None:
        train_cfg = replace(train_cfg, seed=seed)
        cfg = replace(cfg, seed=seed)
    if mode is not None:
        train_cfg = replace(train_cfg, mode=mode)
    return replace(cfg, train=train_cfg)


def output_dir(cfg: RunConfig, flag: str | None) -> Path:
    """--out, then the environment override, then the config, then ./runs."""
    chosen = flag or os.environ.get(OUT_ENV) or cfg.out or "runs"
    path = Path(chosen)
    path.mkdir(parents=True, exist_ok=True)
    return path


def build_env(cfg: RunConfig):
    try:
        return make_env(cfg.env_name, **cfg.env_params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid environment parameters: {exc}") from exc


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


def write_policy(path, policy: SoftmaxPolicy, meta: dict | None = None):
    n_s, n_a = policy.shape
    lines = [f"{POLICY_MAGIC} n_states={n_s} n_actions={n_a}"]
    if meta:
        lines.append("# " + " ".join(f"{k}={v}" for k, v in sorted(meta.items())))
    for row in policy.logits:
        lines.append(" ".join("%.17g" % v for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_policy(path) -> SoftmaxPolicy:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ArtifactError(f"{path}: cannot read policy artifact: {exc}") from exc
    if not lines or not lines[0].startswith(POLICY_MAGIC):
        raise ArtifactError(f"{path}: missing '{POLICY_MAGIC}' header")
    try:
        fields = dict(tok.split("=", 1) for tok in lines[0][len(POLICY_MAGIC):].split())
        n_s, n_a = int(fields["n_states"]), int(fields["n_actions"])
        rows = [ln for ln in lines[1:] if ln.strip() and not ln.startswith("#")]
        values = np.array([[float(x) for x in ln.split()] for ln in rows], dtype=np.float64)
    except (KeyError, ValueError) as exc:
        raise ArtifactError(f"{path}: malformed policy artifact: {exc}") from exc
    if values.shape != (n_s, n_a):
        raise ArtifactError(f"{path}: header says ({n_s}, {n_a}) but the table has shape {values.shape}")
    try:
        return SoftmaxPolicy(values)
    except RobustPOError as exc:
        raise ArtifactError(f"{path}: {exc}") from exc


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, cfg: RunConfig, command: str, outputs: list, extra: dict | None = None):
    doc = {
        "command": command,
        "config_sha256": cfg.digest(),
        "config": cfg.canonical(),
        "seed": cfg.seed,
        "versions": {"robustpo": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "outputs": {Path(p).name: _sha256(p) for p in outputs},
    }
    if extra:
        doc.update(_jsonable(extra))
    path = out / f"manifest_{command}.json"
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return path


def _load_policies(bundle, paths):
    items = []
    for p in paths:
        if p == REFERENCE:
            items.append((REFERENCE, bundle.reference))
            continue
        pol = read_policy(p)
        if pol.shape != bundle.mdp.shape:
            raise ArtifactError(f"{p}: policy shape {pol.shape} does not match environment shape {bundle.mdp.shape}")
        items.append((Path(p).stem, pol))
    return items


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_train(cfg: RunConfig, out: Path, jobs: int = 1) -> int:
    bundle = build_env(cfg)
    policy, trace = train(bundle, cfg.train)
    pol_path = out / "policy.txt"
    log_path = out / "train_log.csv"
    write_policy(pol_path, policy, {"env": cfg.env_name, "algorithm": cfg.train.algorithm, "r": cfg.train.r, "seed": cfg.train.seed})
    trace.write_csv(log_path)
    write_manifest(out, cfg, "train", [pol_path, log_path])
    print(f"wrote {pol_path} and {log_path}")
    return 0


def cmd_evaluate(cfg: RunConfig, out: Path, policies, jobs: int = 1) -> int:
    bundle = build_env(cfg)
    spec = CorrelationSpec(cfg.evaluation.r or cfg.train.r)
    rows = [
        evaluate_policy(bundle, pol, spec, cfg.evaluation.r_min, pid, linear=cfg.evaluation.linear)
        for pid, pol in _load_policies(bundle, policies)
    ]
    path = out / "metrics.csv"
    write_metrics_csv(rows, path)
    write_manifest(out, cfg, "evaluate", [path], {"policies": list(policies)})
    for row in rows:
        print(f"{row.policy_id}: worst={row.worst:.6g} occ_unseen={row.occ_unseen:.3g} worst_star={row.worst_star:.6g}")
    return 0


def cmd_sweep(cfg: RunConfig, out: Path, policies, jobs: int = 1) -> int:
    grid = cfg.evaluation.r_grid
    if len(grid) == 0:
        raise ConfigError("evaluation.r_grid must not be empty")
    bundle = build_env(cfg)
    result = robustness_sweep(bundle, _load_policies(bundle, policies), grid, cfg.evaluation.n_samples, cfg.seed, cfg.evaluation.tol, cfg.evaluation.max_proposals)
    path = out / "sweep.csv"
    result.write_csv(path)
    write_manifest(out, cfg, "sweep", [path], {"policies": list(policies)})
    print(f"wrote {len(result.cells)} sweep rows to {path}")
    return 0


def cmd_grid_search(cfg: RunConfig, out: Path, jobs: int = 1) -> int:
    grid = cfg.evaluation.r_grid
    if len(grid) == 0:
        raise ConfigError("evaluation.r_grid must not be empty")
    bundle = build_env(cfg)
    best, table, policies = r_grid_search(bundle, cfg.train.algorithm, grid, cfg.train, jobs=jobs, return_policies=True)
    path = out / "grid.csv"
    with open(path, "w") as fh:
        fh.write("r,worst,true_return,proxy_return\n")
        for row in table:
            fh.write(",".join("%.17g" % v for v in (row.r, row.worst, row.true_return, row.proxy_return)) + "\n")
    outputs = [path]
    for r, pol in sorted(policies.items()):
        p = out / f"policy_r{r:g}.txt"
        write_policy(p, pol, {"env": cfg.env_name, "algorithm": cfg.train.algorithm, "r": r, "seed": cfg.train.seed})
        outputs.append(p)
    write_manifest(out, cfg, "grid-search", outputs, {"best_r": best})
    print(f"best r = {best:g}")
    return 0


def cmd_oracle(cfg: RunConfig, out: Path, replay_path=None, jobs: int = 1) -> int:
    tols = cfg.oracle.tolerances
    if replay_path is not None:
        failure = json.loads(Path(replay_path).read_text())
        results = [suite.replay(failure, tols)]
    else:
        results = suite.run_suite(cfg.seed, cfg.oracle.n_instances, tols, cfg.oracle.checks)
    status = 0
    for res in results:
        print(res.line())
        if not res.passed:
            status = 1
            path = out / f"oracle_failure_{res.name}.json"
            path.write_text(suite.failure_json(res) + "\n")
            print(f"  failing instance written to {path}")
    return status


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robustpo", description="Correlation-robust policy optimisation on tabular MDPs.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="TOML run configuration")
        p.add_argument("--out", help=f"output directory (overrides ${OUT_ENV} and the config)")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for independent runs")
        p.add_argument("--mode", choices=("exact", "sampled"), help="training mode override")
        return p

    common(sub.add_parser("train", help="train one policy"))
    common(sub.add_parser("evaluate", help="metrics for policy artifacts")).add_argument("policies", nargs="+", help=f"policy files, or '{REFERENCE}'")
    common(sub.add_parser("sweep", help="feasible-theta robustness sweep")).add_argument("policies", nargs="+", help=f"policy files, or '{REFERENCE}'")
    common(sub.add_parser("grid-search", help="train over the r grid and pick the best"))
    oracle = common(sub.add_parser("oracle", help="randomised oracle suite"), config_required=False)
    oracle.add_argument("--replay", help="failure JSON written by a previous oracle run")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else parse_config('[environment]\nname = "chain"\nn_states = 4\n')
        cfg = apply_overrides(cfg, args.seed, args.mode)
        out = output_dir(cfg, args.out)
        if args.command == "train":
            return cmd_train(cfg, out, args.jobs)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, out, args.policies, args.jobs)
        if args.command == "sweep":
            return cmd_sweep(cfg, out, args.policies, args.jobs)
        if args.command == "grid-search":
            return cmd_grid_search(cfg, out, args.jobs)
        return cmd_oracle(cfg, out, args.replay, args.jobs)
    except RobustPOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
