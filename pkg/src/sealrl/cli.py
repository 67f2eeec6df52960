"""Command-line pipeline driver.

Subcommands cover data generation, each training stage, evaluation, the
full pipeline, and exact oracle tables for tabular MDP files.  Every
command reads one JSON config (sections: env / data / qlearn / ratio /
pseudo / advantage / eval plus top-level gamma, num_folds, seed,
threads), writes its artifacts under ``--out``, and drops a manifest
echoing the config, seed, and package version.  Outputs contain no
timestamps, so a rerun with the same config and seed is byte-identical.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .advantage import ContrastModel, fit_contrast, seal_policy
from .approximator import AdamConfig, RegressionConfig, load_model, save_model
from .core import (
    Dataset,
    EpsilonGreedyPolicy,
    FoldAssignment,
    Policy,
    TablePolicy,
    UniformPolicy,
    greedy_policy,
    save_dataset_jsonl,
    split_folds,
)
from .envs import (
    MarginEnv,
    MarginEnvSpec,
    SmoothEnv,
    SmoothEnvSpec,
    TabularEnv,
    chain2_mdp,
    gen_decomposable_tabular,
    gen_random_tabular,
    ingest_jsonl,
    rollout,
    ss1_mdp,
)
from .errors import (
    ConfigError,
    CrossFittingError,
    DataError,
    EmptyDataError,
    ErgodicityError,
    InvalidFoldCountError,
    NumericError,
    SealError,
    ShapeError,
)
from .ope import FQEConfig, fqe, value_of_policy_mc
from .oracle import (
    TabularMDP,
    exact_contrast,
    exact_density_ratio,
    greedy_policy_from_table,
    stationary_distribution,
    value_iteration,
)
from .pseudo import (
    ConstantOmega,
    FoldNuisance,
    LearnedOmega,
    NuisanceSet,
    PseudoTable,
    build_pseudo_table,
)
from .qlearn import QTrainConfig, train_q
from .ratio import KernelSpec, RatioModel, RatioTrainConfig, train_ratio

DEFAULTS: dict = {
    "gamma": 0.5,
    "num_folds": 2,
    "seed": 0,
    "threads": 1,
    "data": {
        "n_trajectories": 100,
        "horizon": 20,
        "behavior": {"kind": "uniform"},
        "path": None,
    },
    "qlearn": {
        "variant": "fqi",
        "backend": "tabular",
        "iterations": 60,
        "steps": 2000,
        "minibatch": 32,
        "target_sync": 200,
        "num_quantiles": 11,
        "hidden": [64, 64],
        "lr": 1e-3,
    },
    "ratio": {
        "steps": 800,
        "batch_pairs": 64,
        "hidden": [32, 32],
        "lr": 2e-3,
        "bandwidth": None,
    },
    "pseudo": {"minibatch": 256, "clip_scale": 3.0, "baseline_action": None},
    "advantage": {
        "backend": "net",
        "hidden": [64, 64],
        "epochs": 100,
        "batch_size": 64,
        "lr": 1e-3,
    },
    "eval": {
        "fqe_rounds": 60,
        "fqe_backend": "tabular",
        "fqe_hidden": [64, 64],
        "mc_episodes": 100,
        "mc_horizon": 40,
    },
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def load_config(path: str | None, seed: int | None, threads: int | None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        cfg = _merge(cfg, user)
    if seed is not None:
        cfg["seed"] = seed
    if threads is not None:
        cfg["threads"] = threads
    return cfg


def build_env(cfg: dict):
    if "env" not in cfg or not isinstance(cfg.get("env"), dict):
        raise ConfigError("missing config key: env")
    env_cfg = cfg["env"]
    kind = env_cfg.get("kind")
    if kind == "chain2":
        return TabularEnv(chain2_mdp())
    if kind == "ss1":
        return TabularEnv(ss1_mdp())
    if kind == "random_tabular":
        return TabularEnv(
            gen_random_tabular(
                int(env_cfg.get("num_states", 5)),
                int(env_cfg.get("num_actions", 2)),
                seed=int(env_cfg.get("mdp_seed", 0)),
                reward_scale=float(env_cfg.get("reward_scale", 1.0)),
            )
        )
    if kind == "decomposable":
        return TabularEnv(
            gen_decomposable_tabular(
                int(env_cfg.get("num_states", 20)),
                int(env_cfg.get("num_actions", 2)),
                seed=int(env_cfg.get("mdp_seed", 0)),
                mix_weight=float(env_cfg.get("mix_weight", 0.3)),
            )
        )
    if kind == "smooth":
        fields = {
            k: env_cfg[k]
            for k in (
                "state_dim",
                "num_actions",
                "contrast_amplitude",
                "contrast_frequency",
                "baseline_amplitude",
                "baseline_frequency",
                "noise_scale",
            )
            if k in env_cfg
        }
        return SmoothEnv(SmoothEnvSpec(**fields))
    if kind == "margin":
        return MarginEnv(
            MarginEnvSpec(
                alpha=float(env_cfg.get("alpha", 1.0)),
                noise_scale=float(env_cfg.get("noise_scale", 0.1)),
            )
        )
    if kind == "mdp_file":
        path = env_cfg.get("path")
        if path is None:
            raise ConfigError("missing config key: env.path")
        with open(path) as fh:
            return TabularEnv(TabularMDP.from_json(fh.read()))
    raise ConfigError(f"unknown env kind: {kind!r}")


def build_behavior(env, cfg: dict) -> Policy:
    spec = cfg["data"].get("behavior", {"kind": "uniform"})
    kind = spec.get("kind", "uniform")
    if kind == "uniform":
        return UniformPolicy(env.num_actions)
    if kind == "mdp":
        if not isinstance(env, TabularEnv):
            raise ConfigError("behavior kind 'mdp' needs a tabular env")
        return TablePolicy(env.mdp.behavior)
    if kind == "eps_greedy":
        if not isinstance(env, TabularEnv):
            raise ConfigError("behavior kind 'eps_greedy' needs a tabular env")
        q_star = value_iteration(env.mdp, cfg["gamma"], tol=1e-10)
        return EpsilonGreedyPolicy(
            greedy_policy_from_table(q_star), float(spec.get("epsilon", 0.1))
        )
    raise ConfigError(f"unknown behavior kind: {kind!r}")


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def write_manifest(command: str, cfg: dict, out: Path) -> None:
    manifest = {
        "command": command,
        "config": cfg,
        "seed": cfg["seed"],
        "threads": cfg["threads"],
        "version": f"sealrl-{__version__}",
    }
    _dump_json(manifest, out / f"{command}_manifest.json")


def _dataset_path(cfg: dict, out: Path) -> Path:
    configured = cfg["data"].get("path")
    return Path(configured) if configured else out / "dataset.jsonl"


def _load_dataset(cfg: dict, out: Path) -> Dataset:
    path = _dataset_path(cfg, out)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    return ingest_jsonl(path)


def _q_config(cfg: dict, seed: int) -> QTrainConfig:
    q = cfg["qlearn"]
    return QTrainConfig(
        variant=q["variant"],
        backend=q["backend"],
        iterations=int(q["iterations"]),
        steps=int(q["steps"]),
        minibatch_size=int(q["minibatch"]),
        target_sync=int(q["target_sync"]),
        gamma=float(cfg["gamma"]),
        num_quantiles=int(q["num_quantiles"]),
        hidden=tuple(q["hidden"]),
        optimizer=AdamConfig(lr=float(q["lr"])),
        seed=seed,
    )


def cmd_generate(cfg: dict, out: Path) -> None:
    env = build_env(cfg)
    behavior = build_behavior(env, cfg)
    d = rollout(
        env,
        behavior,
        int(cfg["data"]["n_trajectories"]),
        int(cfg["data"]["horizon"]),
        seed=int(cfg["seed"]),
    )
    save_dataset_jsonl(d, _dataset_path(cfg, out))
    write_manifest("generate", cfg, out)


def cmd_train_q(cfg: dict, out: Path) -> None:
    d = _load_dataset(cfg, out)
    folds = split_folds(d, int(cfg["num_folds"]), seed=int(cfg["seed"]))
    (out / "folds.json").write_text(folds.to_json() + "\n")

    def save_with_log(model, stem: str, fold):
        save_model(model, out / f"{stem}.json", config={"fold": fold, **cfg["qlearn"]})
        log = getattr(model, "training_log", None)
        if log is not None:
            _dump_json(log, out / f"{stem}_log.json")

    for fold in range(folds.num_folds):
        d_train = d.subset(folds.ids_outside(fold))
        model = train_q(d_train, _q_config(cfg, seed=int(cfg["seed"]) + 1 + fold))
        save_with_log(model, f"q_fold{fold}", fold)
    full_model = train_q(d, _q_config(cfg, seed=int(cfg["seed"])))
    save_with_log(full_model, "q_full", None)
    write_manifest("train-q", cfg, out)


def _load_folds(out: Path) -> FoldAssignment:
    path = out / "folds.json"
    if not path.exists():
        raise DataError(f"fold assignment not found: {path}")
    return FoldAssignment.from_json(path.read_text())


def cmd_ratio(cfg: dict, out: Path) -> None:
    gamma = float(cfg["gamma"])
    if gamma == 0.0:
        write_manifest("ratio", cfg, out)
        return
    d = _load_dataset(cfg, out)
    folds = _load_folds(out)
    r = cfg["ratio"]
    rcfg = RatioTrainConfig(
        steps=int(r["steps"]),
        batch_pairs=int(r["batch_pairs"]),
        hidden=tuple(r["hidden"]),
        optimizer=AdamConfig(lr=float(r["lr"])),
    )
    kernel = None if r["bandwidth"] is None else KernelSpec(float(r["bandwidth"]))
    for fold in range(folds.num_folds):
        q_model = load_model(out / f"q_fold{fold}.json")
        policy = greedy_policy(q_model)
        d_train = d.subset(folds.ids_outside(fold))
        model = train_ratio(
            d_train, policy, kernel, rcfg, seed=int(cfg["seed"]) + 101 + fold, gamma=gamma
        )
        _dump_json(model.to_dict(), out / f"ratio_fold{fold}.json")
    write_manifest("ratio", cfg, out)


def _nuisance_set(cfg: dict, out: Path, folds: FoldAssignment) -> NuisanceSet:
    gamma = float(cfg["gamma"])
    per_fold = {}
    for fold in range(folds.num_folds):
        q_model = load_model(out / f"q_fold{fold}.json")
        policy = greedy_policy(q_model)
        if gamma > 0:
            path = out / f"ratio_fold{fold}.json"
            if not path.exists():
                raise DataError(f"ratio checkpoint not found: {path}")
            ratio_model = RatioModel.from_dict(json.loads(path.read_text()))
            omega = LearnedOmega(ratio_model, policy)
        else:
            omega = ConstantOmega(0.0)
        trained_on = frozenset(k for k in range(folds.num_folds) if k != fold)
        per_fold[fold] = FoldNuisance(q_model, policy, omega, trained_on)
    return NuisanceSet(per_fold)


def cmd_pseudo(cfg: dict, out: Path) -> None:
    d = _load_dataset(cfg, out)
    folds = _load_folds(out)
    nuisances = _nuisance_set(cfg, out, folds)
    p = cfg["pseudo"]
    baseline = p["baseline_action"]
    table = build_pseudo_table(
        d,
        folds,
        nuisances,
        gamma=float(cfg["gamma"]),
        minibatch_size=None if p["minibatch"] is None else int(p["minibatch"]),
        seed=int(cfg["seed"]) + 202,
        clip_scale=p["clip_scale"],
        baseline_action=None if baseline is None else int(baseline),
        threads=int(cfg["threads"]),
    )
    table.to_jsonl(out / "pseudo.jsonl")
    _dump_json(
        {"baseline_action": table.baseline_action, "entries": len(table)},
        out / "pseudo_meta.json",
    )
    write_manifest("pseudo", cfg, out)


def cmd_fit_advantage(cfg: dict, out: Path) -> None:
    d = _load_dataset(cfg, out)
    meta_path = out / "pseudo_meta.json"
    if not meta_path.exists():
        raise DataError(f"pseudo metadata not found: {meta_path}")
    meta = json.loads(meta_path.read_text())
    table = PseudoTable.from_jsonl(out / "pseudo.jsonl", d, int(meta["baseline_action"]))
    a = cfg["advantage"]
    rcfg = RegressionConfig(
        backend=a["backend"],
        hidden=tuple(a["hidden"]),
        epochs=int(a["epochs"]),
        batch_size=int(a["batch_size"]),
        optimizer=AdamConfig(lr=float(a["lr"])),
    )
    model = fit_contrast(table, rcfg, seed=int(cfg["seed"]) + 303)
    _dump_json(model.to_dict(), out / "contrast.json")
    write_manifest("fit-advantage", cfg, out)


def _evaluation_entry(name: str, method: str, value: float, se: float, config: dict) -> dict:
    return {"policy": name, "method": method, "value": value, "se": se, "config": config}


def cmd_evaluate(cfg: dict, out: Path) -> None:
    d = _load_dataset(cfg, out)
    contrast_path = out / "contrast.json"
    if not contrast_path.exists():
        raise DataError(f"contrast checkpoint not found: {contrast_path}")
    contrast = ContrastModel.from_dict(json.loads(contrast_path.read_text()))
    seal = seal_policy(contrast)
    baseline_q = load_model(out / "q_full.json")
    baseline = greedy_policy(baseline_q)

    e = cfg["eval"]
    gamma = float(cfg["gamma"])
    fqe_cfg = FQEConfig(backend=e["fqe_backend"], hidden=tuple(e["fqe_hidden"]))
    report: dict = {"policies": {}}
    for name, policy in (("seal", seal), ("baseline", baseline)):
        fqe_result = fqe(
            d, policy, int(e["fqe_rounds"]), gamma, fqe_cfg, seed=int(cfg["seed"]) + 404
        )
        value = float(np.mean(fqe_result.value(d.initial_states())))
        entry = {
            "fqe": _evaluation_entry(
                name,
                "fqe",
                value,
                0.0,
                {"rounds": int(e["fqe_rounds"]), "backend": e["fqe_backend"], "gamma": gamma},
            )
        }
        if isinstance(cfg.get("env"), dict):
            env = build_env(cfg)
            mc = value_of_policy_mc(
                env,
                policy,
                int(e["mc_episodes"]),
                int(e["mc_horizon"]),
                gamma,
                seed=int(cfg["seed"]) + 505,
                threads=int(cfg["threads"]),
            )
            entry["mc"] = _evaluation_entry(
                name, "mc", mc.value, mc.se, {"episodes": mc.episodes, "horizon": mc.horizon, "gamma": gamma}
            )
        report["policies"][name] = entry
    report["baseline_action"] = contrast.baseline_action
    report["gamma"] = gamma
    _dump_json(report, out / "report.json")
    write_manifest("evaluate", cfg, out)


_PIPELINE = (
    ("generate", cmd_generate),
    ("train-q", cmd_train_q),
    ("ratio", cmd_ratio),
    ("pseudo", cmd_pseudo),
    ("fit-advantage", cmd_fit_advantage),
    ("evaluate", cmd_evaluate),
)


def cmd_pipeline(cfg: dict, out: Path) -> None:
    for stage, fn in _PIPELINE:
        try:
            fn(cfg, out)
        except SealError as exc:
            raise type(exc)(f"stage {stage}: {exc}") from exc
    write_manifest("pipeline", cfg, out)


def cmd_oracle(mdp_path: str, gamma: float, a0: int) -> None:
    try:
        with open(mdp_path) as fh:
            mdp = TabularMDP.from_json(fh.read())
    except FileNotFoundError as exc:
        raise DataError(f"mdp file not found: {mdp_path}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"mdp file is not valid JSON: {exc}") from exc
    q_star = value_iteration(mdp, gamma, tol=1e-10)
    pi = greedy_policy_from_table(q_star)
    tables = {
        "gamma": gamma,
        "baseline_action": a0,
        "q_star": q_star.tolist(),
        "contrast": exact_contrast(mdp, gamma, a0).tolist(),
        "stationary": stationary_distribution(mdp).tolist(),
        "omega": exact_density_ratio(mdp, pi, gamma).tolist(),
    }
    print(json.dumps(tables, sort_keys=True))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seal", description="Doubly-robust advantage learning pipeline for offline RL"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "train-q", "ratio", "pseudo", "fit-advantage", "evaluate", "pipeline"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", type=str, default="out", help="artifact directory")
        p.add_argument("--threads", type=int, default=None, help="worker pool cap")
    p = sub.add_parser("oracle")
    p.add_argument("--mdp", type=str, required=True, help="tabular MDP JSON file")
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--a0", type=int, default=0, help="baseline action for the contrast")
    return parser


_COMMANDS = {
    "generate": cmd_generate,
    "train-q": cmd_train_q,
    "ratio": cmd_ratio,
    "pseudo": cmd_pseudo,
    "fit-advantage": cmd_fit_advantage,
    "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "oracle":
            cmd_oracle(args.mdp, args.gamma, args.a0)
            return 0
        cfg = load_config(args.config, args.seed, args.threads)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _COMMANDS[args.command](cfg, out)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (
        DataError,
        InvalidFoldCountError,
        CrossFittingError,
        EmptyDataError,
        ErgodicityError,
        ShapeError,
    ) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
