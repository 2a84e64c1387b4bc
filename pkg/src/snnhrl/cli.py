"""Experiment driver: ``snnhrl {pretrain,downstream,visitation,analyze}``.

Every run is described by a versioned JSON ``ExperimentConfig``; command-line
flags override fields of a loaded config (or of the defaults).  Each run
directory receives ``config.json`` (the single-run snapshot), ``progress.csv``,
periodic checkpoints and its final artifacts.  On failure the process prints
one ``error: {json}`` line to stderr and exits with status 2.
"""
from __future__ import annotations

import argparse
import dataclasses
import itertools
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import RngStream
from .envs import DynamicsConfig, GatherSpec, PretrainEnv, make_env
from .policy import CheckpointError, SkillBank, save_policy
from .trpo import ProgressLog, TrpoConfig, diagnostics_row

CONFIG_VERSION = 1
TASKS = ("pretrain", "maze0", "maze1", "maze2", "maze3", "gather")


class ConfigError(ValueError):
    def __init__(self, field_name: str, constraint: str):
        super().__init__(f"{field_name}: {constraint}")
        self.field = field_name
        self.constraint = constraint


@dataclass
class EnvSection:
    task: str = "pretrain"
    horizon: int = 500
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    gather: GatherSpec = field(default_factory=GatherSpec)


@dataclass
class PolicySection:
    K: int = 6
    integration: str = "bilinear"
    layer_sizes: tuple[int, ...] = (32, 32)


@dataclass
class OptimizerSection:
    batch_size: int = 10_000
    n_iterations: int = 200
    step_kl: float = 0.01
    discount: float = 0.99
    cg_iters: int = 10
    cg_damping: float = 1e-5
    backtrack_ratio: float = 0.8
    max_backtracks: int = 15

    def trpo(self) -> TrpoConfig:
        return TrpoConfig(self.step_kl, self.discount, self.cg_iters, self.cg_damping, self.backtrack_ratio,
                          self.max_backtracks, self.batch_size)


@dataclass
class MiSection:
    alpha_h: float = 0.01
    posterior_floor: float = 1e-3
    mesh_density: float = 10.0


@dataclass
class DownstreamSection:
    switch_time: int = 50
    skill_source: tuple[str, ...] = ()
    skill_mode: str = "snn"
    baseline: str = "hierarchy"
    eval_every: int = 10
    eval_episodes: int = 20
    skill_deterministic: bool = False


@dataclass
class SweepSection:
    alpha_h: tuple[float, ...] = ()
    switch_time: tuple[int, ...] = ()
    integration: tuple[str, ...] = ()


@dataclass
class ExperimentConfig:
    version: int = CONFIG_VERSION
    mode: str = "pretrain"
    env: EnvSection = field(default_factory=EnvSection)
    policy: PolicySection = field(default_factory=PolicySection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    mi: MiSection = field(default_factory=MiSection)
    downstream: DownstreamSection = field(default_factory=DownstreamSection)
    seeds: tuple[int, ...] = (0,)
    downstream_seeds: tuple[int, ...] = (0,)
    sweep: SweepSection = field(default_factory=SweepSection)
    checkpoint_every: int = 50
    output_dir: str = "runs"

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return _to_plain(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if d.get("version") != CONFIG_VERSION:
            raise ConfigError("version", f"must be {CONFIG_VERSION}, got {d.get('version')!r}")
        cfg = _from_plain(cls, d, "")
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("<file>", "top level must be an object")
        return cls.from_dict(d)

    # -- checks -----------------------------------------------------------

    def validate(self) -> None:
        def need(ok, name, constraint):
            if not ok:
                raise ConfigError(name, constraint)

        need(self.mode in ("pretrain", "downstream"), "mode", "must be pretrain or downstream")
        need(self.env.task in TASKS, "env.task", f"must be one of {TASKS}")
        need(self.env.horizon >= 1, "env.horizon", "must be >= 1")
        need(self.policy.K >= 1, "policy.K", "must be >= 1")
        need(self.policy.integration in ("concat", "bilinear"), "policy.integration", "must be concat or bilinear")
        need(all(n >= 1 for n in self.policy.layer_sizes), "policy.layer_sizes", "entries must be >= 1")
        need(self.optimizer.batch_size >= self.env.horizon, "optimizer.batch_size", "must be >= env.horizon")
        need(self.optimizer.n_iterations >= 0, "optimizer.n_iterations", "must be >= 0")
        need(self.optimizer.step_kl > 0, "optimizer.step_kl", "must be > 0")
        need(0 <= self.optimizer.discount <= 1, "optimizer.discount", "must lie in [0, 1]")
        need(self.optimizer.cg_iters >= 1, "optimizer.cg_iters", "must be >= 1")
        need(0 < self.optimizer.backtrack_ratio < 1, "optimizer.backtrack_ratio", "must lie in (0, 1)")
        need(np.isfinite(self.mi.alpha_h) and self.mi.alpha_h >= 0, "mi.alpha_h", "must be finite and >= 0")
        need(0 < self.mi.posterior_floor < 1.0 / max(self.policy.K, 2), "mi.posterior_floor",
             "must lie in (0, 1/K)")
        need(self.mi.mesh_density > 0, "mi.mesh_density", "must be > 0")
        need(1 <= self.downstream.switch_time <= self.env.horizon or self.mode == "pretrain",
             "downstream.switch_time", "must satisfy 1 <= switch_time <= env.horizon")
        need(self.downstream.skill_mode in ("snn", "multipolicy"), "downstream.skill_mode",
             "must be snn or multipolicy")
        need(self.downstream.baseline in ("hierarchy", "com-proxy"), "downstream.baseline",
             "must be hierarchy or com-proxy")
        need(len(self.seeds) >= 1, "seeds", "must list at least one seed")
        need(len(self.downstream_seeds) >= 1, "downstream_seeds", "must list at least one seed")
        need(all(a >= 0 for a in self.sweep.alpha_h), "sweep.alpha_h", "entries must be >= 0")
        need(all(t >= 1 for t in self.sweep.switch_time), "sweep.switch_time", "entries must be >= 1")
        need(all(i in ("concat", "bilinear") for i in self.sweep.integration), "sweep.integration",
             "entries must be concat or bilinear")
        if self.mode == "pretrain":
            need(self.env.task == "pretrain", "env.task", "pretrain mode needs task pretrain")
        else:
            need(self.env.task != "pretrain", "env.task", "downstream mode needs a maze or gather task")


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_to_plain(v) for v in obj]
    return obj


def _from_plain(cls, d, prefix):
    if not isinstance(d, dict):
        raise ConfigError(prefix.rstrip(".") or "<root>", "must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for k in d:
        if k not in fields:
            raise ConfigError(prefix + k, "unknown key")
    defaults = cls()
    kwargs = {}
    for name, f in fields.items():
        if name not in d:
            continue
        cur = getattr(defaults, name)
        v = d[name]
        path = prefix + name
        if dataclasses.is_dataclass(cur):
            kwargs[name] = _from_plain(type(cur), v, path + ".")
        elif isinstance(cur, tuple):
            if not isinstance(v, list):
                raise ConfigError(path, "must be a list")
            kwargs[name] = tuple(v)
        elif isinstance(cur, bool):
            if not isinstance(v, bool):
                raise ConfigError(path, "must be a boolean")
            kwargs[name] = v
        elif isinstance(cur, int):
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(path, "must be an integer")
            kwargs[name] = v
        elif isinstance(cur, float):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(path, "must be a number")
            kwargs[name] = float(v)
        elif isinstance(cur, str):
            if not isinstance(v, str):
                raise ConfigError(path, "must be a string")
            kwargs[name] = v
        else:
            kwargs[name] = v
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(prefix.rstrip(".") or "<root>", str(exc)) from None


def paper_scale(cfg: ExperimentConfig) -> ExperimentConfig:
    """Full-size hyperparameters: pre-training batch 50k, path length 500,
    six skills, mesh 10 and two 32-unit layers; downstream batch, path length
    and switch time per task (mazes 1M / 10k / 500, gather 100k / 5k / 10)."""
    cfg = dataclasses.replace(cfg)
    cfg.policy = dataclasses.replace(cfg.policy, K=6, layer_sizes=(32, 32))
    cfg.mi = dataclasses.replace(cfg.mi, mesh_density=10.0)
    if cfg.mode == "pretrain":
        cfg.optimizer = dataclasses.replace(cfg.optimizer, batch_size=50_000)
        cfg.env = dataclasses.replace(cfg.env, horizon=500)
    elif cfg.env.task == "gather":
        cfg.optimizer = dataclasses.replace(cfg.optimizer, batch_size=100_000)
        cfg.env = dataclasses.replace(cfg.env, horizon=5_000)
        cfg.downstream = dataclasses.replace(cfg.downstream, switch_time=10)
    else:
        cfg.optimizer = dataclasses.replace(cfg.optimizer, batch_size=1_000_000)
        cfg.env = dataclasses.replace(cfg.env, horizon=10_000)
        cfg.downstream = dataclasses.replace(cfg.downstream, switch_time=500)
    return cfg


PRESETS = {"paper-scale": paper_scale}


# ---------------------------------------------------------------------------
# run expansion
# ---------------------------------------------------------------------------

@dataclass
class Run:
    name: str
    config: ExperimentConfig
    seed: int
    downstream_seed: int | None = None


def expand_runs(cfg: ExperimentConfig) -> list[Run]:
    """One run per point of the sweep grid per seed (per seed pair downstream)."""
    alphas = cfg.sweep.alpha_h or (cfg.mi.alpha_h,)
    switch = cfg.sweep.switch_time or (cfg.downstream.switch_time,)
    integ = cfg.sweep.integration or (cfg.policy.integration,)
    runs = []
    if cfg.mode == "pretrain":
        for a, i, s in itertools.product(alphas, integ, cfg.seeds):
            c = dataclasses.replace(cfg, mi=dataclasses.replace(cfg.mi, alpha_h=float(a)),
                                    policy=dataclasses.replace(cfg.policy, integration=i), seeds=(s,),
                                    sweep=SweepSection())
            runs.append(Run(f"{i}_a{a:g}_s{s}", c, s))
    else:
        for t, p, d in itertools.product(switch, cfg.seeds, cfg.downstream_seeds):
            c = dataclasses.replace(cfg, downstream=dataclasses.replace(cfg.downstream, switch_time=int(t)),
                                    seeds=(p,), downstream_seeds=(d,), sweep=SweepSection())
            runs.append(Run(f"{cfg.env.task}_{cfg.downstream.baseline}_T{t}_p{p}_d{d}", c, p, d))
    return runs


def pretrain_config(cfg: ExperimentConfig, seed: int):
    from .training import PretrainConfig

    return PretrainConfig(K=cfg.policy.K, integration=cfg.policy.integration, alpha_h=cfg.mi.alpha_h,
                          batch_size=cfg.optimizer.batch_size, horizon=cfg.env.horizon,
                          n_iterations=cfg.optimizer.n_iterations, seed=seed, mesh_density=cfg.mi.mesh_density,
                          posterior_floor=cfg.mi.posterior_floor, layer_sizes=tuple(cfg.policy.layer_sizes),
                          trpo=cfg.optimizer.trpo(), dynamics=cfg.env.dynamics)


def downstream_config(cfg: ExperimentConfig, seed: int):
    from .training import DownstreamConfig

    ds = cfg.downstream
    return DownstreamConfig(task=cfg.env.task, switch_time=ds.switch_time, batch_size=cfg.optimizer.batch_size,
                            horizon=cfg.env.horizon, n_iterations=cfg.optimizer.n_iterations, seed=seed,
                            skill_mode=ds.skill_mode, skill_source=tuple(ds.skill_source),
                            layer_sizes=tuple(cfg.policy.layer_sizes), skill_deterministic=ds.skill_deterministic,
                            eval_every=ds.eval_every, eval_episodes=ds.eval_episodes, trpo=cfg.optimizer.trpo(),
                            dynamics=cfg.env.dynamics, gather=cfg.env.gather)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _run_dir(cfg: ExperimentConfig, run: Run) -> Path:
    d = Path(cfg.output_dir) / run.name
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.json").write_text(run.config.to_json())
    progress = d / "progress.csv"
    if progress.exists():
        progress.unlink()
    return d


def cmd_pretrain(cfg: ExperimentConfig, log=print) -> list[Path]:
    from .analysis import diversity_report, scatter_svg, visitation_run
    from .training import Learner, make_snn, pretrain_iteration

    dirs = []
    for run in expand_runs(cfg):
        pc = pretrain_config(run.config, run.seed)
        pc.validate()
        d = _run_dir(cfg, run)
        env = PretrainEnv(pc.dynamics, pc.horizon)
        policy = make_snn(pc, env.obs_dim, env.act_dim)
        learner = Learner(policy, pc.trpo)
        rng = RngStream(pc.seed)
        plog = ProgressLog(str(d / "progress.csv"), ("mean_raw_reward", "visited_cells", "accepted"))
        for it in range(pc.n_iterations):
            _, m, _, _ = pretrain_iteration(learner, env, pc, rng, it)
            row = diagnostics_row(it, m.mean_return, m.diag)
            row.update(mean_raw_reward=m.mean_raw_reward, visited_cells=m.visited_cells)
            plog.append(row)
            if run.config.checkpoint_every and (it + 1) % run.config.checkpoint_every == 0:
                save_policy(policy, d / f"checkpoint_{it + 1:05d}.ckpt")
        SkillBank.from_snn(policy).save(d / "skills")
        rec = visitation_run(policy, env, 100, pc.horizon, "per-rollout-uniform", RngStream(pc.seed, 0x715))
        rec.to_csv(d / "visitation.csv")
        scatter_svg(rec, d / "visitation.svg")
        (d / "diversity.txt").write_text(diversity_report(rec, pc.K, pc.dynamics.v_max, pc.horizon).to_text())
        log(f"{run.name}: done -> {d}")
        dirs.append(d)
    return dirs


def _skill_source(cfg: ExperimentConfig, pretrain_seed: int) -> list[str]:
    return [s.format(seed=pretrain_seed) for s in cfg.downstream.skill_source]


def load_skills(paths, env_agent_dim: int, mode: str) -> SkillBank:
    try:
        bank = SkillBank.load(paths)
    except (OSError, CheckpointError) as exc:
        raise ConfigError("downstream.skill_source", str(exc)) from None
    if bank.mode != mode:
        raise ConfigError("downstream.skill_mode", f"checkpoints hold a {bank.mode} bank, config asks for {mode}")
    if bank.obs_dim != env_agent_dim:
        expected = {"obs_dim": env_agent_dim, "kind": "snn" if mode == "snn" else "gaussian"}
        raise ConfigError("downstream.skill_source",
                          f"architecture mismatch: checkpoint {json.dumps(bank.policies[0].descriptor(), sort_keys=True)}"
                          f" vs environment {json.dumps(expected, sort_keys=True)}")
    return bank


def cmd_downstream(cfg: ExperimentConfig, log=print) -> list[Path]:
    from .training import Learner, downstream_iteration, evaluate_manager, make_manager, train_com_proxy

    dirs = []
    for run in expand_runs(cfg):
        dc = downstream_config(run.config, run.downstream_seed)
        dc.validate()
        d = _run_dir(cfg, run)
        extra = ("success_rate", "mean_score", "eval_success", "eval_score")
        plog = ProgressLog(str(d / "progress.csv"), extra)

        def record(m):
            row = diagnostics_row(m.iteration, m.mean_return, m.diag)
            row.update(success_rate=m.success_rate, mean_score=m.mean_score,
                       eval_success="" if m.eval_success is None else m.eval_success,
                       eval_score="" if m.eval_score is None else m.eval_score)
            plog.append(row)

        if run.config.downstream.baseline == "com-proxy":
            policy, _ = train_com_proxy(dc, callback=lambda m, p: record(m))
            save_policy(policy, d / "policy.ckpt")
        else:
            env = make_env(dc.task, dc.dynamics, dc.horizon, dc.gather)
            skills = load_skills(_skill_source(run.config, run.seed), env.layout.agent_dim, dc.skill_mode)
            manager = make_manager(dc, env.obs_dim, skills.K)
            learner = Learner(manager, dc.trpo)
            rng = RngStream(dc.seed)
            for it in range(dc.n_iterations):
                _, m, _ = downstream_iteration(learner, skills, env, dc, rng, it)
                if dc.eval_every and (it + 1) % dc.eval_every == 0:
                    m.eval_success, m.eval_score = evaluate_manager(manager, skills, env, dc, rng, tag=it)
                record(m)
                if run.config.checkpoint_every and (it + 1) % run.config.checkpoint_every == 0:
                    save_policy(manager, d / f"manager_{it + 1:05d}.ckpt")
            save_policy(manager, d / "manager.ckpt")
        log(f"{run.name}: done -> {d}")
        dirs.append(d)
    return dirs


def cmd_visitation(args, log=print) -> Path:
    from .analysis import coverage, diversity_report, scatter_svg, visitation_run

    dyn = DynamicsConfig()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.latent_mode == "gaussian":
        source, K = None, 1
    else:
        if not args.skills:
            raise ConfigError("--skills", "required unless --latent-mode gaussian")
        for p in args.skills:
            if not Path(p).exists():
                raise ConfigError("--skills", f"missing input {p}")
        try:
            source = SkillBank.load(args.skills)
        except CheckpointError as exc:
            raise ConfigError("--skills", str(exc)) from None
        K = source.K
    if args.steps is not None:
        n_rollouts, horizon = 1, args.steps
    else:
        n_rollouts, horizon = args.n_rollouts, args.horizon
    env = PretrainEnv(dyn, horizon)
    rec = visitation_run(source, env, n_rollouts, horizon, args.latent_mode, RngStream(args.seed), args.z,
                         args.switch_time)
    rec.to_csv(out / "visitation.csv")
    scatter_svg(rec, out / "visitation.svg", extent=args.extent)
    lines = [f"coverage {coverage(rec, args.mesh_density)}", f"records {len(rec)}"]
    (out / "coverage.txt").write_text("\n".join(lines) + "\n")
    if args.latent_mode in ("per-rollout-uniform", "fixed"):
        (out / "diversity.txt").write_text(diversity_report(rec, K, dyn.v_max, horizon).to_text())
    log(f"visitation: {len(rec)} records -> {out}")
    return out


def cmd_analyze(args, log=print) -> Path:
    from .analysis import VisitationRecords, coverage, diversity_report, learning_curve

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for p in list(args.progress or []) + list(args.visitation or []):
        if not Path(p).exists():
            raise ConfigError("inputs", f"missing input {p}")
    if args.progress:
        curve = learning_curve(args.progress, args.column)
        curve.to_csv(out / f"curve_{args.column}.csv")
        log(f"analyze: curve over {curve.n_runs} runs -> {out}")
    for i, p in enumerate(args.visitation or []):
        rec = VisitationRecords.from_csv(Path(p))
        K = int(rec.latent.max()) + 1 if len(rec) else 1
        (out / f"coverage_{i}.txt").write_text(f"coverage {coverage(rec, args.mesh_density)}\n")
        (out / f"diversity_{i}.txt").write_text(diversity_report(rec, max(K, args.K)).to_text())
    return out


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON ExperimentConfig to start from")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--out", dest="output_dir")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--iterations", type=int, dest="n_iterations")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--integration", nargs="+", choices=("concat", "bilinear"))
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--dry-run", action="store_true", help="validate the configuration and exit")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="snnhrl", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="train SNN skills on the speed reward")
    _common(p)
    p.add_argument("--alpha-h", type=float, nargs="+")
    p.add_argument("--mesh-density", type=float)

    p = sub.add_parser("downstream", help="train a manager over frozen skills")
    _common(p)
    p.add_argument("--task", choices=TASKS[1:])
    p.add_argument("--switch-time", type=int)
    p.add_argument("--sweep", nargs="+", metavar=("AXIS", "VALUE"),
                   help="sweep one axis, e.g. --sweep switch-time 10 50 100")
    p.add_argument("--skill-mode", choices=("snn", "multipolicy"))
    p.add_argument("--skills", nargs="+", help="checkpoint files or directories; '{seed}' expands to the pretrain seed")
    p.add_argument("--baseline", choices=("hierarchy", "com-proxy"))
    p.add_argument("--downstream-seeds", type=int, nargs="+")

    p = sub.add_parser("visitation", help="record a visitation run")
    p.add_argument("--skills", nargs="+")
    p.add_argument("--latent-mode", default="per-rollout-uniform",
                   choices=("per-rollout-uniform", "fixed", "random-manager", "gaussian"))
    p.add_argument("--z", type=int)
    p.add_argument("--steps", type=int, help="one rollout of this many steps")
    p.add_argument("--n-rollouts", type=int, default=100)
    p.add_argument("--horizon", type=int, default=500)
    p.add_argument("--switch-time", type=int, default=50)
    p.add_argument("--mesh-density", type=float, default=10.0)
    p.add_argument("--extent", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("analyze", help="aggregate progress logs and visitation files")
    p.add_argument("--progress", nargs="+")
    p.add_argument("--visitation", nargs="+")
    p.add_argument("--column", default="mean_return")
    p.add_argument("--mesh-density", type=float, default=10.0)
    p.add_argument("--K", type=int, default=6)
    p.add_argument("--out", required=True)
    return ap


def config_from_args(args) -> ExperimentConfig:
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError("--config", f"missing input {path}")
        cfg = ExperimentConfig.from_json(path.read_text())
    else:
        cfg = ExperimentConfig(mode=args.command)
        if args.command == "downstream":
            cfg.env = EnvSection(task="maze0", horizon=400)
    if cfg.mode != args.command:
        raise ConfigError("mode", f"config is for {cfg.mode}, command is {args.command}")
    rep = dataclasses.replace
    if args.command == "downstream" and args.task:
        cfg.env = rep(cfg.env, task=args.task)
        if args.task == "gather" and not args.switch_time:
            cfg.downstream = rep(cfg.downstream, switch_time=10)
    if args.preset:
        cfg = PRESETS[args.preset](cfg)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    if args.seeds:
        cfg.seeds = tuple(args.seeds)
    if args.n_iterations is not None:
        cfg.optimizer = rep(cfg.optimizer, n_iterations=args.n_iterations)
    if args.batch_size is not None:
        cfg.optimizer = rep(cfg.optimizer, batch_size=args.batch_size)
    if args.horizon is not None:
        cfg.env = rep(cfg.env, horizon=args.horizon)
    if args.K is not None:
        cfg.policy = rep(cfg.policy, K=args.K)
    if args.checkpoint_every is not None:
        cfg.checkpoint_every = args.checkpoint_every
    sweep = cfg.sweep
    if args.integration:
        if len(args.integration) == 1:
            cfg.policy = rep(cfg.policy, integration=args.integration[0])
        else:
            sweep = rep(sweep, integration=tuple(args.integration))
    if args.command == "pretrain":
        if args.alpha_h:
            if len(args.alpha_h) == 1:
                cfg.mi = rep(cfg.mi, alpha_h=args.alpha_h[0])
            else:
                sweep = rep(sweep, alpha_h=tuple(args.alpha_h))
        if args.mesh_density is not None:
            cfg.mi = rep(cfg.mi, mesh_density=args.mesh_density)
    else:
        ds = cfg.downstream
        if args.switch_time is not None:
            ds = rep(ds, switch_time=args.switch_time)
        if args.skill_mode:
            ds = rep(ds, skill_mode=args.skill_mode)
        if args.skills:
            ds = rep(ds, skill_source=tuple(args.skills))
        if args.baseline:
            ds = rep(ds, baseline=args.baseline)
        cfg.downstream = ds
        if args.downstream_seeds:
            cfg.downstream_seeds = tuple(args.downstream_seeds)
        if args.sweep:
            axis, values = args.sweep[0], args.sweep[1:]
            if not values:
                raise ConfigError("--sweep", "needs an axis and at least one value")
            try:
                if axis == "switch-time":
                    sweep = rep(sweep, switch_time=tuple(int(v) for v in values))
                elif axis == "alpha-h":
                    sweep = rep(sweep, alpha_h=tuple(float(v) for v in values))
                elif axis == "integration":
                    sweep = rep(sweep, integration=tuple(values))
                else:
                    raise ConfigError("--sweep", f"unknown axis {axis!r}")
            except ValueError as exc:
                if isinstance(exc, ConfigError):
                    raise
                raise ConfigError("--sweep", f"bad value for {axis}: {exc}") from None
    cfg.sweep = sweep
    cfg.validate()
    if cfg.mode == "downstream" and cfg.downstream.baseline == "hierarchy" and not cfg.downstream.skill_source:
        raise ConfigError("downstream.skill_source", "required for the hierarchy baseline")
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command in ("pretrain", "downstream"):
            cfg = config_from_args(args)
            runs = expand_runs(cfg)
            if args.dry_run:
                print(json.dumps({"ok": True, "runs": [r.name for r in runs]}, sort_keys=True))
                return 0
            Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
            (Path(cfg.output_dir) / "experiment.json").write_text(cfg.to_json())
            (cmd_pretrain if args.command == "pretrain" else cmd_downstream)(cfg)
        elif args.command == "visitation":
            cmd_visitation(args)
        else:
            if not args.progress and not args.visitation:
                raise ConfigError("inputs", "give --progress and/or --visitation files")
            cmd_analyze(args)
    except ConfigError as exc:
        print("error: " + json.dumps({"field": exc.field, "constraint": exc.constraint}, sort_keys=True),
              file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print("error: " + json.dumps({"field": None, "constraint": str(exc)}, sort_keys=True), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
