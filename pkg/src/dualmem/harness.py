"""Experiment runner, evaluation, comparison driver and memory benchmark."""
from __future__ import annotations

import csv
import dataclasses
import logging
import statistics
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import AgentConfig, DQNAgent, act_epsilon_greedy
from .dual_memory import DualMemory, MemoryPolicy, Mode, make_memory
from .envs import make_env
from .priority import PriorityParams
from .replay_core import Batch, Transition

log = logging.getLogger(__name__)

CSV_HEADER = [
    "step",
    "episodes",
    "train_return_mean100",
    "test_return_mean",
    "wall_clock_s",
    "refresh_time_mean_us",
    "cache_count",
    "main_count",
]
TIMING_COLUMNS = ("wall_clock_s", "refresh_time_mean_us")
BENCH_HEADER = ["mode", "main_capacity", "cache_capacity", "op_cycle_mean_us", "op_cycle_p95_us"]


class ProtocolError(AssertionError):
    """A refresh broke the t+n copy/evict rule or a capacity bound."""


@dataclass
class ExperimentConfig:
    env: str = "gridworld"
    mode: str = "dms"
    main_capacity: int = 8000
    cache_capacity: int = 2000
    t: int = 16
    n: int = 4
    total_steps: int = 50_000
    eval_interval: int = 1000
    eval_episodes: int = 10
    eval_epsilon: float = 0.01
    seed: int = 0
    gamma: float = 0.99
    learning_rate: float = 1e-3
    batch_size: int = 32
    target_sync_interval: int = 500
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.2
    hidden: tuple = (64, 64)
    grad_clip: float = 10.0
    optimizer: str = "adam"
    alpha: float = 0.6
    beta: float = 0.4
    epsilon_priority: float = 0.01
    alpha_remove: float = 1.0
    out: str | None = None

    def __post_init__(self):
        self.mode = Mode(self.mode).value
        self.env = self.env.lower()
        if isinstance(self.hidden, str):
            self.hidden = tuple(int(h) for h in self.hidden.split(",") if h.strip())
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.total_steps < 0:
            raise ValueError(f"total_steps must be >= 0, got {self.total_steps}")
        if self.eval_interval <= 0 or self.eval_episodes <= 0:
            raise ValueError("eval_interval and eval_episodes must be positive")
        if not 0.0 <= self.epsilon_decay_fraction <= 1.0:
            raise ValueError("epsilon_decay_fraction must lie in [0, 1]")
        make_env(self.env)  # validates the name
        # both constructors validate their own fields
        self.memory_policy()
        self.agent_config()

    def memory_policy(self) -> MemoryPolicy:
        return MemoryPolicy(
            mode=Mode(self.mode),
            t=self.t,
            n=self.n,
            main_capacity=self.main_capacity,
            cache_capacity=self.cache_capacity,
            params=PriorityParams(self.alpha, self.beta, self.epsilon_priority, self.alpha_remove),
        )

    def agent_config(self) -> AgentConfig:
        return AgentConfig(
            gamma=self.gamma,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            target_sync_interval=self.target_sync_interval,
            epsilon_start=self.epsilon_start,
            epsilon_end=self.epsilon_end,
            epsilon_decay_steps=int(self.epsilon_decay_fraction * self.total_steps),
            hidden=self.hidden,
            grad_clip=self.grad_clip,
            optimizer=self.optimizer,
        )

    def replace(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)


# main/cache sizes per environment; single modes get main + cache in one buffer
PRESETS = {
    "gridworld": dict(main_capacity=2000, cache_capacity=500, total_steps=50_000, hidden=(32, 32)),
    "cartpole": dict(main_capacity=8000, cache_capacity=2000, total_steps=150_000, hidden=(64, 64)),
}


def preset(env: str, mode: str = "dms", **overrides) -> ExperimentConfig:
    values = dict(PRESETS[env.lower()], env=env.lower(), mode=mode)
    if Mode(mode) is not Mode.DMS:
        values["main_capacity"] = values["main_capacity"] + values["cache_capacity"]
    values.update(overrides)
    return ExperimentConfig(**values)


def single_mode_variant(cfg: ExperimentConfig, mode: str) -> ExperimentConfig:
    """Same run with one buffer whose capacity equals the dual main + cache budget."""
    if Mode(mode) is Mode.DMS:
        return cfg.replace(mode=Mode.DMS.value)
    return cfg.replace(mode=Mode(mode).value, main_capacity=cfg.main_capacity + cfg.cache_capacity)


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------

_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _coerce(key, raw: str):
    kind = _FIELD_TYPES[key]
    if kind == "int":
        return int(float(raw))
    if kind == "float":
        return float(raw)
    if kind == "tuple":
        return tuple(int(v) for v in raw.split(",") if v.strip())
    if raw.lower() in ("", "none"):
        return None
    return raw


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def load_config(path, **overrides) -> ExperimentConfig:
    values = parse_config_text(Path(path).read_text())
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if v is None:
            continue
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------


def evaluate(agent, env, episodes: int, seed: int, epsilon: float = 0.01) -> float:
    """Mean undiscounted return of ``episodes`` near-greedy episodes.

    Episode ``i`` resets the environment with ``seed + i`` and draws its
    exploration from a generator seeded the same way.  Neither the network
    nor any replay memory is touched.
    """
    if episodes < 1:
        raise ValueError(f"episodes must be >= 1, got {episodes}")
    if isinstance(env, str):
        env = make_env(env)
    if hasattr(agent, "act"):
        act = agent.act
    else:
        def act(obs, eps, rng):
            return act_epsilon_greedy(agent, obs, eps, rng)
    total = 0.0
    for i in range(episodes):
        rng = np.random.default_rng(seed + i)
        obs = env.reset(seed + i)
        ret = 0.0
        while not env.done:
            action = act(obs, epsilon, rng)
            obs, reward, _ = env.step(action)
            ret += reward
        total += ret
    return total / episodes


@dataclass
class RunResult:
    config: ExperimentConfig
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    refresh_reports: list = field(default_factory=list)
    agent: DQNAgent | None = None


def _check_refresh(report, policy: MemoryPolicy, mem: DualMemory):
    need = policy.t + policy.n
    if report.copied != need:
        raise ProtocolError(f"copied {report.copied} items, expected t+n={need}")
    if report.evicted != max(0, need - report.free_before):
        raise ProtocolError(f"evicted {report.evicted} with {report.free_before} free, expected the shortfall")
    if report.free_before == 0 and report.evicted != need:
        raise ProtocolError("full-cache refresh must evict exactly t+n")
    main_count, cache_count = mem.counts
    if main_count > policy.main_capacity or cache_count > policy.cache_capacity:
        raise ProtocolError(f"capacity exceeded: main {main_count}, cache {cache_count}")


def run_experiment(cfg: ExperimentConfig, keep_reports: bool = False) -> RunResult:
    """Train one agent and return one metrics row per evaluation."""
    policy = cfg.memory_policy()
    agent_cfg = cfg.agent_config()
    env = make_env(cfg.env)
    eval_env = make_env(cfg.env)
    init_ss, explore_ss, memory_ss, env_ss = np.random.SeedSequence(cfg.seed).spawn(4)
    explore_rng = np.random.default_rng(explore_ss)
    env_rng = np.random.default_rng(env_ss)
    agent = DQNAgent(env.spec.obs_dim, env.spec.action_count, agent_cfg, np.random.default_rng(init_ss))
    mem = make_memory(policy, np.random.default_rng(memory_ss), env.spec.obs_dim)
    is_dual = policy.mode is Mode.DMS
    batch_size = agent_cfg.batch_size

    result = RunResult(cfg, agent=agent)
    returns = deque(maxlen=100)
    episodes = 0
    ticks = refreshes = refresh_skips = train_steps = 0
    mm_time = 0.0
    mm_ticks = 0
    start = time.perf_counter()
    clock = time.perf_counter

    obs = env.reset(int(env_rng.integers(2**31)))
    ep_return = 0.0
    for step in range(1, cfg.total_steps + 1):
        action = agent.act(obs, agent_cfg.epsilon(step - 1), explore_rng)
        next_obs, reward, terminal = env.step(action)
        t0 = clock()
        mem.ingest(Transition(obs, action, reward, next_obs, terminal))
        mm_time += clock() - t0
        ep_return += reward
        if env.done:
            returns.append(ep_return)
            episodes += 1
            ep_return = 0.0
            obs = env.reset(int(env_rng.integers(2**31)))
        else:
            obs = next_obs

        if step % policy.n == 0:
            ticks += 1
            if is_dual:
                t0 = clock()
                if mem.can_refresh():
                    report = mem.refresh_cache()
                    mm_time += clock() - t0
                    _check_refresh(report, policy, mem)
                    refreshes += 1
                    if keep_reports:
                        result.refresh_reports.append((step, report))
                else:
                    mem.discard_pending()
                    refresh_skips += 1
            mm_ticks += 1
            if mem.ready(batch_size):
                batch, weights, handles = mem.sample_minibatch(batch_size)
                _, delta = agent.train_step(batch, weights)
                mem.update_priorities(handles, delta)
                train_steps += 1

        if step % cfg.eval_interval == 0:
            test_mean = evaluate(agent, eval_env, cfg.eval_episodes, cfg.seed * 1_000_003 + step, cfg.eval_epsilon)
            main_count, cache_count = mem.counts
            result.rows.append(
                {
                    "step": step,
                    "episodes": episodes,
                    "train_return_mean100": float(np.mean(returns)) if returns else 0.0,
                    "test_return_mean": test_mean,
                    "wall_clock_s": clock() - start,
                    "refresh_time_mean_us": 1e6 * mm_time / mm_ticks if mm_ticks else 0.0,
                    "cache_count": cache_count,
                    "main_count": main_count,
                }
            )
            mm_time = 0.0
            mm_ticks = 0
            log.info(
                "%s/%s seed=%d step=%d train100=%.3f test=%.3f",
                cfg.env, cfg.mode, cfg.seed, step,
                result.rows[-1]["train_return_mean100"], test_mean,
            )

    if not agent.online.all_finite():
        raise FloatingPointError("network parameters became non-finite")
    result.summary = {
        "env": cfg.env,
        "mode": cfg.mode,
        "seed": cfg.seed,
        "total_steps": cfg.total_steps,
        "cadence_ticks": ticks,
        "refreshes": refreshes,
        "refresh_skips": refresh_skips,
        "train_steps": train_steps,
        "episodes": episodes,
        "final_test_return": result.rows[-1]["test_return_mean"] if result.rows else float("nan"),
        "wall_clock_s": time.perf_counter() - start,
    }
    if cfg.out:
        write_metrics_csv(result.rows, cfg.out)
    return result


def _fmt(key, value):
    if key in TIMING_COLUMNS:
        return f"{value:.3f}"
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return repr(float(value))


def write_metrics_csv(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow([_fmt(k, row[k]) for k in CSV_HEADER])


def read_metrics_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return [
            {k: (int(v) if k in ("step", "episodes", "cache_count", "main_count") else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


def _run_one(cfg):
    return run_experiment(cfg)


def compare(base: ExperimentConfig, seeds, out_dir, modes=("per", "psmm", "dms"), workers: int = 1) -> dict:
    """Run every mode over every seed from one shared config.

    Writes ``raw/<mode>_seed<s>.csv`` per run, ``<mode>.csv`` with the seed-mean
    curve per mode, and ``summary.csv`` with one line per run plus per-mode
    medians.  Returns ``{mode: [final test returns in seed order]}``.
    """
    out_dir = Path(out_dir)
    (out_dir / "raw").mkdir(parents=True, exist_ok=True)
    jobs = []
    for mode in modes:
        for seed in seeds:
            cfg = single_mode_variant(base, mode).replace(
                seed=int(seed), out=str(out_dir / "raw" / f"{mode}_seed{seed}.csv")
            )
            jobs.append(cfg)
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(cfg) for cfg in jobs]

    finals: dict = {mode: [] for mode in modes}
    by_mode: dict = {mode: [] for mode in modes}
    for res in results:
        finals[res.config.mode].append(res.summary["final_test_return"])
        by_mode[res.config.mode].append(res.rows)
    for mode, runs in by_mode.items():
        if runs and runs[0]:
            write_metrics_csv(_mean_curve(runs), out_dir / f"{mode}.csv")

    with (out_dir / "summary.csv").open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["mode", "seed", "final_test_return", "final_train_return_mean100", "train_steps", "wall_clock_s"])
        for res in results:
            s = res.summary
            last_train = res.rows[-1]["train_return_mean100"] if res.rows else float("nan")
            writer.writerow([s["mode"], s["seed"], repr(s["final_test_return"]), repr(last_train), s["train_steps"], f"{s['wall_clock_s']:.3f}"])
        for mode in modes:
            writer.writerow([mode, "median", repr(statistics.median(finals[mode])) if finals[mode] else "nan", "", "", ""])
    (out_dir / "config.txt").write_text(dump_config(base))
    return finals


def _mean_curve(runs):
    rows = []
    for points in zip(*runs):
        row = {}
        for key in CSV_HEADER:
            vals = [p[key] for p in points]
            if key in ("step", "episodes", "cache_count", "main_count"):
                row[key] = int(round(sum(vals) / len(vals)))
            else:
                row[key] = float(np.mean(vals))
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# memory benchmark
# ---------------------------------------------------------------------------


def _synthetic_batch(rng, size, obs_dim, action_count):
    return Batch(
        rng.standard_normal((size, obs_dim)),
        rng.integers(0, action_count, size),
        rng.standard_normal(size),
        rng.standard_normal((size, obs_dim)),
        rng.random(size) < 0.05,
    )


def _prefill(mem, rng, obs_dim, action_count):
    """Fill every store of ``mem`` to capacity with random transitions and priorities."""
    params = mem.params
    lo = params.epsilon_priority ** params.alpha
    if mem.mode is Mode.DMS:
        cap = mem.main.capacity
        mem.main.slots.write_batch(np.arange(cap), _synthetic_batch(rng, cap, obs_dim, action_count))
        mem.main.count = cap
        mem.main.insert_cursor = 0
        c = mem.cache.capacity
        slots = mem.cache.insert(_synthetic_batch(rng, c, obs_dim, action_count))
        mem.cache.set_priorities(slots, rng.uniform(lo, 1.0, c))
    elif mem.mode is Mode.PER:
        store = mem.store
        cap = store.capacity
        store.write(np.arange(cap), _synthetic_batch(rng, cap, obs_dim, action_count))
        store.set_priorities(np.arange(cap), rng.uniform(lo, 1.0, cap))
        mem.cursor = 0
    else:
        cap = mem.capacity
        mem.data.write_batch(np.arange(cap), _synthetic_batch(rng, cap, obs_dim, action_count))
        mem.count = cap
        mem.prio[:] = rng.uniform(lo, 1.0, cap)


def bench_memory_ops(
    capacities,
    mode: str = "dms",
    t: int = 16,
    n: int = 4,
    trials: int = 200,
    cache_capacity: int = 2000,
    batch: int = 32,
    obs_dim: int = 4,
    action_count: int = 2,
    warmup: int = 10,
    seed: int = 0,
) -> list[dict]:
    """Time one memory-management cycle at each main capacity.

    A cycle is the memory work of one training step with no network: ``n``
    ingests (with their evictions), the cache refresh in dual mode, one
    minibatch sample and one priority write-back.
    """
    rows = []
    if trials <= 0:
        return rows
    mode = Mode(mode)
    for capacity in capacities:
        capacity = int(capacity)
        rng = np.random.default_rng(seed)
        policy = MemoryPolicy(mode=mode, t=t, n=n, main_capacity=capacity, cache_capacity=cache_capacity)
        mem = make_memory(policy, np.random.default_rng(seed + 1), obs_dim)
        _prefill(mem, rng, obs_dim, action_count)
        pool = _synthetic_batch(rng, n * (trials + warmup), obs_dim, action_count).to_transitions()
        fake_td = rng.standard_normal((trials + warmup, batch))
        times = np.empty(trials)
        for k in range(trials + warmup):
            t0 = time.perf_counter()
            for tr in pool[k * n:(k + 1) * n]:
                mem.ingest(tr)
            if mode is Mode.DMS:
                mem.refresh_cache()
            _, _, handles = mem.sample_minibatch(batch)
            mem.update_priorities(handles, fake_td[k])
            elapsed = time.perf_counter() - t0
            if k >= warmup:
                times[k - warmup] = elapsed
        rows.append(
            {
                "mode": mode.value,
                "main_capacity": capacity,
                "cache_capacity": cache_capacity if mode is Mode.DMS else 0,
                "op_cycle_mean_us": float(times.mean() * 1e6),
                "op_cycle_p95_us": float(np.percentile(times, 95) * 1e6),
            }
        )
    return rows


def write_bench_csv(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BENCH_HEADER)
        for row in rows:
            writer.writerow(
                [row["mode"], row["main_capacity"], row["cache_capacity"], f"{row['op_cycle_mean_us']:.3f}", f"{row['op_cycle_p95_us']:.3f}"]
            )
