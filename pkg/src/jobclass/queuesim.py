"""Discrete-event simulation of FCFS queues: one shared queue versus
separate short/long queues fed by a (possibly imperfect) classifier."""

from __future__ import annotations

import enum
import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .labeling import LONG, SHORT
from .mixture import MixtureModel
from .trace import nearest_rank

LN2 = math.log(2.0)


@dataclass(frozen=True, slots=True)
class SimJob:
    arrival_time: float
    service_time: float
    true_class: int
    assigned_class: int

    def __post_init__(self) -> None:
        if not self.service_time > 0:
            raise ValueError("service_time must be > 0")
        if self.arrival_time < 0:
            raise ValueError("arrival_time must be >= 0")


class Policy(str, enum.Enum):
    SINGLE_FCFS = "single_fcfs"
    TWO_QUEUE = "two_queue"


def mean_service_time(model: MixtureModel) -> float:
    """E[2^Y] for the lognormal mixture, in seconds."""

    def lognormal_mean(mu: float, var: float) -> float:
        return math.exp(mu * LN2 + 0.5 * var * LN2 * LN2)

    return (1 - model.pi) * lognormal_mean(model.mu1, model.var1) + model.pi * lognormal_mean(model.mu2, model.var2)


def arrival_rate_for(model: MixtureModel, utilization: float, servers: int) -> float:
    return utilization * servers / mean_service_time(model)


def gen_workload(
    model: MixtureModel,
    arrival_rate: float,
    n_jobs: int,
    misclassification: tuple[float, float] = (0.0, 0.0),
    seed: int = 0,
) -> list[SimJob]:
    """Poisson arrivals with service time 2^y, y drawn from the mixture.

    ``misclassification`` is (1 - sensitivity, 1 - specificity): the chance a
    short job is assigned LONG and a long job is assigned SHORT. Every random
    stream is drawn independently of those rates, so workloads generated
    with the same seed and different rates share arrivals, service times and
    flip draws (common random numbers).
    """
    fn_rate, fp_rate = misclassification
    if not (0.0 <= fn_rate <= 1.0 and 0.0 <= fp_rate <= 1.0):
        raise ValueError("misclassification rates must lie in [0, 1]")
    if not arrival_rate > 0:
        raise ValueError("arrival_rate must be > 0")
    s_arr, s_cls, s_srv, s_flip = np.random.SeedSequence(seed).spawn(4)
    arrivals = np.cumsum(np.random.default_rng(s_arr).exponential(1.0 / arrival_rate, n_jobs))
    is_long = np.random.default_rng(s_cls).random(n_jobs) < model.pi
    z = np.random.default_rng(s_srv).standard_normal(n_jobs)
    y = np.where(is_long, model.mu2 + math.sqrt(model.var2) * z, model.mu1 + math.sqrt(model.var1) * z)
    u = np.random.default_rng(s_flip).random(n_jobs)
    flip = np.where(is_long, u < fp_rate, u < fn_rate)
    true_cls = np.where(is_long, LONG, SHORT)
    assigned = np.where(flip, 1 - true_cls, true_cls)
    service = np.exp2(y)
    return [
        SimJob(float(a), float(s), int(t), int(c))
        for a, s, t, c in zip(arrivals, service, true_cls, assigned)
    ]


@dataclass
class TurnaroundStats:
    count: int = 0
    mean: float = math.nan
    median: float = math.nan
    p95: float = math.nan

    @classmethod
    def of(cls, values: Sequence[float]) -> "TurnaroundStats":
        if not len(values):
            return cls()
        s = sorted(values)
        return cls(len(s), float(np.mean(s)), float(nearest_rank(s, 0.5)), float(nearest_rank(s, 0.95)))


@dataclass
class SimMetrics:
    overall: TurnaroundStats
    short: TurnaroundStats
    long: TurnaroundStats
    throughput: float
    horizon: float
    utilization: dict[str, float]
    completed: int
    turnaround: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))
    start_times: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))

    @property
    def empty(self) -> bool:
        return self.completed == 0


class _Queue:
    def __init__(self, name: str, servers: int) -> None:
        self.name = name
        self.servers = servers
        self.free = servers
        self.waiting: deque[int] = deque()
        self.busy_time = 0.0


def simulate(
    jobs: Sequence[SimJob],
    policy: Policy | str = Policy.SINGLE_FCFS,
    total_servers: int = 1,
    servers_short: int | None = None,
    short_share: float | None = None,
) -> SimMetrics:
    """Non-preemptive FCFS simulation.

    TWO_QUEUE routes each job by ``assigned_class``. Unless ``servers_short``
    is given, the servers are split in proportion to ``short_share`` (default:
    the fraction of truly short jobs), rounded, with at least one per queue.
    Simultaneous events: completions are handled before arrivals, and
    arrivals in input order.
    """
    policy = Policy(policy)
    n = len(jobs)
    if any(jobs[i].arrival_time > jobs[i + 1].arrival_time for i in range(n - 1)):
        raise ValueError("jobs must be sorted by arrival time")
    if policy is Policy.SINGLE_FCFS:
        if total_servers < 1 and n:
            raise ConfigError("SINGLE_FCFS needs at least one server")
        queues = {"all": _Queue("all", total_servers)}

        def queue_of(job: SimJob) -> _Queue:
            return queues["all"]

    else:
        if servers_short is None:
            if short_share is None:
                short_share = (sum(1 for j in jobs if j.true_class == SHORT) / n) if n else 0.5
            servers_short = min(max(1, round(short_share * total_servers)), max(1, total_servers - 1))
        servers_long = total_servers - servers_short
        queues = {"short": _Queue("short", servers_short), "long": _Queue("long", servers_long)}
        for name, cls in (("short", SHORT), ("long", LONG)):
            if queues[name].servers < 1 and any(j.assigned_class == cls for j in jobs):
                raise ConfigError(f"queue {name!r} has no servers but receives jobs")

        def queue_of(job: SimJob) -> _Queue:
            return queues["short"] if job.assigned_class == SHORT else queues["long"]

    start = np.full(n, math.nan)
    finish = np.full(n, math.nan)
    # (time, priority, tiebreak, job index); completions (0) before arrivals (1)
    events: list[tuple[float, int, int, int]] = [(j.arrival_time, 1, i, i) for i, j in enumerate(jobs)]
    heapq.heapify(events)

    def begin(q: _Queue, i: int, now: float) -> None:
        q.free -= 1
        start[i] = now
        done = now + jobs[i].service_time
        finish[i] = done
        q.busy_time += jobs[i].service_time
        heapq.heappush(events, (done, 0, i, i))

    while events:
        now, kind, _, i = heapq.heappop(events)
        q = queue_of(jobs[i])
        if kind == 1:
            if q.free > 0 and not q.waiting:
                begin(q, i, now)
            else:
                q.waiting.append(i)
        else:
            q.free += 1
            if q.waiting:
                begin(q, q.waiting.popleft(), now)

    if n == 0:
        empty = TurnaroundStats()
        return SimMetrics(empty, TurnaroundStats(), TurnaroundStats(), 0.0, 0.0, {k: 0.0 for k in queues}, 0)
    turnaround = finish - np.array([j.arrival_time for j in jobs])
    true_cls = np.array([j.true_class for j in jobs])
    horizon = float(finish.max())
    util = {
        name: (q.busy_time / (q.servers * horizon) if q.servers and horizon > 0 else 0.0) for name, q in queues.items()
    }
    return SimMetrics(
        overall=TurnaroundStats.of(turnaround.tolist()),
        short=TurnaroundStats.of(turnaround[true_cls == SHORT].tolist()),
        long=TurnaroundStats.of(turnaround[true_cls == LONG].tolist()),
        throughput=n / horizon if horizon > 0 else 0.0,
        horizon=horizon,
        utilization=util,
        completed=int(np.count_nonzero(~np.isnan(finish))),
        turnaround=turnaround,
        start_times=start,
    )


METRIC_COLUMNS = (
    "n_jobs",
    "completed",
    "mean_turnaround",
    "median_turnaround",
    "p95_turnaround",
    "mean_turnaround_short",
    "median_turnaround_short",
    "p95_turnaround_short",
    "mean_turnaround_long",
    "median_turnaround_long",
    "p95_turnaround_long",
    "throughput",
    "utilization_short",
    "utilization_long",
    "utilization_all",
)


def metrics_row(m: SimMetrics, n_jobs: int) -> dict[str, float | int | str]:
    def num(x: float) -> str:
        return "" if math.isnan(x) else repr(float(x))

    return {
        "n_jobs": n_jobs,
        "completed": m.completed,
        "mean_turnaround": num(m.overall.mean),
        "median_turnaround": num(m.overall.median),
        "p95_turnaround": num(m.overall.p95),
        "mean_turnaround_short": num(m.short.mean),
        "median_turnaround_short": num(m.short.median),
        "p95_turnaround_short": num(m.short.p95),
        "mean_turnaround_long": num(m.long.mean),
        "median_turnaround_long": num(m.long.median),
        "p95_turnaround_long": num(m.long.p95),
        "throughput": num(m.throughput),
        "utilization_short": num(m.utilization.get("short", math.nan)),
        "utilization_long": num(m.utilization.get("long", math.nan)),
        "utilization_all": num(m.utilization.get("all", math.nan)),
    }
