"""Round scheduler: neighbor selection, member work, aggregation, metrics.

Rounds are barrier-synchronized. Every computation inside a round reads the
round-start snapshot, and every random draw comes from a stream keyed by
(client seed, round, purpose), so the order in which clients are processed
cannot change any result.
"""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass

import numpy as np

from . import aggregation, collaboration, model
from . import data as data_mod
from .core import (ClientPlan, ClientState, ConfigError, DivergedError,
                   ExperimentConfig, ModelParams, PartitionError, RoundPlan,
                   Topology, check_finite, cosine_sim, fully_connected,
                   partially_connected, stream_seed, substream)
from .collaboration import SimilarityRow
from .model import ModelShape

# ---------------------------------------------------------------------------
# stream tags: run-level streams are (seed, TAG, ...), per-client streams are
# (client_seed, round, TAG). Never reuse a tag for two purposes.
# ---------------------------------------------------------------------------
TAG_DATA = 0
TAG_SPLIT = 1
TAG_INIT = 2
TAG_CLIENT = 3
TAG_FEDAVG = 4
TAG_TOPO = 5

TAG_WORK = 0
TAG_EVAL = 1
TAG_SELECT = 2
TAG_NOISE_W = 3
TAG_NOISE_PROXY = 4
TAG_NOISE_LOSS = 5

FEDAVG_FRACTION = 0.1

METRICS_HEADER = ["round", "mean_acc", "min_acc", "max_acc", "mean_loss",
                  "mean_grad_sq", "mean_coreset", "mean_conf"]
AUDIT_HEADER = ["round", "client", "neighbor", "sim", "prob", "selected", "weight"]


# ---------------------------------------------------------------------------
# algorithm ids
# ---------------------------------------------------------------------------

_ALGO_KINDS = ("afind_plus", "afind_uniform_agg", "gossip_k", "fixed_k_greedy",
               "local_only", "fedavg_uniform")
_PARAMETRIC = ("gossip_k", "fixed_k_greedy")


@dataclass(frozen=True)
class AlgorithmId:
    kind: str
    k: int | None = None

    @property
    def needs_sims(self) -> bool:
        return self.kind in ("afind_plus", "afind_uniform_agg", "fixed_k_greedy")


def parse_algorithm(text: str) -> AlgorithmId:
    """Accepts "name", "name:k", or "name(k)"."""
    s = text.strip()
    m = re.fullmatch(r"([a-z_]+)\s*[:(]\s*(\d+)\s*\)?", s)
    kind, k = (m.group(1), int(m.group(2))) if m else (s, None)
    if kind not in _ALGO_KINDS:
        raise ConfigError("experiment.algorithm", f"unknown algorithm '{text}'")
    if kind in _PARAMETRIC:
        if k is None:
            raise ConfigError("experiment.algorithm",
                              f"'{kind}' needs a neighbor count, e.g. {kind}:3")
        if k < 1:
            raise ConfigError("experiment.algorithm", "neighbor count must be >= 1")
    elif k is not None:
        raise ConfigError("experiment.algorithm", f"'{kind}' takes no parameter")
    return AlgorithmId(kind, k)


def parse_partition(text: str):
    """Split "dirichlet:0.5" style partition specs into (kind, param)."""
    s = text.strip()
    kind, _, arg = s.partition(":")
    kind = kind.strip()
    if kind == "iid":
        return "iid", None
    if kind == "dirichlet":
        try:
            return "dirichlet", float(arg)
        except ValueError:
            raise ConfigError("data.partition", f"bad dirichlet alpha '{arg}'") from None
    if kind in ("pathological", "cluster"):
        try:
            return kind, int(arg)
        except ValueError:
            raise ConfigError("data.partition", f"'{kind}' needs an integer parameter") from None
    raise ConfigError("data.partition", f"unknown partition '{text}'")


# ---------------------------------------------------------------------------
# runtime containers
# ---------------------------------------------------------------------------

@dataclass
class ClientRuntime:
    """ClientState plus the immutable per-client data and seed."""

    state: ClientState
    Xtr: np.ndarray
    ytr: np.ndarray
    Xte: np.ndarray
    yte: np.ndarray
    rng_seed: int


@dataclass
class RoundMetrics:
    round: int
    mean_acc: float
    min_acc: float
    max_acc: float
    mean_loss: float
    mean_grad_sq: float
    mean_coreset: float
    mean_conf: float

    def row(self) -> list:
        return [self.round, self.mean_acc, self.min_acc, self.max_acc,
                self.mean_loss, self.mean_grad_sq, self.mean_coreset, self.mean_conf]


@dataclass
class TrainResult:
    config: ExperimentConfig
    shape: ModelShape
    metrics: list[RoundMetrics]
    plans: list[RoundPlan]
    runtimes: list[ClientRuntime]
    cluster_of: np.ndarray | None = None
    shards: list[np.ndarray] | None = None

    def best_mean_acc(self) -> float:
        return max(m.mean_acc for m in self.metrics)

    def final_mean_acc(self) -> float:
        return self.metrics[-1].mean_acc


# ---------------------------------------------------------------------------
# problem construction
# ---------------------------------------------------------------------------

def build_topology(cfg: ExperimentConfig) -> Topology:
    spec = cfg.topology.strip()
    if spec == "full":
        return fully_connected(cfg.m)
    if spec.startswith("partial"):
        _, _, arg = spec.partition(":")
        try:
            density = float(arg)
        except ValueError:
            raise ConfigError("engine.topology", f"bad density '{arg}'") from None
        return partially_connected(cfg.m, density, substream(cfg.seed, TAG_TOPO))
    raise ConfigError("engine.topology", f"unknown topology '{cfg.topology}'")


def clients_from_datasets(cfg: ExperimentConfig, shards: list[data_mod.Dataset],
                          topo: Topology, shape: ModelShape) -> list[ClientRuntime]:
    """Split each shard, initialize params, and seed the per-client streams."""
    if len(shards) != cfg.m:
        raise PartitionError(
            f"infeasible-partition: {len(shards)} shards for {cfg.m} clients")
    runtimes = []
    # one common initialization: gradient similarity is only meaningful while
    # clients share a parameter frame, so everyone starts from the same point
    init = model.init_params(shape, substream(cfg.seed, TAG_INIT))
    for i, ds in enumerate(shards):
        tr, te = data_mod.train_test_split(len(ds), cfg.test_frac,
                                           substream(cfg.seed, TAG_SPLIT, i))
        params = init.copy()
        avail = topo.available_neighbors(i, 0)
        prob0 = {j: 1.0 / len(avail) for j in avail} if avail else {}
        state = ClientState(
            id=i, params=params, proxy=None, loss_smoothed=0.0,
            threshold=cfg.tau * 0.5, confidence=0.5, prob_row=prob0, sim_row={})
        runtimes.append(ClientRuntime(
            state=state,
            Xtr=ds.features[tr], ytr=ds.labels[tr],
            Xte=ds.features[te], yte=ds.labels[te],
            rng_seed=stream_seed(cfg.seed, TAG_CLIENT, i)))
    return runtimes


def build_problem(cfg: ExperimentConfig, topology: Topology | None = None):
    """Materialize data, topology, and client runtimes for a config.

    Returns (runtimes, topology, shape, cluster_of, shards); cluster_of is
    None unless the partition is cluster-based, shards is None when shards
    are generated directly instead of cut from one dataset.
    """
    cfg.validate()
    parse_algorithm(cfg.algorithm)
    topo = topology if topology is not None else build_topology(cfg)
    if topo.m != cfg.m:
        raise ConfigError("experiment.m", f"topology has {topo.m} nodes for m={cfg.m}")
    rng = substream(cfg.seed, TAG_DATA)
    kind, param = parse_partition(cfg.partition)
    cluster_of = None
    shards_idx = None
    if kind == "cluster":
        if cfg.dataset.startswith("csv:"):
            raise ConfigError("data.partition", "cluster partition generates its own data")
        datasets, cluster_of = data_mod.synthetic_clusters(
            int(param), cfg.m, cfg.d_in, cfg.n_per_client, cfg.sep, rng,
            mode=cfg.cluster_mode, num_classes=cfg.num_classes,
            class_scale=cfg.class_scale, noise=cfg.feature_noise)
    else:
        if cfg.dataset.startswith("csv:"):
            base = data_mod.load_csv(cfg.dataset[4:])
        elif cfg.dataset == "synthetic":
            base = data_mod.synthetic_dataset(
                cfg.m * cfg.n_per_client, cfg.d_in, cfg.num_classes, rng,
                class_scale=cfg.class_scale, noise=cfg.feature_noise)
        else:
            raise ConfigError("data.dataset", f"unknown dataset '{cfg.dataset}'")
        if kind == "iid":
            shards_idx = data_mod.iid_partition(base, cfg.m, rng)
        elif kind == "dirichlet":
            shards_idx = data_mod.dirichlet_partition(
                base, cfg.m, float(param), rng, min_per_client=cfg.min_per_client)
        else:
            shards_idx = data_mod.pathological_partition(base, cfg.m, int(param), rng)
        datasets = [base.subset(s) for s in shards_idx]
    shape = ModelShape(d_in=datasets[0].features.shape[1], d_hidden=cfg.d_hidden,
                       num_classes=datasets[0].num_classes)
    runtimes = clients_from_datasets(cfg, datasets, topo, shape)
    return runtimes, topo, shape, cluster_of, shards_idx


# ---------------------------------------------------------------------------
# noise on transmitted quantities
# ---------------------------------------------------------------------------

def clip_to_norm(v: np.ndarray, c0: float) -> np.ndarray:
    """Scale v down so its Euclidean norm is at most c0."""
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm > c0:
        return v * (c0 / norm)
    return v.copy()


def privatize(v: np.ndarray, sigma2: float, c0: float, ell: int,
              eps: np.ndarray | None) -> np.ndarray:
    """Clip to norm c0, then add the pre-drawn Gaussian perturbation `eps`
    (scaled N(0, (sigma2 * c0 / ell)^2) per coordinate). sigma2=0 clips only.
    """
    out = clip_to_norm(v, c0)
    if sigma2 > 0.0 and eps is not None:
        out = out + eps
    return out


def _noise_draw(rng: np.random.Generator, sigma2: float, c0: float,
                ell: int, size: int) -> np.ndarray | None:
    if sigma2 <= 0.0:
        return None
    return rng.normal(0.0, sigma2 * c0 / ell, size)


# ---------------------------------------------------------------------------
# member work
# ---------------------------------------------------------------------------

@dataclass
class WorkResult:
    member: int
    w_end: np.ndarray
    beta_end: np.ndarray
    report: aggregation.LossReport


def _member_work(cfg: ExperimentConfig, shape: ModelShape,
                 rts: list[ClientRuntime], t: int, requester: int, member: int,
                 eval_batches: dict, cache: dict) -> WorkResult:
    """Run `member`'s local work for `requester`'s round.

    The member warm-starts the shared block from the requester's round-start
    value and keeps its own head. With share_once the member works from its
    own parameters instead, so one result serves every requester.
    """
    key = member if cfg.share_once else (requester, member)
    if key in cache:
        return cache[key]
    src = rts[member]
    w_source = member if cfg.share_once else requester
    params = ModelParams(rts[w_source].state.params.w.copy(),
                         src.state.params.beta.copy())
    Xe, ye = eval_batches[member]
    loss_start = model.loss(shape, params, Xe, ye)
    rng = substream(src.rng_seed, t, TAG_WORK)
    batcher = model.make_batcher(src.Xtr, src.ytr, cfg.batch_size, rng)
    try:
        out, last = model.local_update(shape, params, batcher, cfg.k_beta, cfg.k_w,
                                       cfg.eta_beta, cfg.eta_w, cfg.momentum)
    except DivergedError:
        raise DivergedError(f"client {member} update for client {requester}", t) from None
    loss_end = model.loss(shape, out, *last) if last is not None else loss_start
    if not (math.isfinite(loss_start) and math.isfinite(loss_end)):
        raise DivergedError(f"client {member} loss for client {requester}", t)
    if cfg.loss_ema and t > 0:
        smoothed = aggregation.smooth_loss(loss_end, src.state.loss_smoothed, cfg.gamma)
    else:
        smoothed = aggregation.smooth_loss(loss_end, loss_start, cfg.gamma)
    res = WorkResult(member, out.w, out.beta,
                     aggregation.LossReport(member, loss_start, loss_end, smoothed))
    cache[key] = res
    return res


# ---------------------------------------------------------------------------
# selection
# ---------------------------------------------------------------------------

def _select(cfg: ExperimentConfig, aid: AlgorithmId, rt: ClientRuntime,
            avail: list[int], t: int) -> tuple[set[int], dict[int, float], float, float]:
    """Choose this round's coreset for one client.

    Returns (coreset, probs used, threshold used, confidence used). The probs
    and threshold come from the previous round's state, so selection is one
    round stale by construction.
    """
    i = rt.state.id
    if aid.kind == "local_only":
        return {i}, {}, 0.0, rt.state.confidence
    if aid.kind == "gossip_k":
        k = min(aid.k, len(avail))
        if k >= len(avail):
            chosen = set(avail)
        else:
            rng = substream(rt.rng_seed, t, TAG_SELECT)
            chosen = {int(j) for j in rng.choice(np.array(avail), size=k, replace=False)}
        return chosen | {i}, {}, 0.0, rt.state.confidence
    if aid.kind == "fixed_k_greedy":
        sims = {j: rt.state.sim_row.get(j, 0.0) for j in avail}
        chosen = collaboration.top_k_by_sim(sims, min(aid.k, len(avail)))
        return chosen | {i}, {}, 0.0, rt.state.confidence
    # adaptive threshold selection
    theta = cfg.theta_override if cfg.theta_override is not None else rt.state.threshold
    probs = {j: rt.state.prob_row[j] for j in avail if j in rt.state.prob_row}
    coreset = collaboration.select_coreset(probs, theta, i)
    if cfg.max_coreset is not None and len(coreset) - 1 > cfg.max_coreset:
        ranked = sorted((j for j in coreset if j != i),
                        key=lambda j: (-probs.get(j, 0.0), j))
        coreset = set(ranked[:cfg.max_coreset]) | {i}
    return coreset, probs, theta, rt.state.confidence


# ---------------------------------------------------------------------------
# one round
# ---------------------------------------------------------------------------

def run_round(cfg: ExperimentConfig, shape: ModelShape, topo: Topology,
              rts: list[ClientRuntime], t: int,
              order: list[int] | None = None):
    """Advance every client by one round against the same snapshot.

    `order` only permutes the processing sequence; results are identical for
    any order. Returns (new runtimes, RoundPlan, RoundMetrics).
    """
    aid = parse_algorithm(cfg.algorithm)
    if aid.kind == "fedavg_uniform":
        return _run_round_fedavg(cfg, shape, rts, t)
    m = len(rts)
    order = list(range(m)) if order is None else list(order)
    if sorted(order) != list(range(m)):
        raise ValueError("order must be a permutation of client ids")
    noisy = cfg.noise_sigma2 is not None
    sigma2 = cfg.noise_sigma2 if noisy else 0.0

    # phase A: per-client round constants (eval batch, proxy, noise draws)
    eval_batches: dict[int, tuple] = {}
    proxy_clean: dict[int, np.ndarray] = {}
    proxy_rx: dict[int, np.ndarray] = {}
    eps_w: dict[int, np.ndarray | None] = {}
    eps_loss: dict[int, np.ndarray | None] = {}
    for i in order:
        rt = rts[i]
        n_tr = len(rt.ytr)
        rng = substream(rt.rng_seed, t, TAG_EVAL)
        if cfg.eval_batch >= n_tr:
            eval_batches[i] = (rt.Xtr, rt.ytr)
        else:
            idx = rng.choice(n_tr, size=cfg.eval_batch, replace=False)
            eval_batches[i] = (rt.Xtr[idx], rt.ytr[idx])
        if noisy:
            ell = cfg.noise_batch if cfg.noise_batch is not None else n_tr
            eps_w[i] = _noise_draw(substream(rt.rng_seed, t, TAG_NOISE_W),
                                   sigma2, cfg.noise_clip, ell, shape.w_size)
            eps_loss[i] = _noise_draw(substream(rt.rng_seed, t, TAG_NOISE_LOSS),
                                      sigma2, cfg.noise_clip, ell, 1)
        if aid.needs_sims:
            g = model.proxy_gradient(shape, rt.state.params, *eval_batches[i])
            proxy_clean[i] = g
            if noisy:
                ell = cfg.noise_batch if cfg.noise_batch is not None else n_tr
                eps_p = _noise_draw(substream(rt.rng_seed, t, TAG_NOISE_PROXY),
                                    sigma2, cfg.noise_clip, ell, shape.w_size)
                proxy_rx[i] = privatize(g, sigma2, cfg.noise_clip, ell, eps_p)
            else:
                proxy_rx[i] = g

    # phase B: selection, member work, aggregation
    cache: dict = {}
    new_states: dict[int, ClientState] = {}
    plan = RoundPlan(round_index=t + 1)
    for i in order:
        rt = rts[i]
        avail = topo.available_neighbors(i, t)
        coreset, probs_used, theta_used, conf_used = _select(cfg, aid, rt, avail, t)
        blocks: dict[int, np.ndarray] = {}
        reports: dict[int, float] = {}
        own: WorkResult | None = None
        for j in sorted(coreset):
            res = _member_work(cfg, shape, rts, t, i, j, eval_batches, cache)
            if j == i:
                own = res
                blocks[i] = res.w_end
                reports[i] = res.report.smoothed
            else:
                ell = cfg.noise_batch if cfg.noise_batch is not None else len(rts[j].ytr)
                if noisy:
                    blocks[j] = privatize(res.w_end, sigma2, cfg.noise_clip, ell, eps_w[j])
                    noised = privatize(np.array([res.report.smoothed]), sigma2,
                                       cfg.noise_clip, ell, eps_loss[j])
                    reports[j] = float(noised[0])
                else:
                    blocks[j] = res.w_end
                    reports[j] = res.report.smoothed
        if aid.kind == "afind_plus":
            weights = aggregation.boltzmann_weights(reports, cfg.t_agg)
        else:
            weights = aggregation.uniform_weights(coreset)
        new_w = aggregation.aggregate(blocks, weights)
        new_params = ModelParams(new_w, own.beta_end.copy())
        check_finite(new_params, f"client {i}", t)
        new_states[i] = ClientState(
            id=i, params=new_params, proxy=rt.state.proxy,
            loss_smoothed=own.report.smoothed,
            threshold=rt.state.threshold, confidence=rt.state.confidence,
            prob_row=dict(rt.state.prob_row), sim_row=dict(rt.state.sim_row))
        plan.clients[i] = ClientPlan(
            client=i, coreset=coreset, sims=dict(rt.state.sim_row),
            probs=dict(probs_used), agg_weights=weights,
            confidence=conf_used, threshold=theta_used)

    # phase C: refresh similarity state for the next round
    if aid.needs_sims:
        for i in order:
            rt = rts[i]
            avail = topo.available_neighbors(i, t)
            sims = {j: cosine_sim(proxy_clean[i], proxy_rx[j]) for j in avail}
            probs = collaboration.sampling_probs(sims, cfg.upsilon)
            h = collaboration.entropy_score(SimilarityRow(i, sims).refined())
            conf = collaboration.confidence(h)
            st = new_states[i]
            st.proxy = proxy_clean[i]
            st.sim_row = sims
            st.prob_row = probs
            st.confidence = conf
            st.threshold = collaboration.threshold(cfg.tau, conf)
            plan.clients[i].restricted = collaboration.restricted_probs(
                sims, cfg.upsilon, plan.clients[i].coreset, i)

    new_rts = [ClientRuntime(new_states[i], rts[i].Xtr, rts[i].ytr,
                             rts[i].Xte, rts[i].yte, rts[i].rng_seed)
               for i in range(m)]
    mean_coreset = float(np.mean([len(p.coreset) for p in plan.clients.values()]))
    mean_conf = float(np.mean([p.confidence for p in plan.clients.values()]))
    metrics = compute_metrics(cfg, shape, new_rts, t + 1, mean_coreset, mean_conf)
    return new_rts, plan, metrics


def _run_round_fedavg(cfg: ExperimentConfig, shape: ModelShape,
                      rts: list[ClientRuntime], t: int):
    """Server-style baseline: a sampled cohort averages uniformly and the
    result is broadcast to everyone. Heads stay personal."""
    m = len(rts)
    count = max(1, math.ceil(FEDAVG_FRACTION * m))
    rng = substream(cfg.seed, TAG_FEDAVG, t)
    cohort = sorted(int(j) for j in rng.choice(m, size=count, replace=False))
    noisy = cfg.noise_sigma2 is not None
    sigma2 = cfg.noise_sigma2 if noisy else 0.0
    blocks: dict[int, np.ndarray] = {}
    results: dict[int, WorkResult] = {}
    eval_batches: dict[int, tuple] = {}
    cache: dict = {}
    for j in cohort:
        rt = rts[j]
        n_tr = len(rt.ytr)
        rng_e = substream(rt.rng_seed, t, TAG_EVAL)
        if cfg.eval_batch >= n_tr:
            eval_batches[j] = (rt.Xtr, rt.ytr)
        else:
            idx = rng_e.choice(n_tr, size=cfg.eval_batch, replace=False)
            eval_batches[j] = (rt.Xtr[idx], rt.ytr[idx])
        res = _member_work(cfg.with_overrides(share_once=True), shape, rts, t,
                           j, j, eval_batches, cache)
        results[j] = res
        if noisy:
            ell = cfg.noise_batch if cfg.noise_batch is not None else n_tr
            eps = _noise_draw(substream(rt.rng_seed, t, TAG_NOISE_W),
                              sigma2, cfg.noise_clip, ell, shape.w_size)
            blocks[j] = privatize(res.w_end, sigma2, cfg.noise_clip, ell, eps)
        else:
            blocks[j] = res.w_end
    weights = aggregation.uniform_weights(set(cohort))
    new_w = aggregation.aggregate(blocks, weights)
    if not np.all(np.isfinite(new_w)):
        raise DivergedError("global average", t)
    plan = RoundPlan(round_index=t + 1)
    new_rts = []
    for i, rt in enumerate(rts):
        if i in results:
            params = ModelParams(new_w.copy(), results[i].beta_end.copy())
            smoothed = results[i].report.smoothed
        else:
            params = ModelParams(new_w.copy(), rt.state.params.beta.copy())
            smoothed = rt.state.loss_smoothed
        check_finite(params, f"client {i}", t)
        new_rts.append(ClientRuntime(
            ClientState(id=i, params=params, proxy=rt.state.proxy,
                        loss_smoothed=smoothed, threshold=rt.state.threshold,
                        confidence=rt.state.confidence,
                        prob_row=dict(rt.state.prob_row),
                        sim_row=dict(rt.state.sim_row)),
            rt.Xtr, rt.ytr, rt.Xte, rt.yte, rt.rng_seed))
    for j in cohort:
        plan.clients[j] = ClientPlan(
            client=j, coreset=set(cohort), sims={}, probs={},
            agg_weights=dict(weights), confidence=rts[j].state.confidence,
            threshold=0.0)
    mean_coreset = float(len(cohort))
    mean_conf = float(np.mean([p.confidence for p in plan.clients.values()]))
    metrics = compute_metrics(cfg, shape, new_rts, t + 1, mean_coreset, mean_conf)
    return new_rts, plan, metrics


# ---------------------------------------------------------------------------
# metrics and training loop
# ---------------------------------------------------------------------------

def evaluate(shape: ModelShape, rts: list[ClientRuntime]) -> np.ndarray:
    """Per-client test accuracy, in client order."""
    return np.array([model.accuracy(shape, rt.state.params, rt.Xte, rt.yte)
                     for rt in rts])


def global_grad_sq(shape: ModelShape, rts: list[ClientRuntime]) -> float:
    """Squared gradient norm of the average objective at the current point.

    The shared block contributes the squared norm of the averaged gradient;
    each personal head contributes its own gradient scaled by 1/m.
    """
    m = len(rts)
    gw_sum = np.zeros(shape.w_size)
    gb_sq = 0.0
    for rt in rts:
        _, g_w, g_b = model.loss_and_grads(shape, rt.state.params, rt.Xtr, rt.ytr)
        gw_sum += g_w
        gb_sq += float(g_b @ g_b)
    gw_mean = gw_sum / m
    return float(gw_mean @ gw_mean) + gb_sq / (m * m)


def compute_metrics(cfg: ExperimentConfig, shape: ModelShape,
                    rts: list[ClientRuntime], round_index: int,
                    mean_coreset: float, mean_conf: float) -> RoundMetrics:
    accs = evaluate(shape, rts)
    losses = [model.loss(shape, rt.state.params, rt.Xtr, rt.ytr) for rt in rts]
    return RoundMetrics(
        round=round_index,
        mean_acc=float(np.mean(accs)),
        min_acc=float(np.min(accs)),
        max_acc=float(np.max(accs)),
        mean_loss=float(np.mean(losses)),
        mean_grad_sq=global_grad_sq(shape, rts),
        mean_coreset=mean_coreset,
        mean_conf=mean_conf)


def run_rounds(cfg: ExperimentConfig, shape: ModelShape, topo: Topology,
               rts: list[ClientRuntime], rounds: int | None = None):
    """Drive `rounds` rounds from the given state.

    Returns (final runtimes, metrics rows including the round-0 row, plans).
    """
    rounds = cfg.rounds if rounds is None else rounds
    metrics = [compute_metrics(cfg, shape, rts, 0, 0.0, 0.5)]
    plans: list[RoundPlan] = []
    for t in range(rounds):
        rts, plan, rm = run_round(cfg, shape, topo, rts, t)
        plans.append(plan)
        metrics.append(rm)
    return rts, metrics, plans


def run_training(cfg: ExperimentConfig, topology: Topology | None = None) -> TrainResult:
    """Build the problem for `cfg` and run it to completion."""
    rts, topo, shape, cluster_of, shards = build_problem(cfg, topology)
    rts, metrics, plans = run_rounds(cfg, shape, topo, rts)
    return TrainResult(config=cfg, shape=shape, metrics=metrics, plans=plans,
                       runtimes=rts, cluster_of=cluster_of, shards=shards)


# ---------------------------------------------------------------------------
# writers
# ---------------------------------------------------------------------------

def write_metrics_csv(path: str, metrics: list[RoundMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
        for rm in metrics:
            writer.writerow([rm.round] + [repr(float(v)) for v in rm.row()[1:]])


def write_audit_csv(path: str, plans: list[RoundPlan]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(AUDIT_HEADER)
        for plan in plans:
            for row in plan.audit_rows():
                rnd, client, neighbor, sim, prob, selected, weight = row
                writer.writerow([rnd, client, neighbor, repr(float(sim)),
                                 repr(float(prob)), selected, repr(float(weight))])
