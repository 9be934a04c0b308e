"""Monte-Carlo runs of MultiModel, Ideal and SeqnModel training.

Each realization draws its own device geometry and per-frame channels;
data, data split and initial models are shared by all realizations and
schemes so that comparisons are paired.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bound as bnd
from .beamform import NormalizedChannels, bcd_solve, objective_p3, snr_max_beamformer
from .channel import sample_channels, sample_geometry
from .config import SimConfig
from .errors import MMOAAError
from .learning import (LOGISTIC, Model, even_partition, load_mnist_idx, local_sgd,
                       make_synthetic, test_accuracy)
from .oaa import (aggregation_weights, downlink_broadcast, ideal_aggregate, place_models,
                  uplink_aggregate)
from .rng import substream
from .scheduler import partition_devices, single_group

log = logging.getLogger(__name__)

CSV_HEADER = ("scheme", "realization", "frame", "round", "model", "accuracy", "best_accuracy",
              "obj_p3", "h_term", "gap_bound", "elapsed_ms")
TRACE_HEADER = ("scheme", "realization", "frame", "iteration", "objective_p3", "objective_p2")
POWER_HEADER = ("scheme", "realization", "round", "group", "model", "signal_power",
                "interference_power", "noise_power")
BOUND_HEADER = ("scheme", "realization", "frame", "model", "H", "G", "C", "gap_bound")

Z_90 = 1.6448536269514722


class RunError(MMOAAError):
    """A module error annotated with where in the run it happened."""


@dataclass
class MetricsRecord:
    scheme: str
    realization: int
    frame: int
    round: int
    model: int
    accuracy: float
    best_accuracy: float
    obj_p3: float = math.nan
    h_term: float = math.nan
    gap_bound: float = math.nan
    elapsed_ms: float = math.nan

    def row(self):
        return [self.scheme, self.realization, self.frame, self.round, self.model,
                _fmt(self.accuracy), _fmt(self.best_accuracy), _fmt(self.obj_p3),
                _fmt(self.h_term), _fmt(self.gap_bound), _fmt(self.elapsed_ms)]


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


@dataclass
class Workload:
    """Everything a realization reads but never mutates."""

    models: list
    train: list
    test: list
    shards: list
    theta0: list
    dims: list
    D_max: int
    bound_base: dict = field(default_factory=dict)


def build_workload(cfg: SimConfig) -> Workload:
    feature_dims = cfg.model_feature_dims()
    models, train, test = [], [], []
    mnist = None
    if cfg.dataset == "mnist":
        root = Path(cfg.mnist_dir)
        mnist = (load_mnist_idx(root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte"),
                 load_mnist_idx(root / "t10k-images-idx3-ubyte", root / "t10k-labels-idx1-ubyte"))
    for m in range(1, cfg.M + 1):
        if mnist is not None:
            tr, te = mnist
            b = tr.features.shape[1]
            C = 10
        else:
            b = feature_dims[m - 1]
            C = cfg.n_classes
            full = make_synthetic(C, b, cfg.train_samples + cfg.test_samples, cfg.margin,
                                  substream(cfg.seed, "data", m))
            tr = full.subset(np.arange(cfg.train_samples))
            te = full.subset(np.arange(cfg.train_samples, len(full)))
        model = Model(cfg.model_kind, b, C, hidden=cfg.hidden if cfg.model_kind == "mlp" else 0,
                      l2=cfg.l2)
        models.append(model)
        train.append(tr)
        test.append(te)
    shards = [even_partition(len(tr), cfg.K, substream(cfg.seed, "partition", m))
              for m, tr in enumerate(train, start=1)]
    theta0 = [model.init(substream(cfg.seed, "init", m)) for m, model in enumerate(models, start=1)]
    dims = [model.dim for model in models]
    work = Workload(models, train, test, shards, theta0, dims, max(dims))
    if cfg.bound:
        work.bound_base = _bound_calibration(cfg, work)
    return work


def _bound_calibration(cfg: SimConfig, work: Workload) -> dict:
    """Data-dependent bound constants; empty when the bound does not apply."""
    if cfg.model_kind != LOGISTIC or cfg.l2 <= 0:
        return {}
    rng = substream(cfg.seed, "calibration")
    gammas, phis, deltas, smooth = [], [], [], []
    for m, model in enumerate(work.models):
        tr = work.train[m]
        opt = bnd.solve_optimum(model, tr.features, tr.labels, tol=1e-8)
        gammas.append(float(np.sum((work.theta0[m] - opt) ** 2)))
        phi, delta = bnd.estimate_divergence(model, [work.theta0[m], opt], work.shards[m],
                                             tr.features, tr.labels, cfg.batch_size, rng)
        phis.append(phi)
        deltas.append(delta)
        smooth.append(bnd.logistic_smoothness(model, tr.features))
    return {"Gamma": np.array(gammas), "phi": max(phis), "delta": max(deltas),
            "L": max(smooth), "lam": cfg.l2}


@dataclass
class RealizationOutput:
    records: list = field(default_factory=list)
    traces: list = field(default_factory=list)
    powers: list = field(default_factory=list)
    bounds: list = field(default_factory=list)


@dataclass
class RunOutput(RealizationOutput):
    def extend(self, part: RealizationOutput):
        self.records += part.records
        self.traces += part.traces
        self.powers += part.powers
        self.bounds += part.bounds


def _geometry(cfg: SimConfig, r):
    return sample_geometry(cfg.K, substream(cfg.seed, "geometry", r),
                           substream(cfg.seed, "shadowing", r),
                           d_range=(cfg.d_min_km, cfg.d_max_km), shadow_std_db=cfg.shadow_std_db,
                           distances=cfg.distances_km)


def _train_group(cfg, work, m, received, devices, r, t, eta):
    model = work.models[m - 1]
    tr = work.train[m - 1]
    out = {}
    for x0, k in zip(received, devices):
        idx = work.shards[m - 1][k]
        out[int(k)] = local_sgd(model, x0, tr.features[idx], tr.labels[idx], cfg.J,
                                cfg.batch_size, eta, substream(cfg.seed, "sgd", r, t, k))
    return out


def _evaluate(cfg, work, theta, best):
    accs = []
    for m in range(cfg.M):
        te = work.test[m]
        acc = test_accuracy(work.models[m], theta[m], te.features, te.labels)
        best[m] = max(best[m], acc)
        accs.append(acc)
    return accs


def _run_multimodel(cfg: SimConfig, work: Workload, r, ideal) -> RealizationOutput:
    scheme = "ideal" if ideal else "multimodel"
    out = RealizationOutput()
    geo = _geometry(cfg, r)
    sigma2_ul, sigma2_dl = cfg.uplink_noise(), cfg.downlink_noise()
    caps = np.full(cfg.K, work.D_max * cfg.power_per_element())
    theta = [t0.copy() for t0 in work.theta0]
    best = [-math.inf] * cfg.M
    uplink_sums = []
    max_norm2 = 0.0
    for n in range(cfg.frames):
        t_frame = time.perf_counter()
        eta = cfg.eta_at(n)
        ch = sample_channels(geo, cfg.N, n, substream(cfg.seed, "channel", r, n),
                             sigma2_ul=sigma2_ul, sigma2_dl=sigma2_dl)
        sch = partition_devices(cfg.K, cfg.M, substream(cfg.seed, "schedule", r, n), frame=n)
        state, obj = None, math.nan
        if not ideal or cfg.ideal_weights == "channel":
            try:
                res = bcd_solve(ch, sch, caps, work.D_max, tol=cfg.bcd_tol,
                                max_iter=cfg.bcd_max_iter, cascade=cfg.bcd_cascade)
            except MMOAAError as exc:
                raise RunError(f"{scheme} realization {r} frame {n}: {exc}") from exc
            state, obj = res.state, res.objective
            for it, (o3, o2) in enumerate(zip(res.trace, res.trace_p2)):
                out.traces.append((scheme, r, n, it, o3, o2))
        if ideal:
            uplink_sums.append(0.0)
        else:
            su2 = sigma2_ul * work.D_max / 2
            uplink_sums.append(bnd.uplink_error_sum(state, ch, sch, su2))

        rounds = range(n * cfg.M, min((n + 1) * cfg.M, cfg.T))
        for t in rounds:
            t_round = time.perf_counter()
            locals_, starts = {}, {}
            for i in range(1, cfg.M + 1):
                m = sch.model_of(i, t)
                own = sch.members(i)
                recv = downlink_broadcast(theta[m - 1], 0.0 if ideal else sigma2_dl,
                                          substream(cfg.seed, "downlink", r, t, i), own.size)
                starts.update({int(k): x for k, x in zip(own, recv)})
                locals_.update(_train_group(cfg, work, m, recv, own, r, t, eta))
            for k, v in locals_.items():
                max_norm2 = max(max_norm2, float(np.sum(v ** 2)))
            try:
                if ideal:
                    weights = None
                    if cfg.ideal_weights == "channel":
                        _, weights = aggregation_weights(locals_, state, ch, sch)
                    agg = ideal_aggregate(locals_, sch, t, work.dims, weights=weights)
                else:
                    offsets = place_models(sch, work.dims, work.D_max, t,
                                           substream(cfg.seed, "placement", r, t))
                    agg = uplink_aggregate(locals_, state, ch, sch, t, work.dims, offsets,
                                           substream(cfg.seed, "uplink", r, t))
                    for i in range(1, cfg.M + 1):
                        out.powers.append((scheme, r, t, i, sch.model_of(i, t),
                                           agg.signal_power[i - 1], agg.interference_power[i - 1],
                                           agg.noise_power[i - 1]))
            except MMOAAError as exc:
                raise RunError(f"{scheme} realization {r} frame {n} round {t}: {exc}") from exc
            for m, th in agg.global_models.items():
                theta[m - 1] = th
            accs = _evaluate(cfg, work, theta, best)
            elapsed = (time.perf_counter() - t_round) * 1e3 if cfg.record_timing else math.nan
            for m in range(1, cfg.M + 1):
                rec = MetricsRecord(scheme, r, n, t, m, accs[m - 1], best[m - 1], obj_p3=obj,
                                    elapsed_ms=elapsed)
                out.records.append(rec)
        log.debug("%s r=%d frame %d done in %.1f ms", scheme, r, n,
                  (time.perf_counter() - t_frame) * 1e3)

    if work.bound_base:
        _attach_bound(cfg, work, out, scheme, r, uplink_sums, max_norm2, ideal)
    return out


def _attach_bound(cfg, work, out, scheme, r, uplink_sums, max_norm2, ideal):
    """Fill ``h_term`` and ``gap_bound`` once the local-model radius is known."""
    base = work.bound_base
    consts = bnd.BoundConstants(
        L=base["L"], lam=base["lam"], r=1.5 * max_norm2, phi=base["phi"], delta=base["delta"],
        eta=[cfg.eta_at(n) for n in range(cfg.frames)], J=cfg.J, M=cfg.M, K=cfg.K,
        Gamma=base["Gamma"],
        sigma2_d_tilde=0.0 if ideal else cfg.downlink_noise() * work.D_max / 2,
        sigma2_u_tilde=0.0 if ideal else cfg.uplink_noise() * work.D_max / 2)
    H = 4 * consts.r * consts.M * consts.K * np.asarray(uplink_sums)
    gaps = {}
    for n in range(cfg.frames):
        for m in range(1, cfg.M + 1):
            gaps[n, m] = bnd.gap_bound(H, consts, n + 1, m)
            out.bounds.append((scheme, r, n, m, H[n], bnd.contraction(consts, n),
                               bnd.drift(consts, n), gaps[n, m]))
    for rec in out.records:
        rec.h_term = H[rec.frame]
        rec.gap_bound = gaps[rec.frame, rec.model]


def _run_seqnmodel(cfg: SimConfig, work: Workload, r) -> RealizationOutput:
    scheme = "seqnmodel"
    out = RealizationOutput()
    geo = _geometry(cfg, r)
    sigma2_ul, sigma2_dl = cfg.uplink_noise(), cfg.downlink_noise()
    theta = [t0.copy() for t0 in work.theta0]
    best = [-math.inf] * cfg.M
    everyone = np.arange(cfg.K)
    t = 0
    for m, n_rounds in enumerate(cfg.seqn_rounds(), start=1):
        D = work.dims[m - 1]
        caps = np.full(cfg.K, D * cfg.power_per_element())
        for _ in range(n_rounds):
            t_round = time.perf_counter()
            # every round is its own single-group frame with fresh channels
            ch = sample_channels(geo, cfg.N, t, substream(cfg.seed, "channel", r, t),
                                 sigma2_ul=sigma2_ul, sigma2_dl=sigma2_dl)
            sch = single_group(cfg.K, frame=t)
            state = snr_max_beamformer(ch, caps)
            obj = objective_p3(state, NormalizedChannels.from_channels(ch, D), sch)
            recv = downlink_broadcast(theta[m - 1], sigma2_dl,
                                      substream(cfg.seed, "downlink", r, t, 1), cfg.K)
            locals_ = _train_group(cfg, work, m, recv, everyone, r, t, cfg.eta_at(t // cfg.M))
            try:
                agg = uplink_aggregate(locals_, state, ch, sch, 0, [D], [0],
                                       substream(cfg.seed, "uplink", r, t))
            except MMOAAError as exc:
                raise RunError(f"{scheme} realization {r} round {t}: {exc}") from exc
            out.powers.append((scheme, r, t, 1, m, agg.signal_power[0],
                               agg.interference_power[0], agg.noise_power[0]))
            theta[m - 1] = agg.global_models[1]
            accs = _evaluate(cfg, work, theta, best)
            elapsed = (time.perf_counter() - t_round) * 1e3 if cfg.record_timing else math.nan
            for mm in range(1, cfg.M + 1):
                out.records.append(MetricsRecord(scheme, r, t, t, mm, accs[mm - 1], best[mm - 1],
                                                 obj_p3=obj, elapsed_ms=elapsed))
            t += 1
    return out


def run_realization(cfg: SimConfig, work: Workload, scheme, r) -> RealizationOutput:
    if scheme == "multimodel":
        return _run_multimodel(cfg, work, r, ideal=False)
    if scheme == "ideal":
        return _run_multimodel(cfg, work, r, ideal=True)
    if scheme == "seqnmodel":
        return _run_seqnmodel(cfg, work, r)
    raise ValueError(f"unknown scheme {scheme!r}")


def _realization_job(args):
    cfg, work, scheme, r = args
    return run_realization(cfg, work, scheme, r)


def run(cfg: SimConfig, scheme=None, work=None) -> RunOutput:
    """Run every realization of one scheme; output is ordered by realization."""
    scheme = scheme or cfg.scheme
    if scheme == "seqnmodel":
        cfg.seqn_rounds()  # fail fast on an indivisible budget
    work = build_workload(cfg) if work is None else work
    jobs = [(cfg, work, scheme, r) for r in range(cfg.realizations)]
    result = RunOutput()
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for part in pool.map(_realization_job, jobs):
                result.extend(part)
    else:
        for job in jobs:
            result.extend(_realization_job(job))
    return result


def run_multimodel(cfg: SimConfig, work=None) -> list:
    return run(cfg, "multimodel", work).records


def run_ideal(cfg: SimConfig, work=None) -> list:
    return run(cfg, "ideal", work).records


def run_seqnmodel(cfg: SimConfig, work=None) -> list:
    return run(cfg, "seqnmodel", work).records


# CSV ------------------------------------------------------------------------

def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for rec in records:
        w.writerow(rec.row())
    return buf.getvalue()


def rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


def _parse_float(s):
    return math.nan if s == "" else float(s)


def read_records(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        out = []
        for row in reader:
            out.append(MetricsRecord(row[0], int(row[1]), int(row[2]), int(row[3]), int(row[4]),
                                     *(_parse_float(x) for x in row[5:])))
    return out


# Summaries ------------------------------------------------------------------

@dataclass
class SummaryRow:
    scheme: str
    round: int
    model: int
    n: int
    mean: float
    ci_half_width: float
    single_realization: bool


def mean_ci90(values):
    """Mean and normal-approximation 90% half-width ``1.645 s / sqrt(n)``.

    ``s`` is the sample standard deviation; a single value has half-width 0.
    """
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("no values")
    if x.size == 1:
        return float(x[0]), 0.0
    return float(x.mean()), float(Z_90 * x.std(ddof=1) / math.sqrt(x.size))


def aggregate_metrics(records, key="best_accuracy") -> list:
    """Mean and 90% CI of ``key`` per (scheme, round, model) over realizations."""
    groups = {}
    for rec in records:
        groups.setdefault((rec.scheme, rec.round, rec.model), []).append(getattr(rec, key))
    rows = []
    for (scheme, t, m), vals in sorted(groups.items()):
        mean, half = mean_ci90(vals)
        rows.append(SummaryRow(scheme, t, m, len(vals), mean, half, len(vals) == 1))
    return rows


def final_mean_accuracy(records, key="best_accuracy") -> float:
    """Average over models and realizations of ``key`` at the last round."""
    last = max(rec.round for rec in records)
    vals = [getattr(rec, key) for rec in records if rec.round == last]
    return float(np.mean(vals))


def final_accuracy_by_model(records, key="best_accuracy") -> dict:
    last = max(rec.round for rec in records)
    out = {}
    for rec in records:
        if rec.round == last:
            out.setdefault(rec.model, []).append(getattr(rec, key))
    return {m: float(np.mean(v)) for m, v in sorted(out.items())}
