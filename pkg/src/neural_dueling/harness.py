"""Experiment orchestration: the online loop, regret accounting and outputs.

Random streams
--------------
Repetition ``i`` of an experiment with master seed ``s`` derives all of its
randomness from ``numpy.random.SeedSequence([s, i])``, which is spawned into
five independent PCG64 streams: reward direction, contexts, feedback, network
initialisation and policy sampling.  Every policy therefore faces the same
reward function and the same context sequence for a given ``(s, i)``, and
adding diagnostics never perturbs a trajectory.
"""

import csv
import dataclasses
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from ._validation import check_choice, check_positive
from .environment import CONTEXT_MODES, REWARD_KINDS, LinkFunction, SyntheticReward, make_round_contexts
from .exceptions import ConfigurationError, InputError, NeuralDuelingError, NumericalDegeneracyError, NumericalError
from .models import LinearRewardModel, NeuralRewardModel
from .network import NetworkShape
from .policies import (
    PolicyKind,
    select_arm_ts,
    select_arm_ucb,
    select_duel_ts,
    select_duel_ucb,
    select_random,
)
from .uncertainty import ConfidenceConfig, pairwise_differences, precision_init, theoretical_nu

logger = logging.getLogger(__name__)

OUTPUT_ENV = "NEURAL_DUELING_OUTPUT"
TRACE_HEADER = ["rep", "round", "avg_regret_cum", "weak_regret_cum"]
DEFAULT_SCALES = {"square": 10.0, "cosine": 3.0, "cosine-outer": 3.0, "linear": 1.0}
NU_GRID = (10.0, 5.0, 1.0, 0.1, 0.01, 0.001, 0.0)


class ExperimentError(NeuralDuelingError):
    """A repetition failed; ``repetition`` and ``round`` locate the failure."""

    def __init__(self, message, repetition=None, round=None):
        self.repetition = repetition
        self.round = round
        super().__init__(message)


@dataclass
class ExperimentConfig:
    policy: str = "ndb-ucb"
    function: str = "square"
    scale: float = None
    T: int = 2000
    K: int = 5
    d: int = 5
    reps: int = 20
    seed: int = 0
    lambda_: float = 1.0
    kappa_mu: float = 1.0
    nu_mode: str = "fixed"
    nu: float = 1.0
    delta: float = 0.05
    B: float = 1.0
    width: int = 50
    depth: int = 3
    learning_rate: float = 1e-3
    grad_steps: int = 50
    retrain_every: int = 20
    feature_anchor: str = "theta_t"
    context_mode: str = "raw"
    regularizer: str = "practical"
    diagnostics: bool = False
    jobs: int = 1
    output_path: str = None

    def __post_init__(self):
        self.policy = PolicyKind.parse(self.policy).value
        check_choice(self.function, "function", REWARD_KINDS)
        if self.scale is None:
            self.scale = DEFAULT_SCALES[self.function]
        check_positive(self.scale, "scale")
        check_positive(self.T, "T", integer=True)
        check_positive(self.d, "d", integer=True)
        check_positive(self.reps, "reps", integer=True)
        min_k = 2 if self.kind.is_duel else 1
        if not isinstance(self.K, int) or self.K < min_k:
            raise ConfigurationError(f"K must be an integer >= {min_k}, got {self.K!r}")
        if self.context_mode == "raw" and self.K < 2:
            raise ConfigurationError("context generation needs K >= 2")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigurationError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        check_positive(self.retrain_every, "retrain_every", integer=True)
        check_positive(self.jobs, "jobs", integer=True)
        check_choice(self.feature_anchor, "feature_anchor", ("theta_t", "theta_0"))
        check_choice(self.context_mode, "context_mode", CONTEXT_MODES)
        check_choice(self.regularizer, "regularizer", ("practical", "theoretical"))
        # delegate the remaining range checks
        self.confidence_config()
        self.model()._training_config()
        if not self.kind.is_random and not self.kind.is_linear:
            if self.depth < 2:
                raise ConfigurationError(f"depth must be at least 2, got {self.depth}")
            NetworkShape(self.depth, self.width, self.input_dim)

    @property
    def kind(self):
        return PolicyKind.parse(self.policy)

    @property
    def input_dim(self):
        return 2 * self.d if self.context_mode == "theory" else self.d

    def confidence_config(self):
        return ConfidenceConfig(self.nu_mode, self.nu, self.B, self.delta, self.lambda_, self.kappa_mu)

    def model(self, random_state=None):
        loss = "dueling" if self.kind.is_duel else "binary"
        common = dict(
            reg_lambda=self.lambda_,
            learning_rate=self.learning_rate,
            grad_steps=self.grad_steps,
            regularizer=self.regularizer,
            loss=loss,
            random_state=random_state,
        )
        if self.kind.is_linear:
            return LinearRewardModel(**common)
        return NeuralRewardModel(width=self.width, depth=self.depth, **common)

    @property
    def feature_scale(self):
        if self.kind.is_linear or self.regularizer == "practical":
            return 1.0
        return 1.0 / np.sqrt(self.width)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        data = dict(data)
        if "lambda" in data:
            data["lambda_"] = data.pop("lambda")
        unknown = set(data) - names
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class RegretTrace:
    """Cumulative regrets of one repetition, indexed by round ``1..T``."""

    rep: int
    seed: int
    avg_cum: np.ndarray
    weak_cum: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.avg_cum)

    def check(self):
        """Both curves non-decreasing and weak never above average."""
        for name, arr in (("average", self.avg_cum), ("weak", self.weak_cum)):
            if np.any(np.diff(arr) < 0) or (len(arr) and arr[0] < 0):
                raise NumericalError(f"repetition {self.rep}: {name} cumulative regret decreases")
        if np.any(self.weak_cum > self.avg_cum):
            raise NumericalError(f"repetition {self.rep}: weak regret exceeds average regret")


@dataclass
class RoundRecord:
    t: int
    first: int
    second: int
    y: int
    regret_avg: float
    regret_weak: float


def repetition_streams(seed, rep):
    """The five named generators of repetition ``rep`` (see module docstring)."""
    children = np.random.SeedSequence([seed, rep]).spawn(5)
    names = ("theta", "contexts", "feedback", "init", "policy")
    return {n: np.random.Generator(np.random.PCG64(c)) for n, c in zip(names, children)}


class DuelingRun:
    """All mutable state of one repetition; :meth:`run_round` advances it.

    ``callbacks`` are invoked after arm scoring with
    ``(run, t, X, h, G, nu)`` and must not draw from the run's generators.
    """

    def __init__(self, cfg, rep=0, callbacks=()):
        self.cfg = cfg
        self.rep = rep
        self.kind = cfg.kind
        self.duel = self.kind.is_duel
        self.callbacks = list(callbacks)
        self.rngs = repetition_streams(cfg.seed, rep)
        self.link = LinkFunction(kappa_mu=cfg.kappa_mu)
        self.reward = SyntheticReward.sample(cfg.function, cfg.scale, cfg.input_dim, self.rngs["theta"])
        self.conf = cfg.confidence_config()
        d = cfg.input_dim
        self.hist_X = np.zeros((cfg.T, 2, d)) if self.duel else np.zeros((cfg.T, d))
        self.hist_y = np.zeros(cfg.T)
        self.n_hist = 0
        self.model = None
        self.precision = None
        self.d_tilde = 0.0
        self._deff = None
        self._deff_pending = []
        self.diagnostics = {"effective_dimension": [], "log_det": [], "train_loss": []}
        if not self.kind.is_random:
            self.model = cfg.model(random_state=self.rngs["init"]).initialize(d)
            self.p = self.model.n_params_
            self.precision = precision_init(
                self.p, cfg.lambda_, cfg.kappa_mu, cfg.feature_scale, capacity=min(cfg.T, 256)
            )
            if cfg.diagnostics or cfg.nu_mode == "theoretical":
                self._deff = np.zeros((self.p, self.p))

    @property
    def uses_uncertainty(self):
        return self.model is not None

    def _history(self):
        return self.hist_X[: self.n_hist], self.hist_y[: self.n_hist]

    def _features(self, X):
        anchor = "initial" if self.cfg.feature_anchor == "theta_0" else "current"
        return self.model.transform(X, anchor=anchor)

    def _rebuild_precision(self):
        X, _ = self._history()
        if self.duel:
            G = self._features(X.reshape(-1, X.shape[-1]))
            U = (G[0::2] - G[1::2]) * self.cfg.feature_scale
        else:
            U = self._features(X) * self.cfg.feature_scale
        self.precision.rebuild(U)

    def _retrain(self):
        X, y = self._history()
        self.model.partial_fit(X, y)
        self.diagnostics["train_loss"].append(float(self.model.loss_))
        if self.cfg.feature_anchor == "theta_t" and self.n_hist:
            self._rebuild_precision()

    def _nu(self):
        if self.conf.nu_mode == "fixed":
            return self.conf.nu
        return theoretical_nu(self.conf, self.d_tilde)

    def _track_effective_dimension(self, G):
        U = (pairwise_differences(G) if self.duel else G) * self.cfg.feature_scale
        self._deff_pending.append(U)

    def _effective_dimension(self):
        if self._deff_pending:
            # one batched product instead of a full p x p pass per round
            U = np.concatenate(self._deff_pending)
            self._deff += U.T @ U
            self._deff_pending = []
        ridge = self.cfg.lambda_ / self.cfg.kappa_mu
        M = self._deff / ridge
        M[np.diag_indices(self.p)] += 1.0
        try:
            L = linalg.cholesky(M, lower=True, overwrite_a=True, check_finite=False)
        except linalg.LinAlgError as exc:
            raise NumericalError(f"effective dimension factorisation failed: {exc}") from exc
        return float(2.0 * np.sum(np.log(np.diag(L))))

    def _select(self, h, G, nu):
        kind, conf, rng = self.kind, self.conf, self.rngs["policy"]
        strategy = kind.strategy
        if self.duel:
            if strategy == "ucb":
                c = select_duel_ucb(h, self.precision, G, conf, nu=nu)
            else:
                c = select_duel_ts(h, self.precision, G, conf, rng, nu=nu)
            return c.first, c.second
        if strategy == "ucb":
            a = select_arm_ucb(h, self.precision, G, conf, nu=nu)
        else:
            a = select_arm_ts(h, self.precision, G, conf, rng, nu=nu)
        return a, a

    def run_round(self, t):
        """Train (on schedule), select, observe, update, and score round ``t``."""
        cfg = self.cfg
        contexts = make_round_contexts(self.rngs["contexts"], cfg.K, cfg.d, cfg.context_mode, t)
        X = contexts.features
        if self.kind.is_random:
            choice = select_random(cfg.K, self.rngs["policy"], duel=self.duel)
            first, second = (choice.first, choice.second) if self.duel else (choice, choice)
        else:
            if (t - 1) % cfg.retrain_every == 0:
                self._retrain()
                if self._deff is not None and cfg.nu_mode == "theoretical":
                    self.d_tilde = self._effective_dimension()
            h = self.model.predict(X)
            G = self._features(X)
            nu = self._nu()
            for cb in self.callbacks:
                cb(self, t, X, h, G, nu)
            try:
                first, second = self._select(h, G, nu)
            except NumericalDegeneracyError:
                logger.warning("round %d: degenerate quadratic form, rebuilding precision", t)
                self.precision.rebuild()
                first, second = self._select(h, G, nu)
            if self._deff is not None:
                self._track_effective_dimension(G)

        rewards = self.reward(X)
        f_star = float(np.max(rewards))
        fb = self.rngs["feedback"]
        if self.duel:
            p = self.link.value(rewards[first] - rewards[second])
            y = int(fb.random() < p)
            if first != second:
                self.hist_X[self.n_hist, 0] = X[first]
                self.hist_X[self.n_hist, 1] = X[second]
                self.hist_y[self.n_hist] = y
                self.n_hist += 1
            if self.uses_uncertainty:
                self.precision.update((G[first] - G[second]) * cfg.feature_scale)
            r_avg = f_star - 0.5 * (rewards[first] + rewards[second])
            r_weak = f_star - max(rewards[first], rewards[second])
        else:
            y = int(fb.random() < self.link.value(rewards[first]))
            self.hist_X[self.n_hist] = X[first]
            self.hist_y[self.n_hist] = y
            self.n_hist += 1
            if self.uses_uncertainty:
                self.precision.update(G[first] * cfg.feature_scale)
            # binary feedback regret is measured on the link scale
            r_avg = r_weak = float(self.link.value(f_star) - self.link.value(rewards[first]))
        return RoundRecord(t, first, second, y, float(r_avg), float(r_weak))

    def run(self):
        cfg = self.cfg
        r_avg = np.zeros(cfg.T)
        r_weak = np.zeros(cfg.T)
        checkpoints = set(np.unique(np.linspace(1, cfg.T, min(cfg.T, 20)).astype(int)).tolist())
        for t in range(1, cfg.T + 1):
            try:
                rec = self.run_round(t)
            except NeuralDuelingError as exc:
                raise ExperimentError(
                    f"repetition {self.rep}, round {t}: {exc}", repetition=self.rep, round=t
                ) from exc
            r_avg[t - 1] = rec.regret_avg
            r_weak[t - 1] = rec.regret_weak
            if cfg.diagnostics and self.uses_uncertainty and t in checkpoints:
                self.diagnostics["effective_dimension"].append([t, self._effective_dimension()])
                self.diagnostics["log_det"].append([t, self.precision.log_det_ratio()])
        trace = RegretTrace(self.rep, cfg.seed, np.cumsum(r_avg), np.cumsum(r_weak))
        if cfg.diagnostics:
            trace.diagnostics = self.diagnostics
        elif self.diagnostics["train_loss"]:
            trace.diagnostics = {"final_train_loss": self.diagnostics["train_loss"][-1]}
        trace.check()
        return trace


def run_repetition(cfg, rep):
    return DuelingRun(cfg, rep).run()


def _run_repetition_args(args):
    return run_repetition(*args)


def run_experiment(cfg):
    """Run ``cfg.reps`` independent repetitions and return their traces."""
    jobs = [(cfg, rep) for rep in range(cfg.reps)]
    if cfg.jobs > 1 and cfg.reps > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            return list(pool.map(_run_repetition_args, jobs))
    return [run_repetition(*job) for job in jobs]


@dataclass
class Summary:
    """Per-round mean and 95% normal-approximation half-width across repetitions."""

    reps: int
    mean_avg: np.ndarray
    half_avg: np.ndarray
    mean_weak: np.ndarray
    half_weak: np.ndarray

    @property
    def final_avg(self):
        return float(self.mean_avg[-1])

    @property
    def final_weak(self):
        return float(self.mean_weak[-1])


def _mean_half_width(M):
    n = M.shape[0]
    mean = M.mean(axis=0)
    if n == 1:
        return mean, np.zeros_like(mean)
    sd = M.std(axis=0, ddof=1)
    return mean, 1.96 * sd / np.sqrt(n)


def aggregate(traces):
    traces = list(traces)
    if not traces:
        raise InputError("cannot aggregate an empty list of traces")
    lengths = {len(t) for t in traces}
    if len(lengths) != 1:
        raise InputError(f"traces have different lengths: {sorted(lengths)}")
    mean_avg, half_avg = _mean_half_width(np.stack([t.avg_cum for t in traces]))
    mean_weak, half_weak = _mean_half_width(np.stack([t.weak_cum for t in traces]))
    return Summary(len(traces), mean_avg, half_avg, mean_weak, half_weak)


def default_output_dir():
    return Path(os.environ.get(OUTPUT_ENV, "runs"))


def read_trace_csv(path):
    """Parse ``trace.csv`` back into :class:`RegretTrace` objects."""
    rows = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != TRACE_HEADER:
            raise InputError(f"{path}: unexpected header {header}")
        for rep, rnd, avg, weak in reader:
            rows.setdefault(int(rep), []).append((int(rnd), float(avg), float(weak)))
    traces = []
    for rep in sorted(rows):
        data = sorted(rows[rep])
        traces.append(
            RegretTrace(rep, 0, np.array([r[1] for r in data]), np.array([r[2] for r in data]))
        )
    return traces


def write_outputs(traces, summary, cfg, path, plot=False):
    """Write ``trace.csv``, ``summary.json`` and optionally ``curves.svg`` into ``path``."""
    traces = list(traces)
    if not traces:
        raise InputError("refusing to write outputs for an empty trace list")
    for tr in traces:
        tr.check()
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "trace.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TRACE_HEADER)
            for tr in traces:
                for t in range(len(tr)):
                    writer.writerow([tr.rep, t + 1, repr(float(tr.avg_cum[t])), repr(float(tr.weak_cum[t]))])
        payload = {
            "config": cfg.to_dict(),
            "reps": summary.reps,
            "average": {"mean": summary.mean_avg.tolist(), "half_width": summary.half_avg.tolist()},
            "weak": {"mean": summary.mean_weak.tolist(), "half_width": summary.half_weak.tolist()},
            "final": {"average": summary.final_avg, "weak": summary.final_weak},
        }
        diagnostics = {str(tr.rep): tr.diagnostics for tr in traces if tr.diagnostics}
        if diagnostics:
            payload["diagnostics"] = diagnostics
        with open(out / "summary.json", "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
            fh.write("\n")
        if plot:
            plot_curves(summary, out / "curves.svg", title=f"{cfg.policy} / {cfg.function}")
    except OSError as exc:
        raise OSError(f"could not write outputs to {out}: {exc}") from exc
    return out


def plot_curves(summary, path, title=None):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rounds = np.arange(1, len(summary.mean_avg) + 1)
    # a fixed salt and no date keep the file byte-stable between runs
    plt.rcParams["svg.hashsalt"] = "neural-dueling"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for mean, half, label in (
        (summary.mean_avg, summary.half_avg, "average"),
        (summary.mean_weak, summary.half_weak, "weak"),
    ):
        ax.plot(rounds, mean, label=label)
        ax.fill_between(rounds, mean - half, mean + half, alpha=0.25)
    ax.set_xlabel("round")
    ax.set_ylabel("cumulative regret")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def coverage_diagnostic(cfg):
    """Fraction of (round, arm pair) events outside the pairwise confidence band.

    An event violates the band when
    ``|(f(x) - f(x')) - (h(x) - h(x'))| > nu * sigma(x, x')``, with ``h`` the
    network used for selection in that round and ``sigma`` computed from the
    precision state before the round's update.
    """
    counts = {"events": 0, "violations": 0}

    def observe(run, t, X, h, G, nu):
        f = run.reward(X)
        i, j = np.triu_indices(X.shape[0], k=1)
        err = np.abs((f[i] - f[j]) - (h[i] - h[j]))
        U = (G[i] - G[j]) * run.cfg.feature_scale
        sigma = np.sqrt(run.precision.ridge * run.precision.quad_form(U))
        counts["events"] += len(i)
        counts["violations"] += int(np.sum(err > nu * sigma))

    for rep in range(cfg.reps):
        DuelingRun(cfg, rep, callbacks=[observe]).run()
    return counts["violations"] / max(counts["events"], 1)
