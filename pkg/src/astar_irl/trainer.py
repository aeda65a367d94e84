"""Cross-entropy cost learning through the planner, packaged as an estimator.

The loss of one demonstration step is ``-log pi(u* | x_t)`` with ``pi`` the
softmin of the planner's Q-values. Its subgradient factors into

    dL/dQ(u)      = 1{u = u*} - pi(u)
    dQ(u)/dc(x,v) = visitation of (x, v) on the path behind Q(u)
    dc/dh, dc/ds, dc/dl from the cost encoder
    dh/dpsi, dh/dh0 from the belief Jacobian

and is assembled without ever differentiating through the search itself.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .belief import BeliefState, SensorModelParams
from .cost import CostEncoderParams, cost_field, cost_grads_batch
from .gridworld import N_CONTROLS
from .planner import PlanResult, astar_backward, g_cap, log_policy, q_values, visitation_subgradient
from .validation import check_demos, check_int, check_positive, check_seed, check_unit_interval

logger = logging.getLogger(__name__)

NLL_CAP = -np.log(1e-30)
# minimum gap kept between the two cost-encoder weights
SL_GAP = 1e-3


@dataclass
class ThetaParams:
    sensor: SensorModelParams
    cost: CostEncoderParams

    def to_dict(self) -> dict:
        return {
            "psi": [float(v) for v in self.sensor.psi],
            "h0": float(self.sensor.h0),
            "epsilon": float(self.sensor.epsilon),
            "march_step": float(self.sensor.march_step),
            "s": float(self.cost.s),
            "l": float(self.cost.l),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ThetaParams":
        sensor = SensorModelParams(np.asarray(obj["psi"], float), float(obj["h0"]),
                                   float(obj["epsilon"]), float(obj.get("march_step", 0.3)))
        return cls(sensor, CostEncoderParams(float(obj["s"]), float(obj["l"])))


class NLLDiagnostics:
    """Counts how often the loss hit the zero-probability cap."""

    def __init__(self):
        self.capped = 0


def nll_loss(pi, u_star, diagnostics: NLLDiagnostics | None = None) -> float:
    p = float(np.asarray(pi, dtype=float)[int(u_star)])
    if p <= 0.0:
        if diagnostics is not None:
            diagnostics.capped += 1
        return float(NLL_CAP)
    return float(min(-np.log(p), NLL_CAP))


def policy_grad_wrt_q(pi, u_star) -> np.ndarray:
    """d log pi(u*) / dQ(u) = pi(u) - 1{u = u*} under the softmin policy.

    The loss ``-log pi(u*)`` has the opposite sign.
    """
    d = np.array(pi, dtype=float)
    d[int(u_star)] -= 1.0
    return d


@dataclass
class GradAccumulator:
    psi: np.ndarray
    h0: float = 0.0
    log_s: float = 0.0
    log_l: float = 0.0
    count: int = 0

    @classmethod
    def zeros(cls, K: int) -> "GradAccumulator":
        return cls(np.zeros(K))

    def add(self, other: "GradAccumulator") -> None:
        self.psi += other.psi
        self.h0 += other.h0
        self.log_s += other.log_s
        self.log_l += other.log_l
        self.count += other.count

    def zero(self) -> None:
        self.psi[:] = 0.0
        self.h0 = self.log_s = self.log_l = 0.0
        self.count = 0

    def vector(self) -> np.ndarray:
        return np.concatenate([self.psi, [self.h0, self.log_s, self.log_l]])


@dataclass
class StepResult:
    loss: float
    pi: np.ndarray
    q: np.ndarray
    plan: PlanResult
    grad: GradAccumulator | None


def step_gradient(belief: BeliefState, cost_params: CostEncoderParams, x_t, u_star, goal,
                  eps_h: float = 1.0, include_open: bool = True, need_grad: bool = True) -> StepResult:
    """Loss and parameter subgradient for one demonstration step.

    ``belief`` must already contain the scan taken at ``x_t``.
    """
    shape = belief.shape
    c = cost_field(belief.h, shape, cost_params)
    plan = astar_backward(c, shape, x_t, goal, eps_h)
    q = q_values(plan, c, x_t, g_cap(cost_params, shape))
    if np.isnan(q).any():  # corrupt parameters, not an unreachable goal
        pi = np.full(N_CONTROLS, np.nan)
        loss = float("nan")
    elif np.all(np.isfinite(q)):
        logp = log_policy(q)
        pi = np.exp(logp)
        loss = float(-logp[int(u_star)])
    else:  # unreachable: uniform policy
        pi = np.full(N_CONTROLS, 1.0 / N_CONTROLS)
        loss = float(np.log(N_CONTROLS))
    if not need_grad or not np.isfinite(loss):
        return StepResult(loss, pi, q, plan, None)

    d = -policy_grad_wrt_q(pi, u_star)  # dL/dQ
    cells, ctrls, w = [], [], []
    for u in range(N_CONTROLS):
        if d[u] == 0.0:
            continue
        pairs = visitation_subgradient(plan, x_t, u, include_open)
        if not pairs:
            continue
        arr = np.asarray(pairs, dtype=np.int64)
        cells.append(arr[:, 0])
        ctrls.append(arr[:, 1])
        w.append(np.full(len(arr), d[u]))
    grad = GradAccumulator.zeros(belief.K)
    grad.count = 1
    if not cells:
        return StepResult(loss, pi, q, plan, grad)
    cells = np.concatenate(cells)
    ctrls = np.concatenate(ctrls)
    w = np.concatenate(w)
    qf, qo, dci, dcj, succ = cost_grads_batch(belief.h, shape, cells, ctrls, cost_params)
    n = shape[0] * shape[1]
    valid = succ >= 0
    w_h = np.bincount(cells, weights=w * dci, minlength=n)
    w_h += np.bincount(succ[valid], weights=(w * dcj)[valid], minlength=n)
    grad.psi = belief.dpsi.T @ w_h
    grad.h0 = float(belief.dh0 @ w_h)
    grad.log_s = float(cost_params.s * np.dot(w, qf))
    grad.log_l = float(cost_params.l * np.dot(w, qo))
    return StepResult(loss, pi, q, plan, grad)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(x: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> np.ndarray:
    """One bias-corrected Adam update; mutates ``state`` and returns the new point."""
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1**state.t)
    v_hat = state.v / (1.0 - beta2**state.t)
    return x - lr * m_hat / (np.sqrt(v_hat) + eps)


def project_cost(log_s: float, log_l: float) -> tuple[float, float]:
    """Enforce ``l >= s + SL_GAP`` by raising ``l``."""
    s, l = np.exp(log_s), np.exp(log_l)
    if l < s + SL_GAP:
        log_l = float(np.log(s + SL_GAP))
    return float(log_s), float(log_l)


class CostLearner(BaseEstimator):
    """Learns sensor-model and cost-encoder weights from expert demonstrations.

    Parameters
    ----------
    epsilon : float
        Influence band of the inverse sensor model, in cells. Not trained.
    march_step : float
        Ray-marching step used to associate cells with beams.
    shared_psi : bool
        Tie all beam weights to one scalar.
    psi_init : float
        Initial beam weight.
    h0 : float
        Prior log-odds.
    train_h0 : bool
        Whether ``h0`` is updated.
    s, l : float
        Initial free and collision traversal costs.
    learn_cost : bool
        ``False`` freezes ``s`` and ``l`` (hard-coded encoder).
    learning_rate, beta1, beta2 : float
        Adam settings.
    epochs : int
        Passes over the demonstrations.
    batch_size : int
        Demonstrations per optimizer step; 0 means the whole epoch.
    eps_h : float
        Heuristic weight of the planner.
    include_open : bool
        Let gradients flow through OPEN successors as well as CLOSED ones.
    random_state : int or None
        Seed of the epoch shuffling.
    warm_start : bool
        Continue from the current fitted state on the next ``fit``.

    Attributes
    ----------
    psi_ : ndarray
    h0_, s_, l_ : float
    history_ : list of dict
        Per-epoch ``train_loss``, ``val_loss``, ``val_acc``.
    adam_ : AdamState
    n_beams_ : int
    max_range_ : float
    shape_ : tuple
    """

    def __init__(self, epsilon=0.5, march_step=0.3, shared_psi=True, psi_init=1.0, h0=0.0,
                 train_h0=False, s=1.0, l=100.0, learn_cost=True, learning_rate=1e-2,
                 beta1=0.9, beta2=0.999, epochs=30, batch_size=1, eps_h=1.0,
                 include_open=True, random_state=0, warm_start=False):
        self.epsilon = epsilon
        self.march_step = march_step
        self.shared_psi = shared_psi
        self.psi_init = psi_init
        self.h0 = h0
        self.train_h0 = train_h0
        self.s = s
        self.l = l
        self.learn_cost = learn_cost
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epochs = epochs
        self.batch_size = batch_size
        self.eps_h = eps_h
        self.include_open = include_open
        self.random_state = random_state
        self.warm_start = warm_start

    # -- parameter plumbing -------------------------------------------------

    def _validate_params(self):
        check_positive(self.epsilon, "epsilon")
        check_positive(self.march_step, "march_step")
        check_positive(self.learning_rate, "learning_rate")
        check_unit_interval(self.beta1, "beta1")
        check_unit_interval(self.beta2, "beta2")
        check_int(self.epochs, "epochs", 0)
        check_int(self.batch_size, "batch_size", 0)
        if self.eps_h < 1.0:
            raise ValueError("eps_h must be >= 1")
        CostEncoderParams(self.s, self.l)

    def _check_fitted(self):
        if not hasattr(self, "psi_"):
            raise NotFittedError("CostLearner is not fitted yet; call fit first")

    def _vector(self) -> np.ndarray:
        return np.concatenate([self.psi_, [self.h0_, np.log(self.s_), np.log(self.l_)]])

    def _set_vector(self, x: np.ndarray) -> None:
        K = len(self.psi_)
        self.psi_ = x[:K].copy()
        self.h0_ = float(x[K])
        if self.learn_cost:  # frozen weights skip the log/exp round trip
            log_s, log_l = project_cost(float(x[K + 1]), float(x[K + 2]))
            self.s_, self.l_ = float(np.exp(log_s)), float(np.exp(log_l))

    def _mask(self) -> np.ndarray:
        K = len(self.psi_)
        m = np.ones(K + 3, dtype=bool)
        m[K] = bool(self.train_h0)
        m[K + 1:] = bool(self.learn_cost)
        return m

    @property
    def theta_(self) -> ThetaParams:
        self._check_fitted()
        return ThetaParams(self.sensor_params_(), CostEncoderParams(self.s_, self.l_))

    def sensor_params_(self) -> SensorModelParams:
        return SensorModelParams(self.psi_, self.h0_, self.epsilon, self.march_step)

    def _init_state(self, demos):
        d0 = demos[0]
        self.n_beams_ = len(d0.scans[0])
        self.max_range_ = float(d0.max_range)
        self.shape_ = (d0.height, d0.width)
        K = 1 if self.shared_psi else self.n_beams_
        self.psi_ = np.full(K, float(self.psi_init))
        self.h0_ = float(self.h0)
        self.s_, self.l_ = float(self.s), float(self.l)
        self.adam_ = AdamState.zeros(K + 3)
        self.history_ = []
        self.n_updates_ = 0

    def _epoch_rng(self, epoch: int) -> np.random.Generator:
        # keyed by the absolute epoch index so resumed runs shuffle identically
        if self.random_state is None:
            return check_seed(None)
        return np.random.default_rng(np.random.SeedSequence(int(self.random_state), spawn_key=(epoch,)))

    # -- per-demonstration passes --------------------------------------------

    def _demo_pass(self, demo, need_grad: bool):
        """Teacher-forced pass over one demonstration."""
        belief = BeliefState(self.shape_, self.sensor_params_(), self.max_range_)
        cp = CostEncoderParams(self.s_, self.l_)
        total = GradAccumulator.zeros(len(self.psi_)) if need_grad else None
        losses, pis = [], []
        for t, u in enumerate(demo.controls):
            belief.observe(demo.states[t], demo.scans[t])
            r = step_gradient(belief, cp, demo.states[t], u, demo.goal, self.eps_h,
                              self.include_open, need_grad)
            if not np.isfinite(r.loss):
                raise FloatingPointError(
                    f"non-finite loss at map_id={demo.map_id} step={t} state={tuple(demo.states[t])} "
                    f"goal={tuple(demo.goal)} q={r.q.tolist()} theta={self._vector().tolist()}")
            losses.append(r.loss)
            pis.append(r.pi)
            if need_grad:
                total.add(r.grad)
        return losses, pis, total

    def _check_compatible(self, demos):
        d0 = demos[0]
        if (d0.height, d0.width) != self.shape_ or len(d0.scans[0]) != self.n_beams_:
            raise ValueError("demonstrations do not match the fitted grid shape or beam count")

    # -- estimator API -------------------------------------------------------

    def fit(self, X, y=None, X_val=None):
        """Train on demonstrations ``X``; keeps the best-validation parameters.

        Parameters
        ----------
        X : list of Demonstration
        y : ignored
        X_val : list of Demonstration, optional
            Scored after every epoch. Without it the final parameters are kept.
        """
        self._validate_params()
        demos = check_demos(X)
        val = check_demos(X_val, "X_val") if X_val is not None else None
        if not (self.warm_start and hasattr(self, "psi_")):
            self._init_state(demos)
        else:
            self._check_compatible(demos)
        mask = self._mask()
        n = len(demos)
        bs = n if self.batch_size == 0 else self.batch_size
        best = (np.inf, self._vector())
        for _ in range(self.epochs):
            order = self._epoch_rng(len(self.history_)).permutation(n)
            loss_sum, n_steps = 0.0, 0
            for start in range(0, n, bs):
                acc = GradAccumulator.zeros(len(self.psi_))
                for i in order[start:start + bs]:
                    losses, _, g = self._demo_pass(demos[i], need_grad=True)
                    loss_sum += sum(losses)
                    n_steps += len(losses)
                    acc.add(g)
                if acc.count == 0:
                    continue
                grad = np.where(mask, acc.vector() / acc.count, 0.0)
                x = adam_step(self._vector(), grad, self.adam_, self.learning_rate, self.beta1, self.beta2)
                self._set_vector(np.where(mask, x, self._vector()))
                self.n_updates_ += 1
            rec = {"epoch": len(self.history_) + 1, "train_loss": loss_sum / max(n_steps, 1)}
            if val is not None:
                rec["val_loss"] = self.loss(val)
                rec["val_acc"] = self.score(val)
                if rec["val_loss"] < best[0]:
                    best = (rec["val_loss"], self._vector())
            else:
                rec["val_loss"] = rec["val_acc"] = float("nan")
            self.history_.append(rec)
            logger.info("epoch %d train_loss=%.4f val_loss=%.4f val_acc=%.4f", rec["epoch"],
                        rec["train_loss"], rec["val_loss"], rec["val_acc"])
        if val is not None and np.isfinite(best[0]):
            self._set_vector(best[1])
        return self

    def predict_proba(self, X) -> np.ndarray:
        """Policy over the 8 controls at every demonstration step, stacked in order."""
        self._check_fitted()
        demos = check_demos(X)
        self._check_compatible(demos)
        out = []
        for d in demos:
            out.extend(self._demo_pass(d, need_grad=False)[1])
        return np.asarray(out).reshape(-1, N_CONTROLS)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def score(self, X, y=None) -> float:
        """Next-control accuracy under teacher forcing."""
        demos = check_demos(X)
        truth = np.concatenate([[int(u) for u in d.controls] for d in demos])
        return float(np.mean(self.predict(demos) == truth))

    def loss(self, X) -> float:
        """Mean per-step negative log-likelihood."""
        self._check_fitted()
        demos = check_demos(X)
        self._check_compatible(demos)
        losses = []
        for d in demos:
            losses.extend(self._demo_pass(d, need_grad=False)[0])
        return float(np.mean(losses))

    def gradient(self, X) -> tuple[float, np.ndarray]:
        """Summed loss and summed gradient over every step of ``X``.

        The gradient is ordered ``[psi..., h0, log s, log l]`` and ignores
        the trainability mask.
        """
        self._check_fitted()
        demos = check_demos(X)
        acc = GradAccumulator.zeros(len(self.psi_))
        total = 0.0
        for d in demos:
            losses, _, g = self._demo_pass(d, need_grad=True)
            total += sum(losses)
            acc.add(g)
        return total, acc.vector()

    # -- checkpointing -------------------------------------------------------

    def to_checkpoint(self, dataset_hash: str = "", config: dict | None = None) -> dict:
        self._check_fitted()
        return {
            "theta": self.theta_.to_dict(),
            "adam": {"m": self.adam_.m.tolist(), "v": self.adam_.v.tolist(), "t": self.adam_.t},
            "n_updates": self.n_updates_,
            "epochs_done": len(self.history_),
            "history": self.history_,
            "shape": list(self.shape_),
            "n_beams": self.n_beams_,
            "max_range": self.max_range_,
            "params": self.get_params(),
            "config": config or {},
            "dataset_hash": dataset_hash,
        }

    @classmethod
    def from_checkpoint(cls, obj: dict) -> "CostLearner":
        est = cls(**obj["params"])
        th = ThetaParams.from_dict(obj["theta"])
        est.psi_ = th.sensor.psi.copy()
        est.h0_ = th.sensor.h0
        est.s_, est.l_ = th.cost.s, th.cost.l
        est.adam_ = AdamState(np.asarray(obj["adam"]["m"], float), np.asarray(obj["adam"]["v"], float),
                              int(obj["adam"]["t"]))
        est.n_updates_ = int(obj["n_updates"])
        est.history_ = copy.deepcopy(obj.get("history", []))
        est.shape_ = tuple(obj["shape"])
        est.n_beams_ = int(obj["n_beams"])
        est.max_range_ = float(obj["max_range"])
        return est


def train(demos, val=None, **params) -> CostLearner:
    """Functional wrapper: ``CostLearner(**params).fit(demos, X_val=val)``."""
    return CostLearner(**params).fit(demos, X_val=val)


def write_metrics_csv(history: list[dict], fh) -> None:
    fh.write("epoch,train_loss,val_loss,val_acc\n")
    for r in history:
        fh.write(f"{r['epoch']},{r['train_loss']!r},{r['val_loss']!r},{r['val_acc']!r}\n")
