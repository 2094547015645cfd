"""Round-synchronous decentralized training.

Every round publishes an immutable snapshot of all participants' model and
tracking vectors; each client then steps from that snapshot and its own
state only. Benign clients follow the gradient purification rule (recording
variables plus a cumulative-gamma compensator), plain gradient tracking or
plain decentralized SGD; malicious clients aggregate honestly with their
initial weights and publish a poisoned tracking variable.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np

from . import metrics as M
from .attacks import DATA_ATTACKS, AttackSpec, craft_lie_deviation, malicious_tracking_variable
from .data import Dataset
from .detection import DetectionConfig, WeightRow, adjust_stacked, apply_latch, cut
from .errors import ConfigurationError, ProtocolError
from .model import Batch, ModelSpec, eval_loss_grad
from .topology import Topology

RULES = ("gpd", "dsgt", "dsgd")
BENIGN = "benign"
MALICIOUS = "malicious"


@dataclass(frozen=True)
class Hooks:
    """Fault injection for the self-check; never set in normal runs."""

    compensator_scale: float = 1.0
    latch_renormalize: bool = True


@dataclass(frozen=True)
class EngineConfig:
    rule: str = "gpd"
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    lam: float = 0.01
    rounds: int = 50
    batch_size: int | None = None  # None: full batch
    seed: int = 0
    benign_only: bool = False
    laplace_scale: float | None = None
    init_scale: float = 0.01
    hooks: Hooks = field(default_factory=Hooks)

    def __post_init__(self):
        if self.rule not in RULES:
            raise ConfigurationError(f"unknown rule {self.rule!r}; expected one of {RULES}", "engine.rule")
        if not self.lam > 0:
            raise ConfigurationError("lambda must be positive", "engine.lambda")
        if self.rounds < 1:
            raise ConfigurationError("rounds must be >= 1", "engine.rounds")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1", "engine.batch_size")
        if self.laplace_scale is not None and self.laplace_scale < 0:
            raise ConfigurationError("laplace scale must be >= 0", "noise.laplace_scale")


@dataclass(frozen=True)
class Objective:
    """A client's local loss: a model plus (for classifiers) its shard.

    ``attack_data`` is the poisoned copy a malicious client trains its attack
    gradient on.
    """

    model: ModelSpec
    data: Dataset | None = None
    attack_data: Dataset | None = None

    def _batch(self, data: Dataset | None, batch_size, seed: int, client: int, rnd: int, salt: int):
        if data is None:
            return None
        if batch_size is None or batch_size >= len(data):
            return data.as_batch()
        rng = np.random.default_rng([seed, salt, client, rnd])
        return data.as_batch().take(np.sort(rng.choice(len(data), size=batch_size, replace=False)))

    def grad(self, params, cfg: EngineConfig, client: int, rnd: int) -> np.ndarray:
        return eval_loss_grad(self.model, params, self._batch(self.data, cfg.batch_size, cfg.seed, client, rnd, 11))[1]

    def attack_grad(self, params, cfg: EngineConfig, client: int, rnd: int) -> np.ndarray:
        batch = self._batch(self.attack_data, cfg.batch_size, cfg.seed, client, rnd, 13)
        return eval_loss_grad(self.model, params, batch)[1]

    def full_grad(self, params) -> np.ndarray:
        return eval_loss_grad(self.model, params, None if self.data is None else self.data.as_batch())[1]


@dataclass
class ClientState:
    """One client's private state at the start of a round.

    Benign GPD clients keep one recording variable per original neighbour.
    Records of still-active neighbours live in ``beta_live`` (rows follow
    ``row.active_ids``); a latched neighbour's record is moved to
    ``beta_frozen`` and never touched again. ``beta`` reassembles the full
    stack aligned with ``row.ids``. ``grad`` is the honest local gradient at
    ``theta`` on this round's batch.
    """

    id: int
    role: str
    theta: np.ndarray
    gamma: np.ndarray
    grad: np.ndarray
    gamma_cumsum: np.ndarray
    row: WeightRow
    degree: int
    beta_live: np.ndarray | None = None
    beta_frozen: Mapping[int, np.ndarray] = field(default_factory=dict)
    attack: AttackSpec | None = None

    @property
    def is_benign(self) -> bool:
        return self.role == BENIGN

    @property
    def beta(self) -> np.ndarray | None:
        if self.beta_live is None:
            return None
        out = np.empty((len(self.row.ids), self.beta_live.shape[1]))
        out[self.row.active_mask] = self.beta_live
        for k, j in enumerate(self.row.ids):
            if j in self.beta_frozen:
                out[k] = self.beta_frozen[j]
        return out

    def beta_map(self) -> dict[int, np.ndarray]:
        beta = self.beta
        if beta is None:
            return {}
        return {j: beta[k] for k, j in enumerate(self.row.ids)}


@dataclass(frozen=True)
class RoundSnapshot:
    round: int
    thetas: np.ndarray
    gammas: np.ndarray
    published: frozenset

    def gamma_map(self, ids) -> dict[int, np.ndarray]:
        return {j: self.gammas[j] for j in ids}


def publish(states: Mapping[int, ClientState], n: int, rnd: int) -> RoundSnapshot:
    any_state = next(iter(states.values()))
    dim = any_state.theta.size
    thetas = np.zeros((n, dim))
    gammas = np.zeros((n, dim))
    for i, s in states.items():
        thetas[i] = s.theta
        gammas[i] = s.gamma
    thetas.setflags(write=False)
    gammas.setflags(write=False)
    return RoundSnapshot(rnd, thetas, gammas, frozenset(states))


def _active(state: ClientState, snapshot: RoundSnapshot):
    row = state.row
    mask = row.active_mask
    ids = row.active_index
    if not snapshot.published.issuperset(row.active_ids):
        missing = [int(j) for j in ids if j not in snapshot.published]
        raise ProtocolError(f"round {snapshot.round}: client {state.id} got no update from {missing}")
    return mask, ids, row.weights[mask]


def _mix(w, snapshot: RoundSnapshot, ids, lam: float) -> np.ndarray:
    return w @ (snapshot.thetas[ids] - lam * snapshot.gammas[ids])


def init_clients(config: EngineConfig, objectives, topology: Topology,
                 attacks: Mapping[int, AttackSpec] | None = None) -> dict[int, ClientState]:
    """Round-0 states: random theta, gamma = local gradient, uniform rows, zero records."""
    attacks = dict(attacks or {})
    if len(objectives) != topology.n:
        raise ConfigurationError(
            f"{len(objectives)} local objectives for a {topology.n}-client topology", "n_clients"
        )
    members = [i for i in range(topology.n) if not (config.benign_only and i in attacks)]
    if not topology.is_connected(members):
        raise ConfigurationError("participating clients do not form a connected graph", "topology.kind")
    states = {}
    for i in members:
        obj = objectives[i]
        rng = np.random.default_rng([config.seed, 1, i])
        theta = config.init_scale * rng.standard_normal(obj.model.dim)
        grad = obj.grad(theta, config, i, 0)
        row = WeightRow.uniform(i, [j for j in topology.neighbors[i] if j in members])
        role = MALICIOUS if i in attacks else BENIGN
        beta = np.zeros((len(row.ids), theta.size)) if role == BENIGN and config.rule == "gpd" else None
        states[i] = ClientState(
            id=i, role=role, theta=theta, gamma=grad.copy(), grad=grad,
            gamma_cumsum=grad.copy(), row=row, degree=len(row.ids), beta_live=beta,
            attack=attacks.get(i),
        )
    return states


def benign_step(state: ClientState, snapshot: RoundSnapshot, config: EngineConfig,
                objective: Objective) -> ClientState:
    """Gradient-purification update of one benign client."""
    mask, ids, w = _active(state, snapshot)
    gammas = snapshot.gammas[ids]

    live = w[:, None] * gammas
    live += state.beta_live
    theta = _mix(w, snapshot, ids, config.lam)
    grad = objective.grad(theta, config, state.id, snapshot.round + 1)

    # latched rows carry zero weight, so the gate only ever selects live records
    gate = state.row.weights[mask] > cut(state.degree, config.detection.threshold_factor)
    recorded = live.sum(axis=0) if gate.all() else live[gate].sum(axis=0)
    scale = config.hooks.compensator_scale
    gamma = grad + recorded
    gamma -= state.gamma_cumsum if scale == 1.0 else scale * state.gamma_cumsum
    cumsum = state.gamma_cumsum + gamma

    row = state.row
    frozen = state.beta_frozen
    det = config.detection
    if det.kind != "none":
        row = adjust_stacked(det, snapshot.gammas[state.id], gammas, row)
        row, _ = apply_latch(row, state.degree, det.threshold_factor, det.latch,
                             renormalize=config.hooks.latch_renormalize)
        keep = row.active_mask[mask]
        if not keep.all():
            frozen = {**frozen, **{int(j): live[k].copy() for k, j in enumerate(ids) if not keep[k]}}
            live = live[keep]
    return replace(state, theta=theta, gamma=gamma, grad=grad, gamma_cumsum=cumsum, row=row,
                   beta_live=live, beta_frozen=frozen)


def malicious_step(state: ClientState, snapshot: RoundSnapshot, config: EngineConfig,
                   objective: Objective, benign_gammas=()) -> ClientState:
    """Honest aggregation with the initial weights, poisoned tracking variable."""
    _, ids, w = _active(state, snapshot)
    theta = _mix(w, snapshot, ids, config.lam)
    rnd = snapshot.round + 1
    clean = objective.grad(theta, config, state.id, rnd)
    attack = state.attack
    if attack.kind in DATA_ATTACKS:
        bad = objective.attack_grad(theta, config, state.id, rnd)
    elif attack.kind == "lie_deviation":
        bad = craft_lie_deviation(benign_gammas, attack.z)
    else:
        bad = np.asarray(attack.vector, dtype=np.float64)
    gamma = malicious_tracking_variable(clean, bad, attack.pi)
    return replace(state, theta=theta, gamma=gamma, grad=clean, gamma_cumsum=state.gamma_cumsum + gamma)


def dsgt_step(state: ClientState, snapshot: RoundSnapshot, config: EngineConfig,
              objective: Objective, noise: np.ndarray | None = None) -> ClientState:
    """Plain gradient tracking with the client's (fixed) weight row."""
    _, ids, w = _active(state, snapshot)
    theta = _mix(w, snapshot, ids, config.lam)
    grad = objective.grad(theta, config, state.id, snapshot.round + 1)
    mixed = w @ snapshot.gammas[ids]
    if noise is not None:
        mixed = mixed + noise
    gamma = mixed + grad - state.grad
    return replace(state, theta=theta, gamma=gamma, grad=grad, gamma_cumsum=state.gamma_cumsum + gamma)


def dsgd_step(state: ClientState, snapshot: RoundSnapshot, config: EngineConfig,
              objective: Objective) -> ClientState:
    """Decentralized SGD: the published vector is the local gradient itself."""
    _, ids, w = _active(state, snapshot)
    theta = _mix(w, snapshot, ids, config.lam)
    grad = objective.grad(theta, config, state.id, snapshot.round + 1)
    return replace(state, theta=theta, gamma=grad, grad=grad, gamma_cumsum=state.gamma_cumsum + grad)


class Simulation:
    """Owns client states and advances them one synchronous round at a time."""

    def __init__(self, config: EngineConfig, objectives, topology: Topology,
                 attacks: Mapping[int, AttackSpec] | None = None,
                 evaluator: Callable | None = None):
        self.config = config
        self.objectives = list(objectives)
        self.topology = topology
        self.attacks = dict(attacks or {})
        self.evaluator = evaluator
        self.states = init_clients(config, self.objectives, topology, self.attacks)
        self.round = 0
        self.history: list[M.MetricsRecord] = []

    @property
    def benign_ids(self) -> list[int]:
        return sorted(i for i, s in self.states.items() if s.is_benign)

    @property
    def reference_client(self) -> int:
        return self.benign_ids[0]

    def snapshot(self) -> RoundSnapshot:
        return publish(self.states, self.topology.n, self.round)

    def _noise(self, i: int) -> np.ndarray | None:
        scale = self.config.laplace_scale
        if not scale:
            return None
        rng = np.random.default_rng([self.config.seed, 17, i, self.round])
        return rng.laplace(0.0, scale, size=self.states[i].theta.size)

    def _step_client(self, state: ClientState, snap: RoundSnapshot, benign_view) -> ClientState:
        obj = self.objectives[state.id]
        cfg = self.config
        if not state.is_benign:
            return malicious_step(state, snap, cfg, obj, benign_view)
        if cfg.rule == "gpd":
            return benign_step(state, snap, cfg, obj)
        if cfg.rule == "dsgt":
            return dsgt_step(state, snap, cfg, obj, self._noise(state.id))
        return dsgd_step(state, snap, cfg, obj)

    def step(self) -> M.MetricsRecord:
        start = time.perf_counter()
        snap = self.snapshot()
        benign_view = [snap.gammas[i] for i in self.benign_ids]
        new_states = {}
        for i, state in self.states.items():
            try:
                new_states[i] = self._step_client(state, snap, benign_view)
            except ProtocolError:
                raise
            except Exception as exc:  # pragma: no cover - annotated re-raise
                raise ProtocolError(f"round {self.round}, client {i}: {exc}") from exc
        self.states = new_states
        self.round += 1
        elapsed = (time.perf_counter() - start) * 1000.0
        record = self.measure(elapsed)
        self.history.append(record)
        return record

    def full_grads(self, ids) -> list[np.ndarray]:
        if self.config.batch_size is None:
            return [self.states[i].grad for i in ids]
        return [self.objectives[i].full_grad(self.states[i].theta) for i in ids]

    def excluded_ids(self) -> set[int]:
        out: set[int] = set()
        for i in self.benign_ids:
            out |= self.states[i].row.excluded
        return out

    def measure(self, wall_time_ms: float = 0.0) -> M.MetricsRecord:
        ids = self.benign_ids
        acc = asr = M.NAN
        if self.evaluator is not None:
            acc, asr = self.evaluator(self.states[self.reference_client].theta)
        return M.MetricsRecord(
            round=self.round,
            test_accuracy=acc,
            attack_accuracy=asr,
            tracking_residual=M.tracking_residual([self.states[i].gamma for i in ids], self.full_grads(ids)),
            consensus_error=M.consensus_error([self.states[i].theta for i in ids]),
            n_excluded=len(self.excluded_ids()),
            wall_time_ms=wall_time_ms,
        )

    def run(self, rounds: int | None = None) -> list[M.MetricsRecord]:
        for _ in range(self.config.rounds if rounds is None else rounds):
            self.step()
        return self.history


def run(config: EngineConfig, objectives, topology: Topology, attacks=None, evaluator=None):
    """Execute ``config.rounds`` rounds and return one record per round."""
    return Simulation(config, objectives, topology, attacks, evaluator).run()
