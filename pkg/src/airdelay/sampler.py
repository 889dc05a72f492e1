"""No-U-Turn sampler over any (log density, gradient) target.

The transition kernel is the recursive tree-doubling construction with a
slice variable (Hoffman & Gelman 2014, Algorithm 6): trajectories double in
a random direction until the endpoints start moving toward each other, a
candidate is drawn uniformly from the admissible leapfrog states, and an
energy error beyond the divergence threshold truncates the tree and flags
the draw.  The U-turn test takes the inner product of the endpoint
displacement with the endpoint velocities (mass-scaled momenta); under unit
mass this is exactly the momentum-displacement criterion.

Warmup adapts the step size by dual averaging toward a target acceptance
statistic and estimates a diagonal mass matrix from expanding windows
(75 step-size-only iterations, doubling estimation windows starting at 25,
50 terminal step-size-only iterations).  ``mass_diag`` throughout is the
estimated marginal posterior variance: momenta are drawn with precision
``mass_diag``, so the kinetic energy is 0.5 * sum(mass_diag * p**2).

Randomness comes from counter-based Philox streams.  A chain's stream is
spawned from the run seed via ``numpy.random.SeedSequence.spawn``, so chains
are reproducible bit-for-bit whether they run sequentially or in parallel.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SamplerConfig",
    "SamplerError",
    "State",
    "DrawStats",
    "ChainOutput",
    "AdaptResult",
    "leapfrog",
    "find_reasonable_step_size",
    "nuts_draw",
    "adapt",
    "run_chain",
    "run_chains",
]

_DA_GAMMA = 0.05
_DA_T0 = 10.0
_DA_KAPPA = 0.75

_INIT_BUFFER = 75
_TERM_BUFFER = 50
_BASE_WINDOW = 25


class SamplerError(RuntimeError):
    """Raised when a chain cannot proceed (bad start point, dead warmup)."""


@dataclass
class SamplerConfig:
    chains: int = 4
    warmup: int = 2000
    draws: int = 2000
    target_accept: float = 0.8
    max_tree_depth: int = 10
    divergence_threshold: float = 1000.0
    seed: int = 0
    jitter: float = 2.0
    jobs: int = 1

    def __post_init__(self):
        if self.chains < 1 or self.warmup < 1 or self.draws < 1:
            raise ValueError("chains, warmup and draws must all be >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must be in (0, 1)")


@dataclass
class State:
    """A position with its cached log density and gradient."""

    q: np.ndarray
    logp: float
    grad: np.ndarray

    @classmethod
    def at(cls, target, q) -> "State":
        q = np.asarray(q, dtype=float)
        logp, grad = target(q)
        return cls(q=q, logp=float(logp), grad=np.asarray(grad, dtype=float))


@dataclass
class DrawStats:
    tree_depth: int
    n_leapfrog: int
    divergent: bool
    energy: float
    accept_stat: float
    depth_saturated: bool


@dataclass
class ChainOutput:
    """Post-warmup draws and per-draw sampler statistics for one chain."""

    chain_id: int
    unconstrained: np.ndarray
    constrained: np.ndarray
    derived: np.ndarray | None
    tree_depth: np.ndarray
    n_leapfrog: np.ndarray
    divergent: np.ndarray
    energy: np.ndarray
    accept_stat: np.ndarray
    depth_saturated: np.ndarray
    step_size: float
    mass_diag: np.ndarray
    names: list[str] | None = None
    derived_names: list[str] | None = None
    status: str = "ok"

    @property
    def divergence_count(self) -> int:
        return int(self.divergent.sum())


def _kinetic(p, mass_diag) -> float:
    # Overflow to inf is fine: the caller treats a non-finite joint as a
    # divergence; silence the warning for the step-size search extremes.
    with np.errstate(over="ignore"):
        return 0.5 * float(mass_diag @ (p * p))


def _leapfrog_state(state: State, p, step_size, mass_diag, target):
    """One half-kick / drift / half-kick update from a cached state."""
    p_half = p + 0.5 * step_size * state.grad
    q_new = state.q + step_size * mass_diag * p_half
    new = State.at(target, q_new)
    p_new = p_half + 0.5 * step_size * new.grad
    return new, p_new


def leapfrog(position, momentum, step_size, mass_diag, target):
    """One symplectic step; returns (position', momentum', energy').

    A non-finite energy signals a divergence to the caller via +inf.
    """
    mass_diag = np.asarray(mass_diag, dtype=float)
    if np.any(mass_diag <= 0):
        raise ValueError("mass diagonal must be positive")
    state = State.at(target, position)
    new, p_new = _leapfrog_state(state, np.asarray(momentum, dtype=float), step_size, mass_diag, target)
    energy = -new.logp + _kinetic(p_new, mass_diag)
    if not math.isfinite(energy):
        energy = math.inf
    return new.q, p_new, energy


def find_reasonable_step_size(target, state: State, mass_diag, rng) -> float:
    """Initial step size heuristic: double/halve until the one-step
    acceptance ratio crosses 1/2."""
    if not math.isfinite(state.logp):
        raise SamplerError("initial point has non-finite log density")
    dim = state.q.shape[0]
    step = 1.0
    p = rng.standard_normal(dim) / np.sqrt(mass_diag)
    joint0 = state.logp - _kinetic(p, mass_diag)
    new, p_new = _leapfrog_state(state, p, step, mass_diag, target)
    log_ratio = (new.logp - _kinetic(p_new, mass_diag)) - joint0
    if not math.isfinite(log_ratio):
        log_ratio = -math.inf
    direction = 1.0 if log_ratio > math.log(0.5) else -1.0
    for _ in range(100):
        if direction * log_ratio <= -direction * math.log(2.0):
            break
        step *= 2.0**direction
        if not 1e-12 < step < 1e12:
            raise SamplerError("failed to find a reasonable step size")
        new, p_new = _leapfrog_state(state, p, step, mass_diag, target)
        log_ratio = (new.logp - _kinetic(p_new, mass_diag)) - joint0
        if not math.isfinite(log_ratio):
            log_ratio = -math.inf
    return step


@dataclass
class _Tree:
    minus: State
    p_minus: np.ndarray
    plus: State
    p_plus: np.ndarray
    proposal: State
    n: int
    cont: bool
    alpha_sum: float
    n_alpha: int
    divergent: bool
    leapfrogs: int


def _no_uturn(minus: State, p_minus, plus: State, p_plus, mass_diag) -> bool:
    span = plus.q - minus.q
    return (span @ (mass_diag * p_minus)) >= 0 and (span @ (mass_diag * p_plus)) >= 0


def _build_tree(state, p, log_u, direction, depth, step_size, mass_diag, target, rng, joint0, dmax):
    if depth == 0:
        new, p_new = _leapfrog_state(state, p, direction * step_size, mass_diag, target)
        joint = new.logp - _kinetic(p_new, mass_diag)
        if not math.isfinite(joint):
            joint = -math.inf
        n = 1 if log_u <= joint else 0
        divergent = not (joint - log_u > -dmax)
        alpha = min(1.0, math.exp(min(0.0, joint - joint0)))
        return _Tree(
            minus=new,
            p_minus=p_new,
            plus=new,
            p_plus=p_new,
            proposal=new,
            n=n,
            cont=not divergent,
            alpha_sum=alpha,
            n_alpha=1,
            divergent=divergent,
            leapfrogs=1,
        )
    inner = _build_tree(state, p, log_u, direction, depth - 1, step_size, mass_diag, target, rng, joint0, dmax)
    if not inner.cont:
        return inner
    if direction == -1:
        outer = _build_tree(
            inner.minus, inner.p_minus, log_u, direction, depth - 1, step_size, mass_diag, target, rng, joint0, dmax
        )
        inner.minus, inner.p_minus = outer.minus, outer.p_minus
    else:
        outer = _build_tree(
            inner.plus, inner.p_plus, log_u, direction, depth - 1, step_size, mass_diag, target, rng, joint0, dmax
        )
        inner.plus, inner.p_plus = outer.plus, outer.p_plus
    total = inner.n + outer.n
    if total > 0 and rng.random() < outer.n / total:
        inner.proposal = outer.proposal
    inner.n = total
    inner.cont = (
        outer.cont
        and _no_uturn(inner.minus, inner.p_minus, inner.plus, inner.p_plus, mass_diag)
    )
    inner.alpha_sum += outer.alpha_sum
    inner.n_alpha += outer.n_alpha
    inner.divergent = inner.divergent or outer.divergent
    inner.leapfrogs += outer.leapfrogs
    return inner


def nuts_draw(current, step_size, mass_diag, target, rng, max_tree_depth=10, divergence_threshold=1000.0):
    """One no-U-turn transition from ``current``; returns (state, stats).

    ``current`` may be a State (cached evaluation) or a bare position.
    """
    if not isinstance(current, State):
        current = State.at(target, current)
    mass_diag = np.asarray(mass_diag, dtype=float)
    dim = current.q.shape[0]
    p0 = rng.standard_normal(dim) / np.sqrt(mass_diag)
    joint0 = current.logp - _kinetic(p0, mass_diag)
    log_u = joint0 - rng.exponential(1.0)

    minus = plus = current
    p_minus = p_plus = p0
    sample = current
    n = 1
    depth = 0
    divergent = False
    leapfrogs = 0
    alpha_sum, n_alpha = 0.0, 0
    cont = True
    while cont and depth < max_tree_depth:
        direction = 1 if rng.random() < 0.5 else -1
        if direction == -1:
            tree = _build_tree(
                minus, p_minus, log_u, -1, depth, step_size, mass_diag, target, rng, joint0, divergence_threshold
            )
            minus, p_minus = tree.minus, tree.p_minus
        else:
            tree = _build_tree(
                plus, p_plus, log_u, 1, depth, step_size, mass_diag, target, rng, joint0, divergence_threshold
            )
            plus, p_plus = tree.plus, tree.p_plus
        leapfrogs += tree.leapfrogs
        alpha_sum += tree.alpha_sum
        n_alpha += tree.n_alpha
        divergent = divergent or tree.divergent
        if tree.cont and tree.n > 0 and rng.random() < min(1.0, tree.n / n):
            sample = tree.proposal
        n += tree.n
        cont = tree.cont and _no_uturn(minus, p_minus, plus, p_plus, mass_diag)
        depth += 1
    stats = DrawStats(
        tree_depth=depth,
        n_leapfrog=leapfrogs,
        divergent=divergent,
        energy=-joint0,
        accept_stat=alpha_sum / n_alpha if n_alpha else 0.0,
        depth_saturated=bool(cont and depth >= max_tree_depth),
    )
    return sample, stats


class _DualAveraging:
    """Step-size recursion driving the acceptance statistic to its target.

    One recursion spans the whole warmup: restarting it per mass window
    would leave the 50-iteration terminal buffer dominated by the restart
    transient, biasing the frozen step low and the realized acceptance
    high.  Mass refreshes perturb the acceptance statistic instead, and the
    recursion absorbs them.
    """

    def __init__(self, step0: float, target_accept: float):
        self.mu = math.log(10.0 * step0)
        self.target = target_accept
        self.log_step = math.log(step0)
        self.log_step_avg = math.log(step0)
        self.h_bar = 0.0
        self.count = 0

    def update(self, accept_stat: float) -> float:
        self.count += 1
        m = self.count
        eta = 1.0 / (m + _DA_T0)
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_stat)
        self.log_step = self.mu - math.sqrt(m) / _DA_GAMMA * self.h_bar
        w = m**-_DA_KAPPA
        self.log_step_avg = w * self.log_step + (1.0 - w) * self.log_step_avg
        return math.exp(self.log_step)

    @property
    def adapted(self) -> float:
        return math.exp(self.log_step_avg)


def _mass_window_ends(warmup: int) -> list[int]:
    """Iteration counts at which the mass estimate is refreshed."""
    limit = warmup - _TERM_BUFFER
    ends = []
    pos = _INIT_BUFFER
    size = _BASE_WINDOW
    while pos + size <= limit:
        end = pos + size
        if end + 2 * size > limit:
            end = limit
        ends.append(end)
        pos = end
        size *= 2
    return ends


def _regularized_variance(samples: np.ndarray) -> np.ndarray:
    n = samples.shape[0]
    var = samples.var(axis=0, ddof=1) if n > 1 else np.ones(samples.shape[1])
    return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))


@dataclass
class AdaptResult:
    step_size: float
    mass_diag: np.ndarray
    state: State
    warmup_divergences: int = 0
    warmup_draws: np.ndarray | None = field(default=None, repr=False)


def adapt(target, q0, config: SamplerConfig, rng) -> AdaptResult:
    """Run the warmup phase from q0; returns frozen step size and mass.

    Deterministic given the generator state.  Aborts when every warmup draw
    diverges, since no step size information can be extracted.
    """
    if config.warmup < _INIT_BUFFER + _TERM_BUFFER + _BASE_WINDOW:
        raise SamplerError(
            f"warmup must be >= {_INIT_BUFFER + _TERM_BUFFER + _BASE_WINDOW} for windowed adaptation"
        )
    state = State.at(target, q0)
    if not math.isfinite(state.logp):
        raise SamplerError("initial point has non-finite log density")
    dim = state.q.shape[0]
    mass = np.ones(dim)
    step = find_reasonable_step_size(target, state, mass, rng)
    da = _DualAveraging(step, config.target_accept)
    window_ends = _mass_window_ends(config.warmup)
    window_start = _INIT_BUFFER
    positions = np.empty((config.warmup, dim))
    divergences = 0
    for m in range(1, config.warmup + 1):
        state, stats = nuts_draw(
            state, step, mass, target, rng, config.max_tree_depth, config.divergence_threshold
        )
        positions[m - 1] = state.q
        divergences += stats.divergent
        step = da.update(stats.accept_stat)
        if m in window_ends:
            mass = _regularized_variance(positions[window_start:m])
            window_start = m
    if divergences >= config.warmup:
        raise SamplerError(
            "every warmup draw diverged; try a smaller initial step size or a reparameterized target"
        )
    return AdaptResult(
        step_size=da.adapted,
        mass_diag=mass,
        state=state,
        warmup_divergences=divergences,
        warmup_draws=positions,
    )


def run_chain(
    target,
    dim: int,
    config: SamplerConfig,
    seed_seq,
    chain_id: int = 0,
    constrain=None,
    derived=None,
    names=None,
    derived_names=None,
) -> ChainOutput:
    """Warm up and sample a single chain from its own Philox stream."""
    rng = np.random.Generator(np.random.Philox(seed_seq))
    q0 = rng.uniform(-config.jitter, config.jitter, dim)
    result = adapt(target, q0, config, rng)
    state = result.state
    step, mass = result.step_size, result.mass_diag

    draws = np.empty((config.draws, dim))
    tree_depth = np.empty(config.draws, dtype=int)
    n_leapfrog = np.empty(config.draws, dtype=int)
    divergent = np.zeros(config.draws, dtype=bool)
    energy = np.empty(config.draws)
    accept_stat = np.empty(config.draws)
    depth_saturated = np.zeros(config.draws, dtype=bool)
    for i in range(config.draws):
        state, stats = nuts_draw(
            state, step, mass, target, rng, config.max_tree_depth, config.divergence_threshold
        )
        draws[i] = state.q
        tree_depth[i] = stats.tree_depth
        n_leapfrog[i] = stats.n_leapfrog
        divergent[i] = stats.divergent
        energy[i] = stats.energy
        accept_stat[i] = stats.accept_stat
        depth_saturated[i] = stats.depth_saturated

    constrained = np.vstack([constrain(q) for q in draws]) if constrain else draws.copy()
    derived_block = np.vstack([derived(row) for row in constrained]) if derived else None
    return ChainOutput(
        chain_id=chain_id,
        unconstrained=draws,
        constrained=constrained,
        derived=derived_block,
        tree_depth=tree_depth,
        n_leapfrog=n_leapfrog,
        divergent=divergent,
        energy=energy,
        accept_stat=accept_stat,
        depth_saturated=depth_saturated,
        step_size=step,
        mass_diag=mass,
        names=list(names) if names else None,
        derived_names=list(derived_names) if derived_names else None,
    )


def _empty_output(chain_id, dim, message) -> ChainOutput:
    zero = np.zeros(0)
    return ChainOutput(
        chain_id=chain_id,
        unconstrained=np.zeros((0, dim)),
        constrained=np.zeros((0, dim)),
        derived=None,
        tree_depth=zero.astype(int),
        n_leapfrog=zero.astype(int),
        divergent=zero.astype(bool),
        energy=zero,
        accept_stat=zero,
        depth_saturated=zero.astype(bool),
        step_size=math.nan,
        mass_diag=np.ones(dim),
        status=message,
    )


def _chain_task(args):
    (target, dim, config, entropy, chain_id, constrain, derived, names, derived_names) = args
    seed_seq = np.random.SeedSequence(entropy=entropy[0], spawn_key=entropy[1])
    try:
        return run_chain(
            target, dim, config, seed_seq, chain_id, constrain, derived, names, derived_names
        )
    except SamplerError as exc:
        return _empty_output(chain_id, dim, f"aborted: {exc}")


def run_chains(
    target,
    dim: int,
    config: SamplerConfig,
    constrain=None,
    derived=None,
    names=None,
    derived_names=None,
) -> list[ChainOutput]:
    """Run config.chains independent chains, merged in chain-index order.

    Chains draw their streams from SeedSequence(config.seed).spawn, so the
    results are identical whether jobs is 1 or many.  A chain that aborts
    contributes an empty output whose status carries the diagnostic.
    """
    streams = np.random.SeedSequence(config.seed).spawn(config.chains)
    tasks = [
        (target, dim, config, (s.entropy, s.spawn_key), c, constrain, derived, names, derived_names)
        for c, s in enumerate(streams)
    ]
    if config.jobs > 1 and config.chains > 1:
        with ProcessPoolExecutor(max_workers=min(config.jobs, config.chains)) as pool:
            return list(pool.map(_chain_task, tasks))
    return [_chain_task(task) for task in tasks]
