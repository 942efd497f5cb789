"""
Scoring lattices and the log-domain kernels that run over them.

A lattice here is frame synchronous: every arc consumes exactly one frame and
carries an output-class id, so a path of length T pairs arc t with frame t.
Epsilon arcs (unit == EPSILON) may appear while graphs are being assembled and
are removed by `Lattice.remove_epsilons` before any kernel runs.
"""
import logging
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp

from kwspot.errors import DimensionMismatch, FormatError, GraphError, LengthMismatch, NoPath, TooManyPaths

logger = logging.getLogger(__name__)

EPSILON = -1
NEG_INF = -np.inf
FINAL_MARKER = "FINAL"


class ScoreKind(str, Enum):
    LOG_POSTERIOR = "log_posterior"
    LOG_LIKELIHOOD = "log_likelihood"
    POSTERIOR = "posterior"
    OCCUPANCY = "occupancy"
    GRADIENT = "gradient"


class ScoreMatrix:
    """T x U matrix of per-frame, per-unit values tagged with their meaning"""

    def __init__(self, values, kind: ScoreKind = ScoreKind.LOG_POSTERIOR):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise FormatError(f"score matrix must be 2-D, got shape {values.shape}")
        if np.isnan(values).any() or np.isposinf(values).any():
            raise FormatError("score matrix holds NaN or +inf")
        if kind in (ScoreKind.POSTERIOR, ScoreKind.OCCUPANCY, ScoreKind.GRADIENT) and not np.isfinite(values).all():
            raise FormatError(f"{kind.value} values must be finite")
        self.values = values
        self.kind = kind

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def U(self) -> int:
        return self.values.shape[1]

    def is_normalized(self, tol: float = 1e-6) -> bool:
        """Rows of a log-posterior matrix must logsumexp to zero"""
        if self.T == 0:
            return True
        return bool(np.all(np.abs(logsumexp(self.values, axis=1)) <= tol))

    def to_linear(self) -> "ScoreMatrix":
        return ScoreMatrix(np.exp(self.values), ScoreKind.POSTERIOR)

    def __repr__(self) -> str:
        return f"ScoreMatrix(T={self.T}, U={self.U}, kind={self.kind.value})"


def _as_values(scores: Union[ScoreMatrix, np.ndarray]) -> np.ndarray:
    if isinstance(scores, ScoreMatrix):
        return scores.values
    return np.asarray(scores, dtype=np.float64)


class Lattice:
    """
    Weighted acceptor over output classes

    States are integers 0..num_states-1. Arcs are stored column-wise in numpy
    arrays (src, dst, unit, weight). Final states carry a log final weight;
    non-final states hold -inf. Optional per-arc `tags` (int, -1 for none) and
    `entries` (bool) let decoders recover which sub-graph a path went through.
    """

    def __init__(
        self,
        num_states: int,
        src,
        dst,
        unit,
        weight,
        final,
        initial: int = 0,
        tags=None,
        entries=None,
    ):
        self.num_states = int(num_states)
        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)
        self.unit = np.asarray(unit, dtype=np.int64)
        self.weight = np.asarray(weight, dtype=np.float64)
        self.final = np.asarray(final, dtype=np.float64)
        self.initial = int(initial)
        n = len(self.src)
        self.tags = np.full(n, -1, dtype=np.int64) if tags is None else np.asarray(tags, dtype=np.int64)
        self.entries = np.zeros(n, dtype=bool) if entries is None else np.asarray(entries, dtype=bool)
        self._groups: Dict[str, Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = {}

        if not (len(self.dst) == len(self.unit) == len(self.weight) == len(self.tags) == len(self.entries) == n):
            raise GraphError("arc arrays differ in length")
        if self.final.shape != (self.num_states,):
            raise GraphError("final weights must have one entry per state")
        if not 0 <= self.initial < max(self.num_states, 1):
            raise GraphError("initial state out of range")
        if n and (self.src.min() < 0 or self.dst.min() < 0
                  or self.src.max() >= self.num_states or self.dst.max() >= self.num_states):
            raise GraphError("arc endpoint out of range")
        if not np.isfinite(self.weight).all():
            raise GraphError("arc log-weights must be finite")

    @classmethod
    def from_arcs(
        cls,
        num_states: int,
        arcs: Iterable[Sequence],
        finals: Dict[int, float],
        initial: int = 0,
    ) -> "Lattice":
        """
        Build from (src, dst, unit, logw[, tag[, entry]]) tuples and a state->final-weight map
        """
        rows = [tuple(a) + (-1, False)[len(a) - 4:] if len(a) < 6 else tuple(a) for a in arcs]
        final = np.full(num_states, NEG_INF)
        for state, w in finals.items():
            final[state] = w
        if not rows:
            return cls(num_states, [], [], [], [], final, initial)
        src, dst, unit, weight, tags, entries = zip(*rows)
        return cls(num_states, src, dst, unit, weight, final, initial, tags, entries)

    @classmethod
    def empty(cls) -> "Lattice":
        return cls(1, [], [], [], [], [NEG_INF], 0)

    @property
    def num_arcs(self) -> int:
        return len(self.src)

    @property
    def is_epsilon_free(self) -> bool:
        return not bool((self.unit == EPSILON).any())

    @property
    def max_unit(self) -> int:
        return int(self.unit.max()) if self.num_arcs else -1

    def finals(self) -> Dict[int, float]:
        return {int(s): float(self.final[s]) for s in np.flatnonzero(np.isfinite(self.final))}

    def arcs(self) -> List[Tuple[int, int, int, float, int, bool]]:
        return list(zip(self.src.tolist(), self.dst.tolist(), self.unit.tolist(),
                        self.weight.tolist(), self.tags.tolist(), self.entries.tolist()))

    def group_by(self, key: str):
        """
        Arcs sorted (stably) by `src` or `dst`, with reduceat segment starts

        Returns:
            (permutation, segment starts, segment state ids, segment lengths)
        """
        if key not in self._groups:
            keys = self.src if key == "src" else self.dst
            perm = np.argsort(keys, kind="stable")
            sorted_keys = keys[perm]
            if len(perm):
                starts = np.flatnonzero(np.r_[True, sorted_keys[1:] != sorted_keys[:-1]])
            else:
                starts = np.zeros(0, dtype=np.int64)
            states = sorted_keys[starts]
            lengths = np.diff(np.r_[starts, len(perm)])
            self._groups[key] = (perm, starts, states, lengths)
        return self._groups[key]

    def trim(self) -> "Lattice":
        """Keep states reachable from the initial state and co-reachable to a final state"""
        fwd = np.zeros(self.num_states, dtype=bool)
        fwd[self.initial] = True
        bwd = np.isfinite(self.final).copy()
        changed = True
        while changed:
            new_fwd = fwd.copy()
            new_fwd[self.dst[fwd[self.src]]] = True
            new_bwd = bwd.copy()
            new_bwd[self.src[bwd[self.dst]]] = True
            changed = bool((new_fwd != fwd).any() or (new_bwd != bwd).any())
            fwd, bwd = new_fwd, new_bwd
        keep = fwd & bwd
        keep[self.initial] = True
        mapping = np.full(self.num_states, -1, dtype=np.int64)
        mapping[keep] = np.arange(int(keep.sum()))
        arc_keep = keep[self.src] & keep[self.dst]
        return Lattice(
            int(keep.sum()),
            mapping[self.src[arc_keep]],
            mapping[self.dst[arc_keep]],
            self.unit[arc_keep],
            self.weight[arc_keep],
            self.final[keep],
            int(mapping[self.initial]),
            self.tags[arc_keep],
            self.entries[arc_keep],
        )

    def remove_epsilons(self) -> "Lattice":
        """Fold epsilon arcs into the emitting arcs that follow them (epsilon cycles are rejected)"""
        if self.is_epsilon_free:
            return self
        eps = self.unit == EPSILON
        eps_out: Dict[int, List[Tuple[int, float]]] = {}
        for s, d, w in zip(self.src[eps].tolist(), self.dst[eps].tolist(), self.weight[eps].tolist()):
            eps_out.setdefault(s, []).append((d, w))

        closures: Dict[int, Dict[int, float]] = {}

        def closure(state: int, visiting: frozenset) -> Dict[int, float]:
            if state in closures:
                return closures[state]
            if state in visiting:
                raise GraphError("epsilon cycle")
            result: Dict[int, float] = {state: 0.0}
            for nxt, w in eps_out.get(state, []):
                for c, wc in closure(nxt, visiting | {state}).items():
                    result[c] = float(np.logaddexp(result[c], w + wc)) if c in result else w + wc
            closures[state] = result
            return result

        out_arcs: Dict[int, List[int]] = {}
        for i in np.flatnonzero(~eps).tolist():
            out_arcs.setdefault(int(self.src[i]), []).append(i)

        rows = []
        final = np.full(self.num_states, NEG_INF)
        for s in range(self.num_states):
            for c, wc in closure(s, frozenset()).items():
                if np.isfinite(self.final[c]):
                    final[s] = np.logaddexp(final[s], wc + self.final[c])
                for i in out_arcs.get(c, []):
                    rows.append((s, int(self.dst[i]), int(self.unit[i]), wc + float(self.weight[i]),
                                 int(self.tags[i]), bool(self.entries[i])))
        finals = {s: float(final[s]) for s in np.flatnonzero(np.isfinite(final))}
        return Lattice.from_arcs(self.num_states, rows, finals, self.initial).trim()

    def dump(self) -> str:
        """Debug text: `src dst unit logw` per arc, `state FINAL logw` per final state"""
        lines = [
            f"{s} {d} {'eps' if u == EPSILON else u} {w!r}"
            for s, d, u, w in zip(self.src.tolist(), self.dst.tolist(), self.unit.tolist(), self.weight.tolist())
        ]
        lines += [f"{s} {FINAL_MARKER} {w!r}" for s, w in self.finals().items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def load(cls, text: str, initial: int = 0) -> "Lattice":
        arcs, finals, max_state = [], {}, initial
        for lineno, line in enumerate(text.splitlines(), 1):
            parts = line.split()
            if not parts:
                continue
            try:
                if len(parts) == 3 and parts[1] == FINAL_MARKER:
                    state = int(parts[0])
                    finals[state] = float(parts[2])
                    max_state = max(max_state, state)
                elif len(parts) == 4:
                    s, d = int(parts[0]), int(parts[1])
                    u = EPSILON if parts[2] == "eps" else int(parts[2])
                    arcs.append((s, d, u, float(parts[3])))
                    max_state = max(max_state, s, d)
                else:
                    raise ValueError(line)
            except ValueError as e:
                raise FormatError(f"line {lineno}: cannot parse lattice entry {line!r}") from e
        return cls.from_arcs(max_state + 1, arcs, finals, initial)

    def __repr__(self) -> str:
        return f"Lattice(states={self.num_states}, arcs={self.num_arcs}, finals={len(self.finals())})"


class FBResult:
    """Total log score and per-frame unit occupancies of a forward-backward pass"""

    def __init__(self, log_total: float, occupancy: ScoreMatrix):
        self.log_total = log_total
        self.occupancy = occupancy

    def __repr__(self) -> str:
        return f"FBResult(log_total={self.log_total:.6f}, T={self.occupancy.T})"


def _segment_logsumexp(values: np.ndarray, groups, num_states: int) -> np.ndarray:
    perm, starts, states, lengths = groups
    out = np.full(num_states, NEG_INF)
    if len(perm) == 0:
        return out
    v = values[perm]
    m = np.maximum.reduceat(v, starts)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    s = np.add.reduceat(np.exp(v - np.repeat(m_safe, lengths)), starts)
    with np.errstate(divide="ignore"):
        out[states] = np.where(s > 0, m_safe + np.log(s), NEG_INF)
    return out


def _segment_argmax(values: np.ndarray, groups, num_states: int) -> Tuple[np.ndarray, np.ndarray]:
    """Per-state max and the lowest arc index attaining it"""
    perm, starts, states, lengths = groups
    best = np.full(num_states, NEG_INF)
    back = np.full(num_states, -1, dtype=np.int64)
    if len(perm) == 0:
        return best, back
    v = values[perm]
    m = np.maximum.reduceat(v, starts)
    hit = np.flatnonzero((v == np.repeat(m, lengths)) & np.isfinite(v))
    pos = np.searchsorted(hit, starts)
    ok = np.isfinite(m)
    best[states] = m
    back[states[ok]] = perm[hit[pos[ok]]]
    return best, back


def _check_inputs(lattice: Lattice, x: np.ndarray, T: Optional[int]) -> int:
    if not lattice.is_epsilon_free:
        raise GraphError("lattice still holds epsilon arcs")
    if T is None:
        T = x.shape[0]
    elif T != x.shape[0]:
        raise LengthMismatch(x.shape[0], T)
    if lattice.max_unit >= x.shape[1]:
        raise DimensionMismatch(x.shape[1], lattice.max_unit + 1)
    return T


def forward_pass(lattice: Lattice, x: np.ndarray) -> np.ndarray:
    """alpha[t, s]: log score of all length-t prefixes ending in s"""
    T = x.shape[0]
    groups = lattice.group_by("dst")
    alpha = np.full((T + 1, lattice.num_states), NEG_INF)
    alpha[0, lattice.initial] = 0.0
    for t in range(T):
        arc_scores = alpha[t, lattice.src] + lattice.weight + x[t, lattice.unit]
        alpha[t + 1] = _segment_logsumexp(arc_scores, groups, lattice.num_states)
    return alpha


def backward_pass(lattice: Lattice, x: np.ndarray) -> np.ndarray:
    """beta[t, s]: log score of all suffixes covering frames t..T-1 from s"""
    T = x.shape[0]
    groups = lattice.group_by("src")
    beta = np.full((T + 1, lattice.num_states), NEG_INF)
    beta[T] = lattice.final
    for t in range(T - 1, -1, -1):
        arc_scores = beta[t + 1, lattice.dst] + lattice.weight + x[t, lattice.unit]
        beta[t] = _segment_logsumexp(arc_scores, groups, lattice.num_states)
    return beta


def arc_log_posteriors(lattice: Lattice, x: np.ndarray, alpha: np.ndarray, beta: np.ndarray,
                       log_total: float) -> np.ndarray:
    """T x A log posterior of taking each arc at each frame"""
    T = x.shape[0]
    return (alpha[:T, lattice.src] + lattice.weight[None, :] + x[:, lattice.unit]
            + beta[1:, lattice.dst] - log_total)


def forward_backward(lattice: Lattice, scores: Union[ScoreMatrix, np.ndarray], T: Optional[int] = None) -> FBResult:
    """
    Sum over all length-T accepting paths and collect unit occupancies

    Args:
        lattice: epsilon-free frame-synchronous lattice
        scores: T x U log-domain frame scores
        T: frame count (defaults to the score matrix length)

    Returns:
        FBResult with log_total and occupancy gamma[t][u] in [0, 1]

    Raises:
        NoPath: when no accepting path of length T exists
    """
    x = _as_values(scores)
    T = _check_inputs(lattice, x, T)
    U = x.shape[1]
    alpha = forward_pass(lattice, x)
    log_total = float(logsumexp(alpha[T] + lattice.final)) if lattice.num_states else NEG_INF
    if not np.isfinite(log_total):
        raise NoPath(f"no accepting path of length {T}")
    beta = backward_pass(lattice, x)
    post = np.exp(arc_log_posteriors(lattice, x, alpha, beta, log_total))
    gamma = np.zeros((T, U))
    for t in range(T):
        gamma[t] = np.bincount(lattice.unit, weights=post[t], minlength=U)
    return FBResult(log_total, ScoreMatrix(gamma, ScoreKind.OCCUPANCY))


def viterbi_arcs(lattice: Lattice, scores: Union[ScoreMatrix, np.ndarray], T: Optional[int] = None) -> Tuple[List[int], float]:
    """Best accepting path as arc indices; ties go to the lowest arc index"""
    x = _as_values(scores)
    T = _check_inputs(lattice, x, T)
    groups = lattice.group_by("dst")
    delta = np.full(lattice.num_states, NEG_INF)
    delta[lattice.initial] = 0.0
    back = np.full((T + 1, lattice.num_states), -1, dtype=np.int64)
    for t in range(T):
        arc_scores = delta[lattice.src] + lattice.weight + x[t, lattice.unit]
        delta, back[t + 1] = _segment_argmax(arc_scores, groups, lattice.num_states)
    end_scores = delta + lattice.final
    state = int(np.argmax(end_scores))
    best = float(end_scores[state])
    if not np.isfinite(best):
        raise NoPath(f"no accepting path of length {T}")
    path: List[int] = []
    for t in range(T, 0, -1):
        arc = int(back[t, state])
        path.append(arc)
        state = int(lattice.src[arc])
    path.reverse()
    return path, best


def viterbi(lattice: Lattice, scores: Union[ScoreMatrix, np.ndarray], T: Optional[int] = None) -> Tuple[List[int], float]:
    """Best path as a unit-id per frame, with its total log score"""
    arcs, best = viterbi_arcs(lattice, scores, T)
    return [int(lattice.unit[a]) for a in arcs], best


def viterbi_states(lattice: Lattice, scores: Union[ScoreMatrix, np.ndarray]) -> List[int]:
    """Destination state of each arc on the best path"""
    arcs, _ = viterbi_arcs(lattice, scores)
    return [int(lattice.dst[a]) for a in arcs]


def enumerate_arc_paths(lattice: Lattice, T: int, max_paths: int = 10 ** 6) -> List[List[int]]:
    """Every accepting length-T path as a list of arc indices (test oracle)"""
    if not lattice.is_epsilon_free:
        raise GraphError("lattice still holds epsilon arcs")
    out_arcs: Dict[int, List[int]] = {}
    for i, s in enumerate(lattice.src.tolist()):
        out_arcs.setdefault(s, []).append(i)

    # alive[t, s]: a final state is reachable from s using exactly T - t more arcs
    alive = np.zeros((T + 1, lattice.num_states), dtype=bool)
    alive[T] = np.isfinite(lattice.final)
    for t in range(T - 1, -1, -1):
        alive[t, lattice.src[alive[t + 1, lattice.dst]]] = True

    paths: List[List[int]] = []
    if not alive[0, lattice.initial]:
        return paths
    stack: List[Tuple[int, List[int]]] = [(lattice.initial, [])]
    while stack:
        state, prefix = stack.pop()
        t = len(prefix)
        if t == T:
            paths.append(prefix)
            if len(paths) > max_paths:
                raise TooManyPaths(f"more than {max_paths} paths")
            continue
        for arc in reversed(out_arcs.get(state, [])):
            nxt = int(lattice.dst[arc])
            if alive[t + 1, nxt]:
                stack.append((nxt, prefix + [arc]))
    return paths


def enumerate_paths(
    lattice: Lattice,
    T: int,
    scores: Union[ScoreMatrix, np.ndarray, None] = None,
    max_paths: int = 10 ** 6,
) -> List[Tuple[List[int], float]]:
    """
    Exhaustive list of accepting length-T paths with their log scores

    The score is the sum of arc weights, the final weight and, when scores are
    given, the frame scores of each arc's unit.
    """
    x = None if scores is None else _as_values(scores)
    result = []
    for arcs in enumerate_arc_paths(lattice, T, max_paths):
        units = [int(lattice.unit[a]) for a in arcs]
        score = float(lattice.weight[arcs].sum()) if arcs else 0.0
        end = int(lattice.dst[arcs[-1]]) if arcs else lattice.initial
        score += float(lattice.final[end])
        if x is not None:
            score += float(sum(x[t, u] for t, u in enumerate(units)))
        result.append((units, score))
    return result
