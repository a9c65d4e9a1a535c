"""Connectionist Temporal Classification.

Loss and gradient via the forward/backward recursion over the
blank-extended target, prefix beam search and best-path decoding over
collapsed labelings, an exhaustive path-enumeration oracle for small
instances, and the beam-vs-network fault diagnosis.

All dynamic programming runs in log space (float64) regardless of the
logits' dtype; a labeling is a blank-free tuple of gloss ids and the
blank is always the last class, i.e. id K-1 for K = V+1 logit columns.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, InfeasibleTargetError, ShapeError
from .nn.functional import log_softmax, softmax_time_distributed

NEG_INF = -np.inf


@dataclass
class LogitSequence:
    """Per-timestep scores over V glosses + blank; rows at or beyond
    input_length are padding and ignored by every operation here."""

    scores: np.ndarray  # (T_padded, V+1)
    input_length: int | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores)
        if self.scores.ndim != 2:
            raise ShapeError(f"logits must be (T, K), got {self.scores.shape}")
        if self.input_length is None:
            self.input_length = self.scores.shape[0]
        if not 0 <= self.input_length <= self.scores.shape[0]:
            raise ShapeError(
                f"input_length {self.input_length} exceeds padded T {self.scores.shape[0]}"
            )

    @property
    def valid(self):
        return self.scores[: self.input_length]

    @property
    def num_classes(self):
        return self.scores.shape[1]


def _as_logit_seq(logits):
    if isinstance(logits, LogitSequence):
        return logits
    return LogitSequence(np.asarray(logits))


def min_input_length(labeling):
    """Shortest T that can emit the labeling: one frame per symbol plus a
    separating blank between equal neighbours."""
    labeling = tuple(labeling)
    repeats = sum(1 for a, b in zip(labeling, labeling[1:]) if a == b)
    return len(labeling) + repeats


def _check_labeling(labeling, num_classes):
    blank = num_classes - 1
    for sym in labeling:
        if not 0 <= sym < blank:
            raise ConfigError(f"labeling symbol {sym} outside gloss range [0, {blank})")


def _extended(labeling, blank):
    ext = np.empty(2 * len(labeling) + 1, dtype=np.int64)
    ext[0::2] = blank
    ext[1::2] = labeling
    return ext


def _skip_mask(ext, blank):
    # s-2 -> s hops are legal only onto a different non-blank symbol
    skip = np.zeros(len(ext), dtype=bool)
    skip[2:] = (ext[2:] != ext[:-2]) & (ext[2:] != blank)
    return skip


def _forward_alphas(logp, ext, blank):
    """Alpha lattice over the extended target; emission at t included."""
    t_len = logp.shape[0]
    L = len(ext)
    skip = _skip_mask(ext, blank)
    alphas = np.full((t_len, L), NEG_INF)
    alphas[0, 0] = logp[0, ext[0]]
    if L > 1:
        alphas[0, 1] = logp[0, ext[1]]
    for t in range(1, t_len):
        prev = alphas[t - 1]
        stay = prev
        step = np.full(L, NEG_INF)
        step[1:] = prev[:-1]
        hop = np.full(L, NEG_INF)
        hop[2:] = prev[:-2]
        hop[~skip] = NEG_INF
        merged = np.logaddexp(np.logaddexp(stay, step), hop)
        alphas[t] = merged + logp[t, ext]
    return alphas


def _backward_betas(logp, ext, blank):
    """Beta lattice holding future emission mass only (frame t excluded)."""
    t_len = logp.shape[0]
    L = len(ext)
    skip = _skip_mask(ext, blank)
    betas = np.full((t_len, L), NEG_INF)
    betas[t_len - 1, L - 1] = 0.0
    if L > 1:
        betas[t_len - 1, L - 2] = 0.0
    for t in range(t_len - 2, -1, -1):
        nxt = betas[t + 1] + logp[t + 1, ext]
        stay = nxt
        step = np.full(L, NEG_INF)
        step[:-1] = nxt[1:]
        hop = np.full(L, NEG_INF)
        hop[:-2] = np.where(skip[2:], nxt[2:], NEG_INF)
        betas[t] = np.logaddexp(np.logaddexp(stay, step), hop)
    return betas


def ctc_loss(logits, target):
    """Negative log probability of the target labeling plus the gradient
    with respect to the (valid rows of the) logits.

    Returns (loss, grad) with grad shaped (input_length, K).  Raises
    InfeasibleTargetError when the valid frame count cannot emit the
    target; use labeling_log_prob for a probability-0 query instead.
    """
    seq = _as_logit_seq(logits)
    target = tuple(int(s) for s in target)
    _check_labeling(target, seq.num_classes)
    t_len = seq.input_length
    need = min_input_length(target)
    if t_len < need:
        raise InfeasibleTargetError(len(target), need, t_len)
    if t_len == 0:  # empty target over zero frames: probability 1
        return 0.0, np.zeros((0, seq.num_classes))
    scores = np.asarray(seq.valid, dtype=np.float64)
    logp = log_softmax(scores)
    blank = seq.num_classes - 1
    ext = _extended(target, blank)
    alphas = _forward_alphas(logp, ext, blank)
    betas = _backward_betas(logp, ext, blank)
    L = len(ext)
    tail = alphas[t_len - 1, L - 1]
    if L > 1:
        tail = np.logaddexp(tail, alphas[t_len - 1, L - 2])
    log_total = float(tail)
    loss = -log_total
    # posterior mass per class: sum over lattice states with that symbol
    occupancy = alphas + betas  # (T, L) log of alpha*beta'
    grad = np.exp(logp)
    for k in np.unique(ext):
        cols = occupancy[:, ext == k]
        mass = np.logaddexp.reduce(cols, axis=1)
        grad[:, k] -= np.exp(mass - log_total)
    return loss, grad


def labeling_log_prob(logits, labeling):
    """log p(labeling | logits); -inf for labelings no path can emit."""
    seq = _as_logit_seq(logits)
    labeling = tuple(int(s) for s in labeling)
    _check_labeling(labeling, seq.num_classes)
    if seq.input_length < min_input_length(labeling):
        return NEG_INF
    if seq.input_length == 0:
        return 0.0
    blank = seq.num_classes - 1
    logp = log_softmax(np.asarray(seq.valid, dtype=np.float64))
    ext = _extended(labeling, blank)
    alphas = _forward_alphas(logp, ext, blank)
    total = alphas[seq.input_length - 1, len(ext) - 1]
    if len(ext) > 1:
        total = np.logaddexp(total, alphas[seq.input_length - 1, len(ext) - 2])
    return float(total)


def collapse_path(path, blank_id):
    """Alignment path -> labeling: merge adjacent repeats, drop blanks."""
    out = []
    prev = None
    for sym in path:
        if sym != prev and sym != blank_id:
            out.append(int(sym))
        prev = sym
    return tuple(out)


def greedy_decode(logits):
    """Best-path decoding: per-frame argmax (ties to the lowest class id),
    then collapse."""
    seq = _as_logit_seq(logits)
    if seq.input_length == 0:
        return ()
    path = np.argmax(seq.valid, axis=1)
    return collapse_path(path, seq.num_classes - 1)


def _beam_sort_key(item):
    prefix, (pb, pnb) = item
    return (-np.logaddexp(pb, pnb), len(prefix), prefix)


def beam_decode(logits, beam_size):
    """Prefix beam search over collapsed labelings.

    Blank-terminated and symbol-terminated mass is tracked separately per
    prefix so alignments that collapse to the same labeling merge.  The
    returned scores are the merged prefix log probabilities, sorted
    descending; ties order shorter-then-lexicographic for determinism.
    """
    if beam_size < 1:
        raise ConfigError(f"beam_size must be >= 1, got {beam_size}")
    seq = _as_logit_seq(logits)
    blank = seq.num_classes - 1
    logp = log_softmax(np.asarray(seq.valid, dtype=np.float64))
    beam = {(): (0.0, NEG_INF)}  # prefix -> (log p ending in blank, in symbol)
    for t in range(seq.input_length):
        row = logp[t]
        candidates = {}

        def bump(prefix, add_b, add_nb):
            pb, pnb = candidates.get(prefix, (NEG_INF, NEG_INF))
            candidates[prefix] = (np.logaddexp(pb, add_b), np.logaddexp(pnb, add_nb))

        for prefix, (pb, pnb) in beam.items():
            total = np.logaddexp(pb, pnb)
            bump(prefix, total + row[blank], NEG_INF)
            for sym in range(blank):
                p_sym = row[sym]
                if prefix and prefix[-1] == sym:
                    # repeat extends the symbol run; growing the labeling
                    # requires the blank-terminated share
                    bump(prefix, NEG_INF, pnb + p_sym)
                    bump(prefix + (sym,), NEG_INF, pb + p_sym)
                else:
                    bump(prefix + (sym,), NEG_INF, total + p_sym)
        ranked = sorted(candidates.items(), key=_beam_sort_key)
        beam = dict(ranked[:beam_size])
    final = sorted(beam.items(), key=_beam_sort_key)
    return [(prefix, float(np.logaddexp(pb, pnb))) for prefix, (pb, pnb) in final]


def enumerate_oracle(logits, max_T=8, max_V=4):
    """Exact labeling distribution by enumerating every alignment path.

    Refuses instances beyond max_T frames or max_V glosses; (V+1)**T paths
    are materialized.  Returns {labeling tuple: probability} over all
    labelings with nonzero mass plus the empty labeling.
    """
    seq = _as_logit_seq(logits)
    t_len = seq.input_length
    n_classes = seq.num_classes
    v = n_classes - 1
    if t_len > max_T or v > max_V:
        raise ConfigError(
            f"oracle limited to T <= {max_T}, V <= {max_V}; got T={t_len}, V={v}"
        )
    if v < 1:
        raise ConfigError("oracle needs at least one gloss class")
    probs = softmax_time_distributed(
        np.asarray(seq.valid, dtype=np.float64)
    )
    if t_len == 0:
        return {(): 1.0}
    # all paths, vectorized: mixed-radix enumeration of (V+1)^T symbols
    paths = np.indices((n_classes,) * t_len).reshape(t_len, -1).T
    path_probs = np.ones(paths.shape[0], dtype=np.float64)
    for t in range(t_len):
        path_probs *= probs[t, paths[:, t]]
    keep = np.ones(paths.shape, dtype=bool)
    keep[:, 1:] = paths[:, 1:] != paths[:, :-1]
    keep &= paths != v
    counts = keep.sum(axis=1)
    # encode each collapsed labeling as count * V^T + sum(sym * V^position)
    pos = np.cumsum(keep, axis=1) - 1
    powers = np.where(keep, v ** np.maximum(pos, 0), 0).astype(np.int64)
    digits = (paths * powers * keep).sum(axis=1)
    keys = counts.astype(np.int64) * (v ** t_len) + digits
    uniq, inverse = np.unique(keys, return_inverse=True)
    mass = np.bincount(inverse, weights=path_probs)
    dist = {}
    for key, p in zip(uniq, mass):
        count = int(key) // (v ** t_len)
        rest = int(key) % (v ** t_len)
        labeling = []
        for _ in range(count):
            labeling.append(rest % v)
            rest //= v
        dist[tuple(labeling)] = float(p)
    return dist


class Verdict(str, Enum):
    CORRECT = "correct"
    NETWORK_AT_FAULT = "network_at_fault"
    SEARCH_AT_FAULT = "search_at_fault"


@dataclass
class FaultDiagnosis:
    """Outcome of comparing the decoded labeling against the reference.

    A wrong decode with log p(reference) > log p(decoded) indicts the
    beam (a bigger beam could recover the reference); otherwise the
    network itself ranks the reference too low and needs more training.
    Equal scores count as network fault: beam growth cannot split a tie.
    """

    log_p_reference: float
    log_p_decoded: float
    decoded: tuple
    verdict: Verdict


def diagnose(logits, reference, beam_size):
    seq = _as_logit_seq(logits)
    reference = tuple(int(s) for s in reference)
    decoded = beam_decode(seq, beam_size)[0][0]
    log_ref = labeling_log_prob(seq, reference)
    log_dec = labeling_log_prob(seq, decoded)
    if decoded == reference:
        verdict = Verdict.CORRECT
    elif log_ref > log_dec:
        verdict = Verdict.SEARCH_AT_FAULT
    else:
        verdict = Verdict.NETWORK_AT_FAULT
    return FaultDiagnosis(log_ref, log_dec, decoded, verdict)
