"""Word error rate, minimal edit alignments, dataset evaluation, and
report rendering."""

import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

from .ctc import Verdict, beam_decode, diagnose, greedy_decode
from .dataio import batch_iter
from .errors import ConfigError, DataError, UndefinedMetricError


@dataclass
class EditAlignment:
    """Minimal substitution/deletion/insertion counts between a reference
    and a hypothesis; N is the reference length."""

    substitutions: int
    deletions: int
    insertions: int
    reference_length: int

    @property
    def errors(self):
        return self.substitutions + self.deletions + self.insertions


def edit_alignment(reference, hypothesis):
    """Levenshtein alignment with unit costs.

    Among minimum-cost alignments the one with fewer insertions wins,
    then fewer deletions; the tie-break fixes the reported counts without
    touching the WER value.
    """
    ref = tuple(reference)
    hyp = tuple(hypothesis)
    n, m = len(ref), len(hyp)
    # dp[i][j]: best (cost, insertions, deletions) aligning ref[:i] to hyp[:j]
    dp = [[None] * (m + 1) for _ in range(n + 1)]
    dp[0][0] = (0, 0, 0)
    for i in range(1, n + 1):
        dp[i][0] = (i, 0, i)
    for j in range(1, m + 1):
        dp[0][j] = (j, j, 0)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            c, ins, dele = dp[i - 1][j - 1]
            sub = 0 if ref[i - 1] == hyp[j - 1] else 1
            best = (c + sub, ins, dele)
            c, ins, dele = dp[i][j - 1]
            cand = (c + 1, ins + 1, dele)
            if cand < best:
                best = cand
            c, ins, dele = dp[i - 1][j]
            cand = (c + 1, ins, dele + 1)
            if cand < best:
                best = cand
            dp[i][j] = best
    cost, insertions, deletions = dp[n][m]
    return EditAlignment(
        substitutions=cost - insertions - deletions,
        deletions=deletions,
        insertions=insertions,
        reference_length=n,
    )


def _round_percent(value):
    return float(Decimal(value * 100).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def wer(alignments):
    """Aggregate word error rate over a split, as a percentage with one
    decimal: sum(S + D + I) / sum(N) * 100."""
    alignments = list(alignments)
    total_ref = sum(a.reference_length for a in alignments)
    if total_ref == 0:
        raise UndefinedMetricError("WER undefined: no reference words in the split")
    total_err = sum(a.errors for a in alignments)
    return _round_percent(total_err / total_ref)


@dataclass
class SentenceEval:
    sid: str
    reference: list       # gloss strings
    hypothesis: list
    substitutions: int
    deletions: int
    insertions: int
    reference_length: int
    verdict: str

    def to_dict(self):
        return {
            "id": self.sid,
            "ref": self.reference,
            "hyp": self.hypothesis,
            "S": self.substitutions,
            "D": self.deletions,
            "I": self.insertions,
            "N": self.reference_length,
            "verdict": self.verdict,
        }

    @classmethod
    def from_dict(cls, obj):
        return cls(obj["id"], obj["ref"], obj["hyp"], obj["S"], obj["D"],
                   obj["I"], obj["N"], obj["verdict"])


@dataclass
class EvalReport:
    split: str
    wer_percent: float
    sentences: list = field(default_factory=list)
    beam_size: int = 1

    @property
    def verdict_tallies(self):
        tallies = {v.value: 0 for v in Verdict}
        for s in self.sentences:
            tallies[s.verdict] += 1
        return tallies

    def to_dict(self):
        return {
            "split": self.split,
            "wer_percent": self.wer_percent,
            "sentences": [s.to_dict() for s in self.sentences],
            "beam_size": self.beam_size,
        }

    @classmethod
    def from_dict(cls, obj):
        return cls(
            split=obj["split"],
            wer_percent=obj["wer_percent"],
            sentences=[SentenceEval.from_dict(s) for s in obj["sentences"]],
            beam_size=obj["beam_size"],
        )


def evaluate_model(model, dataset, beam_size=8, decoder="beam", batch_size=16):
    """Decode every sentence, align against the references, aggregate WER,
    and tag each sentence with a beam-vs-network fault verdict."""
    if model.config.vocab_size != len(dataset.vocabulary):
        raise DataError(
            f"vocabulary mismatch: model expects {model.config.vocab_size} glosses, "
            f"dataset has {len(dataset.vocabulary)}"
        )
    if decoder not in ("beam", "greedy"):
        raise ConfigError(f"decoder must be 'beam' or 'greedy', got {decoder!r}")
    from .models import model_forward

    vocab = dataset.vocabulary
    sentences = []
    alignments = []
    kind = model.config.input_kind
    for batch in batch_iter(dataset, batch_size, shuffle_seed=None, kind=kind):
        for seq, sid, ref in zip(
            model_forward(model, batch, mode="infer"),
            batch.ids,
            [tuple(batch.targets[b, : batch.target_lengths[b]]) for b in range(len(batch.ids))],
        ):
            if decoder == "beam":
                hyp = beam_decode(seq, beam_size)[0][0]
            else:
                hyp = greedy_decode(seq)
            alignment = edit_alignment(ref, hyp)
            alignments.append(alignment)
            if hyp == ref:
                verdict = Verdict.CORRECT
            else:
                verdict = diagnose(seq, ref, beam_size).verdict
            sentences.append(SentenceEval(
                sid=sid,
                reference=vocab.decode(ref),
                hypothesis=vocab.decode(hyp),
                substitutions=alignment.substitutions,
                deletions=alignment.deletions,
                insertions=alignment.insertions,
                reference_length=alignment.reference_length,
                verdict=verdict.value,
            ))
    return EvalReport(
        split=dataset.split_name,
        wer_percent=wer(alignments),
        sentences=sentences,
        beam_size=beam_size,
    )


def render_report(reports, fmt="text"):
    """Render one or more split reports.

    text: a Dev/Test WER table (absent splits show "-"); json: the
    schema-stable report objects, a list when several are given.
    """
    if isinstance(reports, EvalReport):
        reports = [reports]
    reports = list(reports)
    if fmt == "json":
        payload = [r.to_dict() for r in reports]
        obj = payload[0] if len(payload) == 1 else payload
        return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8")
    if fmt != "text":
        raise ConfigError(f"format must be 'text' or 'json', got {fmt!r}")
    by_split = {r.split.lower(): r for r in reports}
    columns = ["dev", "test"] + sorted(k for k in by_split if k not in ("dev", "test"))
    header = " | ".join(f"{c.capitalize()}(WER)" for c in columns)
    values = []
    for c in columns:
        r = by_split.get(c)
        values.append("-" if r is None else f"{r.wer_percent:.1f}")
    row = " | ".join(f"{v:<{len(c) + 5}}" for v, c in zip(values, columns))
    lines = [header, "-" * len(header), row]
    for r in reports:
        tallies = r.verdict_tallies
        lines.append(
            f"{r.split}: WER {r.wer_percent:.1f} (beam {r.beam_size}) "
            f"correct={tallies['correct']} "
            f"network_at_fault={tallies['network_at_fault']} "
            f"search_at_fault={tallies['search_at_fault']}"
        )
    return ("\n".join(lines) + "\n").encode("utf-8")
