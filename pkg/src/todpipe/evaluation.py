"""Evaluation harness: intent P/R/F1, corpus BLEU-4, dialog success, combined.

Intent metrics are micro-averaged over label instances across turns; the
catch-all "Other" counts as a label like any other. BLEU-4 is corpus-level
and unsmoothed: geometric mean of modified 1..4-gram precisions with a
brevity penalty, scaled to 0..100, and exactly 0 when any precision is 0.
A dialog succeeds when every KB-bearing turn's generated response contains
each gold KB value verbatim; dialogs without KB-bearing turns leave the
denominator.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .corpus import Dialog
from .errors import LengthMismatchError
from .text import segment


@dataclass(frozen=True)
class Prf:
    precision: float
    recall: float
    f1: float


def _prf(tp: int, fp: int, fn: int) -> Prf:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return Prf(p, r, f)


def intent_prf(predicted: list[set], gold: list[set]) -> Prf:
    """Micro-averaged precision/recall/F1 over per-turn label sets."""
    if len(predicted) != len(gold):
        raise LengthMismatchError(
            f"{len(predicted)} predictions vs {len(gold)} gold turns"
        )
    tp = fp = fn = 0
    for pred, ref in zip(predicted, gold):
        tp += len(pred & ref)
        fp += len(pred - ref)
        fn += len(ref - pred)
    return _prf(tp, fp, fn)


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(hypotheses: list[str], references: list[str]) -> float:
    """Corpus-level unsmoothed BLEU-4 on a 0..100 scale; one reference each."""
    if len(hypotheses) != len(references):
        raise LengthMismatchError(
            f"{len(hypotheses)} hypotheses vs {len(references)} references"
        )
    clipped = [0] * 4
    totals = [0] * 4
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_toks = segment(hyp)
        ref_toks = segment(ref)
        hyp_len += len(hyp_toks)
        ref_len += len(ref_toks)
        for n in range(1, 5):
            hyp_counts = _ngrams(hyp_toks, n)
            if not hyp_counts:
                continue
            ref_counts = _ngrams(ref_toks, n)
            totals[n - 1] += sum(hyp_counts.values())
            clipped[n - 1] += sum(
                min(count, ref_counts[gram]) for gram, count in hyp_counts.items()
            )
    if hyp_len == 0:
        return 0.0
    precisions = [c / t if t else 0.0 for c, t in zip(clipped, totals)]
    if any(p == 0.0 for p in precisions):
        return 0.0
    bp = min(1.0, math.exp(1.0 - ref_len / hyp_len))
    return 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / 4.0)


def sentence_bleu4_smoothed(hypothesis: str, reference: str) -> float:
    """Diagnostic only: add-one smoothed sentence-level BLEU-4, 0..100."""
    hyp_toks = segment(hypothesis)
    ref_toks = segment(reference)
    if not hyp_toks:
        return 0.0
    log_p = 0.0
    for n in range(1, 5):
        hyp_counts = _ngrams(hyp_toks, n)
        ref_counts = _ngrams(ref_toks, n)
        total = sum(hyp_counts.values())
        clip = sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
        log_p += math.log((clip + 1.0) / (total + 1.0)) / 4.0
    bp = min(1.0, math.exp(1.0 - len(ref_toks) / len(hyp_toks)))
    return 100.0 * bp * math.exp(log_p)


@dataclass(frozen=True)
class SuccessResult:
    rate: float
    defined: bool
    n_dialogs: int
    n_success: int


def success_rate(dialogs: list[Dialog], responses: dict[tuple[str, int], str]) -> SuccessResult:
    """Fraction of KB-bearing dialogs whose gold KB values all appear verbatim."""
    n_counted = 0
    n_success = 0
    for dialog in dialogs:
        kb_turns = [t for t in dialog.turns if t.gold_kb_triples]
        if not kb_turns:
            continue
        n_counted += 1
        ok = True
        for turn in kb_turns:
            response = responses.get((dialog.dialog_id, turn.turn_index), "")
            for _, _, value in turn.gold_kb_triples:
                if value not in response:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            n_success += 1
    if n_counted == 0:
        return SuccessResult(rate=0.0, defined=False, n_dialogs=0, n_success=0)
    return SuccessResult(rate=n_success / n_counted, defined=True,
                         n_dialogs=n_counted, n_success=n_success)


@dataclass
class MetricsReport:
    ui: Prf
    si: Prf
    slot_f1: float
    bleu4: float
    success: SuccessResult
    combined: float = 0.0
    success_oracle: SuccessResult | None = None

    def to_dict(self) -> dict:
        doc = {
            "ui": {"precision": self.ui.precision, "recall": self.ui.recall, "f1": self.ui.f1},
            "si": {"precision": self.si.precision, "recall": self.si.recall, "f1": self.si.f1},
            "slot_f1": self.slot_f1,
            "bleu4": self.bleu4,
            "success_rate": self.success.rate,
            "success_defined": self.success.defined,
            "combined": self.combined,
        }
        if self.success_oracle is not None:
            doc["success_rate_oracle"] = self.success_oracle.rate
            doc["success_oracle_defined"] = self.success_oracle.defined
        return doc

    @staticmethod
    def from_dict(doc: dict) -> "MetricsReport":
        oracle = None
        if "success_rate_oracle" in doc:
            oracle = SuccessResult(doc["success_rate_oracle"],
                                   doc.get("success_oracle_defined", True), 0, 0)
        return MetricsReport(
            ui=Prf(**doc["ui"]),
            si=Prf(**doc["si"]),
            slot_f1=doc["slot_f1"],
            bleu4=doc["bleu4"],
            success=SuccessResult(doc["success_rate"], doc["success_defined"], 0, 0),
            combined=doc["combined"],
            success_oracle=oracle,
        )


def combined(report: MetricsReport, weights: tuple[float, float, float, float] = (1, 1, 1, 1)) -> float:
    """w_ui*UI_F1 + w_si*SI_F1 + w_bleu*(BLEU/100) + w_succ*success."""
    w_ui, w_si, w_bleu, w_succ = weights
    return (w_ui * report.ui.f1 + w_si * report.si.f1
            + w_bleu * report.bleu4 / 100.0 + w_succ * report.success.rate)


def render_report(report: MetricsReport) -> str:
    header = (f"{'':10s}{'UI-P':>8s}{'UI-R':>8s}{'UI-F1':>8s}"
              f"{'SI-P':>8s}{'SI-R':>8s}{'SI-F1':>8s}"
              f"{'SlotF1':>8s}{'BLEU-4':>8s}{'Succ':>8s}{'Comb':>8s}")
    succ = f"{report.success.rate:8.3f}" if report.success.defined else f"{'n/a':>8s}"
    row = (f"{'system':10s}{report.ui.precision:8.3f}{report.ui.recall:8.3f}"
           f"{report.ui.f1:8.3f}{report.si.precision:8.3f}{report.si.recall:8.3f}"
           f"{report.si.f1:8.3f}{report.slot_f1:8.3f}{report.bleu4:8.2f}"
           f"{succ}{report.combined:8.3f}")
    lines = [header, row]
    if report.success_oracle is not None:
        oracle = (f"{report.success_oracle.rate:.3f}"
                  if report.success_oracle.defined else "n/a")
        lines.append(f"{'oracle-intent success:':24s}{oracle}")
    return "\n".join(lines) + "\n"


def save_report(report: MetricsReport, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(report.to_dict(), ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )


def _slot_set(entries: list) -> set:
    out: set = set()
    for entry in entries:
        if isinstance(entry, str):
            out.add(entry)
        else:
            coarse, fine = entry
            out.add((coarse, fine))
    return out


def evaluate_records(
    records: list[dict],
    dialogs: list[Dialog],
    weights: tuple[float, float, float, float] = (1, 1, 1, 1),
    oracle_records: list[dict] | None = None,
) -> MetricsReport:
    """Score per-turn prediction records against gold dialogs.

    Every gold turn must have exactly one record (matched on dialog id and
    turn index); a mismatch raises LengthMismatchError.
    """
    by_key = {(r["dialog_id"], r["turn_index"]): r for r in records}
    gold_turns = [(d.dialog_id, t) for d in dialogs for t in d.turns]
    if len(by_key) != len(records):
        raise LengthMismatchError("duplicate (dialog_id, turn_index) in records")
    if len(records) != len(gold_turns):
        raise LengthMismatchError(
            f"{len(records)} records vs {len(gold_turns)} gold turns"
        )
    pred_ui, gold_ui, pred_si, gold_si = [], [], [], []
    pred_slot, gold_slot = [], []
    hyps, refs = [], []
    responses: dict[tuple[str, int], str] = {}
    for dialog_id, turn in gold_turns:
        key = (dialog_id, turn.turn_index)
        if key not in by_key:
            raise LengthMismatchError(f"no record for turn {key}")
        rec = by_key[key]
        pred_ui.append(set(rec["ui"]))
        gold_ui.append(set(turn.user_intents))
        pred_si.append(set(rec.get("si_pre", rec.get("si", []))))
        gold_si.append(set(turn.service_intents))
        pred_slot.append(_slot_set(rec.get("slots", [])))
        gold_slot.append(set(turn.slot_labels))
        hyps.append(rec.get("response", ""))
        refs.append(turn.system_response)
        responses[key] = rec.get("response", "")

    report = MetricsReport(
        ui=intent_prf(pred_ui, gold_ui),
        si=intent_prf(pred_si, gold_si),
        slot_f1=intent_prf(pred_slot, gold_slot).f1,
        bleu4=bleu4(hyps, refs),
        success=success_rate(dialogs, responses),
    )
    if oracle_records is not None:
        oracle_responses = {
            (r["dialog_id"], r["turn_index"]): r.get("response", "")
            for r in oracle_records
        }
        report.success_oracle = success_rate(dialogs, oracle_responses)
    report.combined = combined(report, weights)
    return report
