"""Dataset ingestion, answer judging, and accuracy reporting."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import IdMismatch, NoAnswerFound, SchemaError
from .parsing import AnswerPattern, extract_answer, parse_number
from .pipeline import RunTrace

NUMERIC_TOLERANCE = 1e-4
CHOICE_LETTERS = "ABCDEFGH"


@dataclass(frozen=True)
class DatasetRecord:
    record_id: str
    question: str
    gold: str
    rationale: str = ""
    choices: tuple[str, ...] = ()


@dataclass
class EvalReport:
    dataset: str
    method: str
    n_total: int
    n_correct: int
    verdicts: dict[str, bool] = field(default_factory=dict)
    config_hash: str = ""

    @property
    def accuracy(self) -> float | None:
        if self.n_total == 0:
            return None
        return 100.0 * self.n_correct / self.n_total

    @property
    def accuracy_text(self) -> str:
        acc = self.accuracy
        return "—" if acc is None else f"{acc:.2f}"

    def to_json(self) -> str:
        return json.dumps(
            {
                "dataset": self.dataset,
                "method": self.method,
                "n_total": self.n_total,
                "n_correct": self.n_correct,
                "accuracy": self.accuracy_text,
                "verdicts": self.verdicts,
                "config_hash": self.config_hash,
            },
            sort_keys=True,
        )


DEFAULT_FORMAT = {
    "id": "id",
    "question": "question",
    "gold": "answer",
    "rationale": "rationale",
    "choices": "choices",
}


def load_dataset(path: str, format_spec: dict | None = None) -> list[DatasetRecord]:
    """Load JSON-lines records with a per-dataset field mapping."""
    spec = dict(DEFAULT_FORMAT)
    if format_spec:
        spec.update(format_spec)
    records = []
    seen: set[str] = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"line {lineno}: invalid JSON ({exc})")
            missing = [
                f for f in ("id", "question", "gold") if spec[f] not in raw
            ]
            if missing:
                raise SchemaError(
                    f"line {lineno}: missing field(s) "
                    + ", ".join(spec[f] for f in missing)
                )
            record_id = str(raw[spec["id"]])
            if record_id in seen:
                raise SchemaError(f"line {lineno}: duplicate id {record_id!r}")
            seen.add(record_id)
            records.append(
                DatasetRecord(
                    record_id,
                    str(raw[spec["question"]]),
                    str(raw[spec["gold"]]),
                    str(raw.get(spec["rationale"], "") or ""),
                    tuple(raw.get(spec["choices"], ()) or ()),
                )
            )
    return records


def numbers_match(a: str, b: str, tolerance: float = NUMERIC_TOLERANCE) -> bool:
    try:
        return abs(float(parse_number(a) - parse_number(b))) <= tolerance
    except ValueError:
        return False


def judge(
    response: str,
    record: DatasetRecord,
    pattern: AnswerPattern,
    scorer=None,
    length_normalized: bool = True,
) -> bool:
    """Verdict for one response against the record's gold answer.

    Numeric answers compare within absolute tolerance; keywords compare
    case-insensitively; choice datasets pick the choice with the best
    per-token log-probability as a continuation of the question.
    """
    if pattern.kind == "choice-ppl":
        if scorer is None:
            raise ValueError("choice-ppl judging requires a scorer")
        if not record.choices:
            raise SchemaError(f"record {record.record_id} has no choices")
        context = f"Question: {record.question}\nAnswer: "
        best_idx, best = 0, float("-inf")
        for i, choice in enumerate(record.choices):
            logprobs = scorer.score_continuation(context, choice)
            score = sum(logprobs)
            if length_normalized and logprobs:
                score /= len(logprobs)
            if score > best:
                best_idx, best = i, score
        picked = CHOICE_LETTERS[best_idx]
        return picked.lower() == record.gold.strip().lower()
    try:
        answer = extract_answer(response, pattern)
    except NoAnswerFound:
        return False
    if numbers_match(answer, record.gold):
        return True
    return answer.strip().lower() == record.gold.strip().lower()


def report(
    traces: list[RunTrace],
    dataset: str,
    records: dict[str, DatasetRecord] | None = None,
    method: str = "",
    config_hash: str = "",
) -> EvalReport:
    """Aggregate per-question verdicts into an accuracy report."""
    verdicts = {}
    for trace in traces:
        if records is not None and trace.question_id not in records:
            raise IdMismatch(f"trace id {trace.question_id!r} not in dataset")
        verdicts[trace.question_id] = bool(trace.correct)
    return EvalReport(
        dataset=dataset,
        method=method,
        n_total=len(verdicts),
        n_correct=sum(verdicts.values()),
        verdicts=verdicts,
        config_hash=config_hash,
    )


def grid_table(reports: list[EvalReport]) -> str:
    """Aligned plain-text grid, one row per (method, dataset) report."""
    rows = [("Method", "Dataset", "N", "Accuracy")]
    for rep in reports:
        rows.append((rep.method, rep.dataset, str(rep.n_total), rep.accuracy_text))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
