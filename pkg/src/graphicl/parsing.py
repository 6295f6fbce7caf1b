"""Turn raw text into equations, deductive steps, and extracted answers.

Covers expression tokenization, shunting-yard conversion to RPN, equation
extraction from model responses (marker line or inline scan), deductive trace
parsing, and final-answer extraction by per-dataset patterns.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources

from .errors import (
    DanglingOperator,
    IllegalCharacter,
    NoAnswerFound,
    UnbalancedParens,
)

OPERATORS = "+-*/^"
PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 3}
RIGHT_ASSOC = {"^"}


# ---------------------------------------------------------------------------
# Numeric canonicalization
# ---------------------------------------------------------------------------

_NUMBER_RE = re.compile(
    r"\$?(-?)(?:(\d{1,3}(?:,\d{3})+|\d+)(\.\d+)?|(\.\d+))%?"
)


def parse_number(text: str) -> Fraction:
    """Parse a numeric literal, tolerating $, thousands commas, and %."""
    m = _NUMBER_RE.fullmatch(text.strip())
    if m is None:
        raise ValueError(f"not a number: {text!r}")
    sign, intpart, fracpart, barefrac = m.groups()
    if barefrac is not None:
        value = Fraction(int(barefrac[1:]), 10 ** (len(barefrac) - 1))
    else:
        value = Fraction(int(intpart.replace(",", "")))
        if fracpart:
            digits = fracpart[1:]
            value += Fraction(int(digits), 10 ** len(digits))
    return -value if sign else value


def canonical_label(value: Fraction) -> str:
    """Canonical text for an exact rational: int, terminating decimal, or n/d."""
    if value.denominator == 1:
        return str(value.numerator)
    den = value.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den == 1:
        places = max(twos, fives)
        scaled = value * 10**places
        digits = str(abs(scaled.numerator)).rjust(places + 1, "0")
        sign = "-" if value < 0 else ""
        out = f"{sign}{digits[:-places]}.{digits[-places:]}"
        return out.rstrip("0").rstrip(".") if "." in out else out
    return f"{value.numerator}/{value.denominator}"


# ---------------------------------------------------------------------------
# Tokens and tokenization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Token:
    kind: str  # NUM | VAR | OP | LPAREN | RPAREN
    text: str
    value: Fraction | None = None

    def __repr__(self):
        return f"Token({self.kind}:{self.text})"


_ANNOTATION_RE = re.compile(r"<<[^<>]*>>")
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUM_SCAN_RE = re.compile(
    r"\$?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?%?|\$?\.\d+%?"
)


def tokenize_expression(text: str) -> list[Token]:
    """Tokenize an arithmetic expression into NUM/VAR/operator/paren tokens.

    Numeric canonicalization (currency, commas, percent, calculator
    annotations) is applied here; unary minus is folded into the literal so
    every surviving operator is binary.
    """
    text = _ANNOTATION_RE.sub(" ", text)
    tokens: list[Token] = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch == "(":
            tokens.append(Token("LPAREN", "("))
            i += 1
            continue
        if ch == ")":
            tokens.append(Token("RPAREN", ")"))
            i += 1
            continue
        if ch == "-" and _folds_unary(tokens):
            m = _NUM_SCAN_RE.match(text, i + 1)
            if m:
                value = -parse_number(m.group(0))
                tokens.append(Token("NUM", canonical_label(value), value))
                i = m.end()
                continue
            # leave as binary operator; RPN arity check rejects misuse
        if ch in OPERATORS:
            tokens.append(Token("OP", ch))
            i += 1
            continue
        m = _NUM_SCAN_RE.match(text, i)
        if m:
            value = parse_number(m.group(0))
            tokens.append(Token("NUM", canonical_label(value), value))
            i = m.end()
            continue
        m = _IDENT_RE.match(text, i)
        if m:
            tokens.append(Token("VAR", m.group(0)))
            i = m.end()
            continue
        exc = IllegalCharacter(f"illegal character {ch!r} at position {i}")
        exc.position = i
        raise exc
    return tokens


def _folds_unary(tokens: list[Token]) -> bool:
    if not tokens:
        return True
    return tokens[-1].kind in ("OP", "LPAREN")


# ---------------------------------------------------------------------------
# Shunting-yard
# ---------------------------------------------------------------------------


def to_rpn(tokens: list[Token]) -> list[Token]:
    """Convert infix tokens to Reverse Polish Notation.

    Precedence ^ > * / > + -, left-associative except ^. The output contains
    no parentheses.
    """
    output: list[Token] = []
    stack: list[Token] = []
    for tok in tokens:
        if tok.kind in ("NUM", "VAR"):
            output.append(tok)
        elif tok.kind == "OP":
            prec = PRECEDENCE[tok.text]
            while stack and stack[-1].kind == "OP":
                top = PRECEDENCE[stack[-1].text]
                if top > prec or (top == prec and tok.text not in RIGHT_ASSOC):
                    output.append(stack.pop())
                else:
                    break
            stack.append(tok)
        elif tok.kind == "LPAREN":
            stack.append(tok)
        elif tok.kind == "RPAREN":
            while stack and stack[-1].kind != "LPAREN":
                output.append(stack.pop())
            if not stack:
                raise UnbalancedParens("unmatched ')'")
            stack.pop()
    while stack:
        top = stack.pop()
        if top.kind == "LPAREN":
            raise UnbalancedParens("unmatched '('")
        output.append(top)
    _check_arity(output)
    return output


def _check_arity(rpn: list[Token]) -> None:
    depth = 0
    for tok in rpn:
        if tok.kind in ("NUM", "VAR"):
            depth += 1
        else:
            depth -= 1
            if depth < 1:
                raise DanglingOperator(f"operator {tok.text!r} lacks operands")
    if depth != 1:
        raise DanglingOperator("expression does not reduce to a single value")


def eval_rpn(rpn: list[Token], env: dict[str, Fraction] | None = None) -> Fraction:
    """Evaluate an RPN token list over exact rationals."""
    stack: list[Fraction] = []
    for tok in rpn:
        if tok.kind == "NUM":
            stack.append(tok.value)
        elif tok.kind == "VAR":
            if env is None or tok.text not in env:
                raise ValueError(f"unbound variable {tok.text!r}")
            stack.append(env[tok.text])
        else:
            r = stack.pop()
            l = stack.pop()
            stack.append(_apply(tok.text, l, r))
    return stack[0]


def _apply(op: str, l: Fraction, r: Fraction) -> Fraction:
    if op == "+":
        return l + r
    if op == "-":
        return l - r
    if op == "*":
        return l * r
    if op == "/":
        return l / r
    if op == "^":
        if r.denominator != 1:
            raise ValueError("non-integer exponent")
        return l**int(r)
    raise ValueError(f"unknown operator {op!r}")


# ---------------------------------------------------------------------------
# Equation extraction from responses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Equation:
    """One extracted equation: an expression side and a declared answer."""

    expression: tuple[Token, ...]
    answer: str
    source_span: tuple[int, int] | None = None

    @property
    def answer_value(self) -> Fraction | None:
        try:
            return parse_number(self.answer)
        except ValueError:
            return None


_MARKER_RE = re.compile(r"^\s*calcul?ation equations:\s*(.*)$", re.IGNORECASE)
_ATOM_RHS_RE = re.compile(
    r"\s*(\$?-?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?%?|\$?-?\.\d+%?|[A-Za-z_][A-Za-z0-9_]*)"
)
_EXPR_CHARS = set("0123456789.,$% ^*/+-()_\tABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz")


def extract_equations(response: str) -> list[Equation]:
    return extract_equations_detailed(response)[0]


def render_equation(eq: Equation) -> str:
    return "".join(t.text for t in eq.expression) + "=" + eq.answer


def render_equations(equations: list[Equation]) -> str:
    """Marker-line rendering; re-extraction yields the same equation list."""
    return "Calculation equations: " + ",".join(render_equation(e) for e in equations)


def extract_equations_detailed(response: str) -> tuple[list[Equation], int]:
    """Extract equations from a response; returns (equations, skipped count).

    If a "Calculation equations:" marker line is present (also the prompt's
    "Calcuation" spelling), its comma-separated entries are used; otherwise
    the full text is scanned for inline expr=answer arithmetic, including
    <<...>> calculator annotations. Unparseable fragments are skipped.
    """
    for line in response.splitlines():
        m = _MARKER_RE.match(line)
        if m:
            return _from_marker_line(m.group(1))
    return _inline_scan(response)


def _from_marker_line(body: str) -> tuple[list[Equation], int]:
    equations = []
    skipped = 0
    for fragment in body.split(","):
        eq = _parse_equation_string(fragment)
        if eq is None:
            skipped += 1
        else:
            equations.append(eq)
    return equations, skipped


def _parse_equation_string(text: str, span=None) -> Equation | None:
    text = text.strip()
    if "=" not in text:
        return None
    expr_text, answer_text = text.rsplit("=", 1)
    answer_text = answer_text.strip().rstrip(".")
    try:
        tokens = tokenize_expression(expr_text)
        to_rpn(tokens)  # validates shape
        answer = _canonical_answer(answer_text)
    except (IllegalCharacter, UnbalancedParens, DanglingOperator, ValueError):
        return None
    if not tokens or answer is None:
        return None
    return Equation(tuple(tokens), answer, span)


def _canonical_answer(text: str) -> str | None:
    try:
        return canonical_label(parse_number(text))
    except ValueError:
        pass
    if _IDENT_RE.fullmatch(text):
        return text
    return None


def _inline_scan(response: str) -> tuple[list[Equation], int]:
    text = _ANNOTATION_RE.sub(" ", response)
    equations = []
    skipped = 0
    pos = 0
    while True:
        eq_idx = text.find("=", pos)
        if eq_idx < 0:
            break
        left = _walk_left(text, eq_idx)
        m = _ATOM_RHS_RE.match(text, eq_idx + 1)
        if m is None:
            pos = eq_idx + 1
            continue
        rhs = m.group(1)
        after = m.end()
        # compound right side (e.g. "=66+126") is not a declared answer
        rest = text[after : after + 12].lstrip()
        if rest[:1] in OPERATORS and len(rest) > 1 and (rest[1].isdigit() or rest[1] in " .$("):
            skipped += 1
            pos = after
            continue
        expr_text = _best_expression_suffix(left)
        if expr_text is None:
            skipped += 1
            pos = after
            continue
        eq = _parse_equation_string(
            f"{expr_text}={rhs}", span=(eq_idx - len(left), after)
        )
        if eq is None:
            skipped += 1
        else:
            equations.append(eq)
        pos = after
    return equations, skipped


def _walk_left(text: str, eq_idx: int) -> str:
    start = eq_idx
    while start > 0:
        ch = text[start - 1]
        if ch in _EXPR_CHARS and ch != "\n" and ch != "=":
            start -= 1
        else:
            break
    return text[start:eq_idx]


def _best_expression_suffix(fragment: str) -> str | None:
    """Longest token suffix of the fragment that forms a valid expression."""
    tokens = None
    while fragment:
        try:
            tokens = tokenize_expression(fragment)
            break
        except IllegalCharacter as exc:
            # prose punctuation (e.g. a sentence period) ends the usable suffix
            fragment = fragment[exc.position + 1 :]
    if not fragment or tokens is None:
        return None
    for start in range(len(tokens)):
        sub = tokens[start:]
        try:
            to_rpn(list(sub))
        except (UnbalancedParens, DanglingOperator):
            continue
        return " ".join(t.text for t in sub)
    return None


# ---------------------------------------------------------------------------
# Deductive traces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeductiveStep:
    index: int
    cited: tuple[int, ...] = ()
    text: str = ""


_STEP_RE = re.compile(r"^\s*#(\d+)\.\s*(?:\(\s*(?:by\s*)?((?:#\d+[\s,]*)+)\))?\s*(.*)$")
_CITE_RE = re.compile(r"#(\d+)")


def parse_deductive_trace(response: str) -> list[DeductiveStep]:
    return parse_deductive_trace_detailed(response)[0]


def parse_deductive_trace_detailed(response: str) -> tuple[list[DeductiveStep], int]:
    """Parse `#<n>. (by #a #b)` statement lines; returns (steps, skipped)."""
    steps: list[DeductiveStep] = []
    skipped = 0
    for line in response.splitlines():
        m = _STEP_RE.match(line)
        if m is None:
            continue
        index = int(m.group(1))
        if steps and index <= steps[-1].index:
            skipped += 1
            continue
        cited = ()
        if m.group(2):
            cited = tuple(int(c) for c in _CITE_RE.findall(m.group(2)))
        steps.append(DeductiveStep(index, cited, m.group(3).strip()))
    return steps, skipped


# ---------------------------------------------------------------------------
# Answer extraction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AnswerPattern:
    dataset: str
    kind: str  # "regex" | "choice-ppl"
    pattern: str = ""

    def __post_init__(self):
        if self.kind == "regex":
            re.compile(self.pattern)


def load_answer_patterns() -> dict[str, AnswerPattern]:
    """Per-dataset answer patterns shipped as a config asset."""
    raw = resources.files("graphicl.assets").joinpath("answer_patterns.json")
    data = json.loads(raw.read_text())
    patterns = {}
    for name, entry in data.items():
        patterns[name] = AnswerPattern(name, entry["kind"], entry.get("pattern", ""))
    return patterns


def extract_answer(response: str, pattern: AnswerPattern) -> str:
    """Extract the final answer from a response per the dataset pattern.

    Numeric patterns return the last number (canonicalized); keyword patterns
    return the last keyword occurrence, lowercased.
    """
    if pattern.kind != "regex":
        raise ValueError("choice-ppl patterns are scored in the eval module")
    if pattern.pattern.endswith("$"):
        m = re.search(pattern.pattern, response)
        if m is None:
            raise NoAnswerFound(f"no {pattern.dataset} answer in response")
        return canonical_label(parse_number(m.group(1)))
    matches = re.findall(pattern.pattern, response, re.IGNORECASE)
    if not matches:
        raise NoAnswerFound(f"no {pattern.dataset} answer in response")
    last = matches[-1]
    if isinstance(last, tuple):
        last = last[0]
    return last.lower()
