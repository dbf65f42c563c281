"""LTL formula AST, parser and printer.

Grammar (EBNF)::

    formula := binary
    binary  := unary (("&&" | "||" | "->" | "U") unary)*
    unary   := ("!" | "G" | "F" | "X") unary | atom | "(" formula ")"
    atom    := [a-z_][a-z0-9_]*

Binary operators associate to the left at a single precedence level, so
``a && b || c`` reads as ``(a && b) || c``.  Unicode aliases are accepted
on input: ``□``/``◇`` for G/F, ``∧``/``∨`` for &&/||, ``→`` for -> and
``¬`` for !.  Parsing is whitespace-insensitive and ``parse(print
(f))`` returns a structurally equal tree.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, Union

Formula = Union[
    "Atom", "Not", "Next", "Always", "Eventually", "And", "Or", "Implies", "Until"
]


@dataclass(frozen=True)
class Atom:
    name: str


@dataclass(frozen=True)
class Not:
    sub: Formula


@dataclass(frozen=True)
class Next:
    sub: Formula


@dataclass(frozen=True)
class Always:
    sub: Formula


@dataclass(frozen=True)
class Eventually:
    sub: Formula


@dataclass(frozen=True)
class And:
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Or:
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Implies:
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Until:
    left: Formula
    right: Formula


_UNARY = {"!": Not, "G": Always, "F": Eventually, "X": Next}
_BINARY = {"&&": And, "||": Or, "->": Implies, "U": Until}


class LtlSyntaxError(SyntaxError):
    """Parse failure with position and the token set that was expected."""

    def __init__(self, message: str, line: int, column: int, expected: set[str]):
        super().__init__(f"{message} at line {line}, column {column}")
        self.line = line
        self.column = column
        self.expected = frozenset(expected)


_ALIASES = {
    "□": "G",
    "◇": "F",
    "∧": "&&",
    "∨": "||",
    "→": "->",
    "¬": "!",
}

_TOKEN_RE = re.compile(
    r"(?P<ws>\s+)"
    r"|(?P<atom>[a-z_][a-z0-9_]*)"
    r"|(?P<op>&&|\|\||->|[!GFXU()]|□|◇|∧|∨|→|¬)"
)


@dataclass(frozen=True)
class _Token:
    kind: str  # "atom", an operator literal, or "eof"
    text: str
    line: int
    column: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    line, col = 1, 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise LtlSyntaxError(
                f"unexpected character {text[pos]!r}", line, col,
                {"atom", "operator"},
            )
        lexeme = m.group(0)
        if m.lastgroup == "atom":
            tokens.append(_Token("atom", lexeme, line, col))
        elif m.lastgroup == "op":
            op = _ALIASES.get(lexeme, lexeme)
            tokens.append(_Token(op, lexeme, line, col))
        newlines = lexeme.count("\n")
        if newlines:
            line += newlines
            col = len(lexeme) - lexeme.rfind("\n")
        else:
            col += len(lexeme)
        pos = m.end()
    tokens.append(_Token("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def fail(self, expected: set[str]) -> "LtlSyntaxError":
        tok = self.peek()
        what = "end of input" if tok.kind == "eof" else repr(tok.text)
        return LtlSyntaxError(
            f"unexpected {what}", tok.line, tok.column, expected
        )

    def formula(self) -> Formula:
        node = self.unary()
        while self.peek().kind in _BINARY:
            op = self.advance().kind
            rhs = self.unary()
            node = _BINARY[op](node, rhs)
        return node

    def unary(self) -> Formula:
        tok = self.peek()
        if tok.kind in _UNARY:
            self.advance()
            return _UNARY[tok.kind](self.unary())
        if tok.kind == "atom":
            self.advance()
            return Atom(tok.text)
        if tok.kind == "(":
            self.advance()
            node = self.formula()
            if self.peek().kind != ")":
                raise self.fail({")"} | set(_BINARY))
            self.advance()
            return node
        raise self.fail({"atom", "(", "!", "G", "F", "X"})


def parse_ltl(text: str) -> Formula:
    """Parse ``text`` into a formula tree; raises LtlSyntaxError on failure."""
    parser = _Parser(_tokenize(text))
    node = parser.formula()
    if parser.peek().kind != "eof":
        raise parser.fail({"end of input"} | set(_BINARY))
    return node


def print_ltl(f: Formula) -> str:
    """Canonical text form; binary nodes are fully parenthesized."""
    if isinstance(f, Atom):
        return f.name
    if isinstance(f, Not):
        return "!" + print_ltl(f.sub)
    if isinstance(f, Always):
        return "G " + print_ltl(f.sub)
    if isinstance(f, Eventually):
        return "F " + print_ltl(f.sub)
    if isinstance(f, Next):
        return "X " + print_ltl(f.sub)
    for op, cls in _BINARY.items():
        if isinstance(f, cls):
            return f"({print_ltl(f.left)} {op} {print_ltl(f.right)})"
    raise TypeError(f"not a formula: {f!r}")


def conjuncts(f: Formula) -> list[Formula]:
    """Flatten nested conjunctions into the list of top-level conjuncts."""
    if isinstance(f, And):
        return conjuncts(f.left) + conjuncts(f.right)
    return [f]


def conjoin(parts: list[Formula]) -> Formula:
    """Left-associated conjunction of ``parts`` (must be non-empty)."""
    if not parts:
        raise ValueError("cannot conjoin zero formulas")
    node = parts[0]
    for p in parts[1:]:
        node = And(node, p)
    return node


def atoms(f: Formula) -> set[str]:
    """Names of all atomic propositions in the formula."""
    return {a.name for a in walk(f) if isinstance(a, Atom)}


def walk(f: Formula) -> Iterator[Formula]:
    yield f
    if isinstance(f, (Not, Next, Always, Eventually)):
        yield from walk(f.sub)
    elif isinstance(f, (And, Or, Implies, Until)):
        yield from walk(f.left)
        yield from walk(f.right)


def is_propositional(f: Formula) -> bool:
    """True when the formula contains no temporal operators."""
    return all(
        isinstance(n, (Atom, Not, And, Or, Implies)) for n in walk(f)
    )
