"""Pixelwise color-rule fire detection.

Rules are written in a small ASCII grammar::

    expr      := term ("|" term)*
    term      := factor ("&" factor)*
    factor    := "(" expr ")" | predicate
    predicate := operand (">" | "<") number
    operand   := band | "(" band "-" band ")" | band "-" band | "r(" INT "," INT ")"
    band      := "b" INT

``bN`` is the reflectance in rule band N and ``r(I,J)`` the ratio bI/bJ. All
comparisons are strict. A ratio predicate is false wherever the denominator
is <= 0.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Optional, Union

import numpy as np

from .errors import ConfigError, RuleSyntaxError
from .raster_io import MaskImage, RasterImage

SCHROEDER_RULE_TEXT = (
    "(r(7,5) > 2.5 & (b7 - b5) > 0.3 & b7 > 0.5) | "
    "(b6 > 0.8 & b1 < 0.2 & (b5 > 0.4 | b7 < 0.1))"
)

# rule band (Landsat-8 numbering) -> AMS band, by wavelength proximity
SCHROEDER_AMS_MAPPING = {1: 2, 5: 7, 6: 9, 7: 10}


# -- scalar reference --------------------------------------------------------

@dataclass
class PixelSpectrum:
    rho: dict

    def ratio(self, i, j):
        if not self.rho[j] > 0:
            raise ValueError(f"R({i},{j}) undefined: rho_{j} <= 0")
        return self.rho[i] / self.rho[j]


def schroeder_predicates(pixel: PixelSpectrum) -> dict:
    r = pixel.rho
    for band in (1, 5, 6, 7):
        if band not in r:
            raise ConfigError(f"Schroeder rule needs band {band}")
    return {
        "R75>2.5": r[5] > 0 and pixel.ratio(7, 5) > 2.5,
        "b7-b5>0.3": r[7] - r[5] > 0.3,
        "b7>0.5": r[7] > 0.5,
        "b6>0.8": r[6] > 0.8,
        "b1<0.2": r[1] < 0.2,
        "b5>0.4": r[5] > 0.4,
        "b7<0.1": r[7] < 0.1,
    }


def schroeder_rule(pixel: PixelSpectrum) -> bool:
    """Unambiguous-fire test on one pixel (rule-band numbering)."""
    p = schroeder_predicates(pixel)
    clause1 = p["R75>2.5"] and p["b7-b5>0.3"] and p["b7>0.5"]
    clause2 = p["b6>0.8"] and p["b1<0.2"] and (p["b5>0.4"] or p["b7<0.1"])
    return bool(clause1 or clause2)


# -- expression tree ---------------------------------------------------------

@dataclass(frozen=True)
class Pred:
    kind: str  # "band" | "diff" | "ratio"
    i: int
    j: Optional[int]
    op: str  # ">" | "<"
    value: float

    def bands(self):
        return {self.i} if self.j is None else {self.i, self.j}


@dataclass(frozen=True)
class And:
    children: tuple

    def bands(self):
        return set().union(*(c.bands() for c in self.children))


@dataclass(frozen=True)
class Or:
    children: tuple

    def bands(self):
        return set().union(*(c.bands() for c in self.children))


RuleExpr = Union[Pred, And, Or]


def format_rule(expr: RuleExpr) -> str:
    """Canonical text; ``parse_rule(format_rule(e)) == e``."""
    if isinstance(expr, Pred):
        if expr.kind == "band":
            lhs = f"b{expr.i}"
        elif expr.kind == "diff":
            lhs = f"(b{expr.i} - b{expr.j})"
        else:
            lhs = f"r({expr.i},{expr.j})"
        return f"{lhs} {expr.op} {expr.value!r}"
    sep = " & " if isinstance(expr, And) else " | "
    parts = []
    for child in expr.children:
        text = format_rule(child)
        parts.append(f"({text})" if not isinstance(child, Pred) else text)
    return sep.join(parts)


_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?)"
    r"|(?P<band>b\d+)|(?P<ratio>r)|(?P<sym>[()<>&|,\-]))"
)


def _tokenize(text):
    tokens, pos = [], 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            if text[pos:].strip() == "":
                break
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise RuleSyntaxError(f"unexpected character {text[bad]!r}", bad)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def advance(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        tok = self.advance()
        if tok[1] != value:
            found = tok[1] or "end of input"
            raise RuleSyntaxError(f"expected {value!r}, found {found!r}", tok[2])
        return tok

    def parse(self):
        expr = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise RuleSyntaxError(f"unexpected {tok[1]!r}", tok[2])
        return expr

    def expr(self):
        terms = [self.term()]
        while self.peek()[1] == "|":
            self.advance()
            terms.append(self.term())
        return terms[0] if len(terms) == 1 else Or(tuple(terms))

    def term(self):
        factors = [self.factor()]
        while self.peek()[1] == "&":
            self.advance()
            factors.append(self.factor())
        return factors[0] if len(factors) == 1 else And(tuple(factors))

    def factor(self):
        if self.peek()[1] == "(":
            save = self.i
            try:
                return self.predicate()
            except RuleSyntaxError:
                self.i = save
            self.advance()
            inner = self.expr()
            self.expect(")")
            return inner
        return self.predicate()

    def band(self):
        tok = self.advance()
        if tok[0] != "band":
            raise RuleSyntaxError(f"expected band like 'b7', found {tok[1] or 'end of input'!r}", tok[2])
        return int(tok[1][1:])

    def integer(self):
        tok = self.advance()
        if tok[0] != "num" or not tok[1].isdigit():
            raise RuleSyntaxError("expected band number", tok[2])
        return int(tok[1])

    def operand(self):
        tok = self.peek()
        if tok[0] == "ratio":
            self.advance()
            self.expect("(")
            i = self.integer()
            self.expect(",")
            j = self.integer()
            self.expect(")")
            return "ratio", i, j
        if tok[1] == "(":
            self.advance()
            kind, i, j = self.operand()
            self.expect(")")
            return kind, i, j
        i = self.band()
        if self.peek()[1] == "-":
            self.advance()
            return "diff", i, self.band()
        return "band", i, None

    def number(self):
        sign = 1.0
        if self.peek()[1] == "-":
            self.advance()
            sign = -1.0
        tok = self.advance()
        if tok[0] != "num":
            raise RuleSyntaxError(f"expected number, found {tok[1] or 'end of input'!r}", tok[2])
        return sign * float(tok[1])

    def predicate(self):
        kind, i, j = self.operand()
        tok = self.advance()
        if tok[1] not in (">", "<"):
            raise RuleSyntaxError(f"expected '>' or '<', found {tok[1] or 'end of input'!r}", tok[2])
        return Pred(kind, i, j, tok[1], self.number())


def parse_rule(text: str) -> RuleExpr:
    return _Parser(text).parse()


SCHROEDER_RULE = parse_rule(SCHROEDER_RULE_TEXT)


# -- evaluation --------------------------------------------------------------

def _compare(lhs, op, value):
    return lhs > value if op == ">" else lhs < value


def evaluate_rule(expr: RuleExpr, rho: Mapping):
    """Evaluate over ``rho`` (rule band -> float or array); returns bool or bool array."""
    if isinstance(expr, Pred):
        a = np.asarray(rho[expr.i], dtype=np.float64)
        if expr.kind == "band":
            return _compare(a, expr.op, expr.value)
        b = np.asarray(rho[expr.j], dtype=np.float64)
        if expr.kind == "diff":
            return _compare(a - b, expr.op, expr.value)
        valid = b > 0
        # a tiny positive denominator may overflow to inf, which compares correctly
        with np.errstate(over="ignore"):
            ratio = np.divide(a, b, out=np.zeros(np.broadcast(a, b).shape), where=valid)
        return valid & _compare(ratio, expr.op, expr.value)
    results = [evaluate_rule(c, rho) for c in expr.children]
    combine = np.logical_and if isinstance(expr, And) else np.logical_or
    out = results[0]
    for r in results[1:]:
        out = combine(out, r)
    return out


class BandMapping(dict):
    """Rule band index -> raster band index."""

    @classmethod
    def identity(cls, bands=range(1, 13)):
        return cls({b: b for b in bands})

    @classmethod
    def schroeder_ams(cls):
        return cls(SCHROEDER_AMS_MAPPING)


def _rho_planes(image: RasterImage, expr: RuleExpr, mapping: Mapping):
    missing = sorted(b for b in expr.bands() if b not in mapping)
    if missing:
        raise ConfigError(f"band mapping has no entry for rule band(s) {missing}")
    planes = {}
    for rule_band in expr.bands():
        try:
            planes[rule_band] = image.band(mapping[rule_band]).astype(np.float64)
        except KeyError:
            raise ConfigError(f"image lacks band {mapping[rule_band]} (rule band {rule_band})") from None
    return planes


def apply_rule(image: RasterImage, expr: RuleExpr = SCHROEDER_RULE,
               mapping: Optional[Mapping] = None) -> MaskImage:
    """Vectorized per-pixel rule evaluation; returns a binary mask."""
    if isinstance(expr, str):
        expr = parse_rule(expr)
    if image.units_state != "normalized":
        raise ConfigError("rules are applied to normalized reflectance")
    mapping = BandMapping.schroeder_ams() if mapping is None else mapping
    hit = evaluate_rule(expr, _rho_planes(image, expr, mapping))
    return MaskImage(np.asarray(hit, dtype=np.uint8))


def pixel_spectrum(image: RasterImage, row: int, col: int, mapping: Mapping) -> PixelSpectrum:
    return PixelSpectrum({rb: float(image.band(ab)[row, col]) for rb, ab in mapping.items()})
