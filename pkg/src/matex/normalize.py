"""Deterministic parsing and canonicalization of compositions, phase labels,
and unit-bearing quantities.

Everything here is a pure function over tables shipped as data files
(atomic_masses.txt, phase_aliases.txt). Hedged source text ("~75 nm",
"less than 5%") parses into a qualified quantity rather than an invented
exact value; purely qualitative text ("very fine") raises NotQuantifiable.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources

from .errors import EmptyInput, NotQuantifiable, ParseError, UnknownElement

UNIT_TAGS = ("MPa", "HV", "°C", "h", "nm", "%", "at%")

PHASE_CODES = ("FCC", "BCC", "HCP", "L12", "L21", "B2", "gamma_dprime", "sigma",
               "mu", "Laves", "eta", "epsilon", "carbide", "oxide", "mixed", "other")


def _load_table(name: str) -> dict[str, str]:
    text = resources.files("matex.data").joinpath(name).read_text(encoding="utf-8")
    table: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition(" ")
        table[key] = value.strip()
    return table


ATOMIC_MASSES: dict[str, float] = {k: float(v) for k, v in _load_table("atomic_masses.txt").items()}
PHASE_ALIASES: dict[str, str] = _load_table("phase_aliases.txt")


# --- quantities -------------------------------------------------------------

@dataclass(frozen=True)
class NormalizedQuantity:
    """A magnitude in a canonical unit plus how the source hedged it."""

    magnitude: float
    unit: str
    qualifier: str = "exact"  # exact | approximate | bound_below | bound_above | range
    range_lo: float | None = None
    range_hi: float | None = None
    uncertainty: float | None = None

    def render(self) -> str:
        """Canonical text form; reparsing it reproduces this quantity."""
        fmt = _render_number
        if self.qualifier == "range":
            return f"{fmt(self.range_lo)} to {fmt(self.range_hi)} {self.unit}"
        if self.qualifier == "approximate":
            return f"~{fmt(self.magnitude)} {self.unit}"
        if self.qualifier == "bound_above":
            return f"<{fmt(self.magnitude)} {self.unit}"
        if self.qualifier == "bound_below":
            return f">{fmt(self.magnitude)} {self.unit}"
        if self.uncertainty is not None:
            return f"{fmt(self.magnitude)} ± {fmt(self.uncertainty)} {self.unit}"
        return f"{fmt(self.magnitude)} {self.unit}"


def _render_number(value: float | None) -> str:
    # lossless: repr round-trips floats exactly, integral values drop the ".0"
    v = float(value)  # type: ignore[arg-type]
    return str(int(v)) if v.is_integer() else repr(v)


# unit spellings -> (canonical tag, factor applied to the magnitude)
_UNIT_ALIASES: dict[str, tuple[str, float]] = {
    "mpa": ("MPa", 1.0),
    "gpa": ("MPa", 1000.0),
    "hv": ("HV", 1.0),
    "°c": ("°C", 1.0),
    "℃": ("°C", 1.0),
    "degc": ("°C", 1.0),
    "deg c": ("°C", 1.0),
    "celsius": ("°C", 1.0),
    "c": ("°C", 1.0),
    "h": ("h", 1.0),
    "hr": ("h", 1.0),
    "hrs": ("h", 1.0),
    "hour": ("h", 1.0),
    "hours": ("h", 1.0),
    "min": ("h", 1.0 / 60.0),
    "mins": ("h", 1.0 / 60.0),
    "minute": ("h", 1.0 / 60.0),
    "minutes": ("h", 1.0 / 60.0),
    "nm": ("nm", 1.0),
    "μm": ("nm", 1000.0),
    "µm": ("nm", 1000.0),
    "um": ("nm", 1000.0),
    "%": ("%", 1.0),
    "vol%": ("%", 1.0),
    "vol.%": ("%", 1.0),
    "at%": ("at%", 1.0),
    "at.%": ("at%", 1.0),
}

_NUM = r"[+-]?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?"

_APPROX_WORDS = r"(?:~|∼|≈|approximately|approx\.?|about|around|ca\.?)"
_ABOVE_WORDS = r"(?:less\s+than|at\s+most|below|up\s+to|<|≤|⩽)"
_BELOW_WORDS = r"(?:more\s+than|greater\s+than|at\s+least|above|over|exceeding|>|≥|⩾)"

_RANGE_RE = re.compile(
    rf"(?:between\s+)?({_NUM})\s*(?:to|and|[-–—])\s*({_NUM})\s*(?P<unit>.*)$", re.IGNORECASE)
_PM_RE = re.compile(rf"({_NUM})\s*(?:±|\+/-|\+-)\s*({_NUM})\s*(?P<unit>.*)$", re.IGNORECASE)
_APPROX_RE = re.compile(rf"{_APPROX_WORDS}\s*({_NUM})\s*(?P<unit>.*)$", re.IGNORECASE)
_ABOVE_RE = re.compile(rf"{_ABOVE_WORDS}\s*({_NUM})\s*(?P<unit>.*)$", re.IGNORECASE)
_BELOW_RE = re.compile(rf"{_BELOW_WORDS}\s*({_NUM})\s*(?P<unit>.*)$", re.IGNORECASE)
_PLAIN_RE = re.compile(rf"({_NUM})\s*(?P<unit>.*)$")


def _canonical_unit(token: str, default_unit: str | None) -> tuple[str, float]:
    token = token.strip().rstrip(".,;:)")
    if not token:
        if default_unit is not None:
            return default_unit, 1.0
        raise ParseError(f"missing unit in quantity: {token!r}")
    key = token.strip().lower()
    if key in _UNIT_ALIASES:
        return _UNIT_ALIASES[key]
    raise ParseError(f"unrecognized unit {token!r}")


def canonicalize_quantity(raw: str, default_unit: str | None = None) -> NormalizedQuantity:
    """Parse hedged quantity text into a NormalizedQuantity.

    "~X" is approximate, "X ± Y" exact with recorded uncertainty, "A to B" a
    range represented by its midpoint, "less than X" / "more than X" bounds.
    GPa, μm, and min convert to MPa, nm, and h. Raises NotQuantifiable for
    text with no number and ParseError for decimal commas or unknown units.
    """
    text = raw.strip()
    if re.search(r"\d,\d", text):
        raise ParseError(f"decimal/thousands comma rejected: {raw!r}")
    if not re.search(r"\d", text):
        raise NotQuantifiable(f"no numeric content: {raw!r}")

    m = _PM_RE.match(text)
    if m:
        unit, factor = _canonical_unit(m.group("unit"), default_unit)
        return NormalizedQuantity(float(m.group(1)) * factor, unit,
                                  uncertainty=float(m.group(2)) * factor)
    m = _RANGE_RE.match(text)
    if m:
        lo, hi = float(m.group(1)), float(m.group(2))
        if lo >= hi:
            raise ParseError(f"range bounds out of order: {raw!r}")
        unit, factor = _canonical_unit(m.group("unit"), default_unit)
        lo, hi = lo * factor, hi * factor
        return NormalizedQuantity((lo + hi) / 2.0, unit, "range", range_lo=lo, range_hi=hi)
    for pattern, qualifier in ((_APPROX_RE, "approximate"),
                               (_ABOVE_RE, "bound_above"),
                               (_BELOW_RE, "bound_below")):
        m = pattern.match(text)
        if m:
            unit, factor = _canonical_unit(m.group("unit"), default_unit)
            return NormalizedQuantity(float(m.group(1)) * factor, unit, qualifier)
    m = _PLAIN_RE.match(text)
    if m:
        unit, factor = _canonical_unit(m.group("unit"), default_unit)
        return NormalizedQuantity(float(m.group(1)) * factor, unit)
    raise NotQuantifiable(f"no recognized quantity pattern: {raw!r}")


# --- formulas ---------------------------------------------------------------

_BASIS_RE = re.compile(r"\(?\s*(at|wt)\.?\s*%\s*\)?\s*$", re.IGNORECASE)
_TOKEN_RE = re.compile(r"([A-Z][a-z]?)(\d+(?:\.\d+)?)?")


def parse_formula(text: str) -> dict[str, float]:
    """Parse a subscripted alloy formula into an element -> at.% map.

    Accepts an optional trailing basis marker ("(at.%)" or "(wt.%)");
    weight-percent input is converted to atomic percent. Bare stoichiometric
    subscripts normalize so the output sums to 100. Elements not present are
    implicitly zero.
    """
    stripped = text.strip()
    if not stripped:
        raise EmptyInput("empty formula")
    basis = "at"
    m = _BASIS_RE.search(stripped)
    if m:
        basis = m.group(1).lower()
        stripped = stripped[: m.start()].strip()

    amounts: dict[str, float] = {}
    pos = 0
    while pos < len(stripped):
        if stripped[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(stripped, pos)
        if not m:
            raise ParseError(f"malformed formula at {stripped[pos:pos + 4]!r}",
                             span=(pos, min(pos + 4, len(stripped))))
        symbol = m.group(1)
        if symbol not in ATOMIC_MASSES:
            raise ParseError(f"unknown element symbol {symbol!r}", span=(m.start(1), m.end(1)))
        amount = float(m.group(2)) if m.group(2) else 1.0
        if amount <= 0:
            raise ParseError(f"non-positive amount for {symbol}", span=(m.start(), m.end()))
        amounts[symbol] = amounts.get(symbol, 0.0) + amount
        pos = m.end()

    if not amounts:
        raise ParseError("no elements in formula", span=(0, len(text)))
    if basis == "wt":
        return convert_wt_to_at(amounts)
    total = sum(amounts.values())
    return {el: 100.0 * n / total for el, n in amounts.items()}


def convert_wt_to_at(weights: dict[str, float]) -> dict[str, float]:
    """Weight-percent -> atomic-percent via standard atomic masses."""
    if not weights:
        raise EmptyInput("empty composition")
    moles: dict[str, float] = {}
    for el, wt in weights.items():
        if el not in ATOMIC_MASSES:
            raise UnknownElement(f"no atomic mass for {el!r}")
        moles[el] = wt / ATOMIC_MASSES[el]
    total = sum(moles.values())
    return {el: 100.0 * n / total for el, n in moles.items()}


def convert_at_to_wt(atoms: dict[str, float]) -> dict[str, float]:
    """Inverse of convert_wt_to_at; exists for round-trip testing."""
    if not atoms:
        raise EmptyInput("empty composition")
    masses: dict[str, float] = {}
    for el, at in atoms.items():
        if el not in ATOMIC_MASSES:
            raise UnknownElement(f"no atomic mass for {el!r}")
        masses[el] = at * ATOMIC_MASSES[el]
    total = sum(masses.values())
    return {el: 100.0 * m / total for el, m in masses.items()}


# --- phase labels -----------------------------------------------------------

@dataclass(frozen=True)
class PhaseCode:
    """Canonical phase label; unmapped labels keep their verbatim text."""

    code: str
    label: str | None = None

    @classmethod
    def other(cls, label: str) -> "PhaseCode":
        return cls("other", label)


_GREEK = {
    "α": "alpha", "β": "beta", "γ": "gamma", "δ": "delta", "ε": "epsilon",
    "η": "eta", "λ": "lambda", "μ": "mu", "µ": "mu", "σ": "sigma", "τ": "tau",
    "χ": "chi", "ω": "omega",
}
_PRIMES = {"′": "'", "’": "'", "`": "'", "″": "''", "‶": "''", "‴": "'''"}
_SUBSCRIPTS = str.maketrans("₀₁₂₃₄₅₆₇₈₉", "0123456789")


def fold_phase_label(label: str) -> str:
    """Typographic folding only: greek spellings, primes, subscripts, case,
    separators. No crystallographic equivalences."""
    s = label.strip().translate(_SUBSCRIPTS)
    for src, dst in _PRIMES.items():
        s = s.replace(src, dst)
    s = s.replace('"', "''")
    out = []
    for ch in s:
        out.append(_GREEK.get(ch, ch))
    s = "".join(out).lower()
    s = re.sub(r"\b(phases?)\s*$", "", s).strip()
    s = re.sub(r"[\s\-_]+", "", s)
    return s


def phase_code(label: str) -> PhaseCode:
    """Map a free-text phase label onto the closed code set (total function).

    A label of the form "A/B" where both halves are known codes maps to
    ``mixed``; anything unmapped becomes other(label) verbatim.
    """
    folded = fold_phase_label(label)
    if folded in PHASE_ALIASES:
        return PhaseCode(PHASE_ALIASES[folded])
    if "/" in folded:
        parts = folded.split("/")
        if len(parts) == 2 and all(p in PHASE_ALIASES for p in parts):
            return PhaseCode("mixed")
    return PhaseCode.other(label)


def phase_codes_equal(a: str, b: str) -> bool:
    """Whether two verbatim phase labels canonicalize to the same code."""
    ca, cb = phase_code(a), phase_code(b)
    if ca.code != cb.code:
        return False
    if ca.code == "other":
        return fold_phase_label(ca.label or "") == fold_phase_label(cb.label or "")
    return True
