"""Option-quote snapshots: ingestion, validation, canonical ordering, depth limits.

A snapshot is one trading date's listed puts and calls for a single expiry,
together with the market observables (index level, risk-free rate, volatility
index) needed downstream. Quotes are kept in a canonical order: strike
ascending, puts before calls at equal strikes, so matrix layouts built from a
snapshot are reproducible byte for byte.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PUT = "P"
CALL = "C"

_QUOTE_FIELDS = ["trade_date", "expiry_date", "kind", "strike", "bid", "ask", "bid_size", "ask_size"]
_OBS_FIELDS = ["trade_date", "index_level", "risk_free_rate", "vol_index", "trading_days_to_expiry"]


class DataError(Exception):
    """Base class for ingestion failures."""


class ParseError(DataError):
    """Malformed file or row."""


class ValidationError(DataError):
    """Row parsed but violates a quote/snapshot invariant."""


class EmptyFilterError(DataError):
    """No quotes survive the moneyness filter."""


@dataclass(frozen=True)
class OptionQuote:
    """One listed option: best bid/ask with sizes.

    ``ask`` is the price paid for a long position, ``bid`` the price received
    for a short position. ``kind`` is ``"P"`` or ``"C"``.
    """

    strike: float
    kind: str
    bid: float
    ask: float
    bid_size: float
    ask_size: float

    def __post_init__(self) -> None:
        if self.kind not in (PUT, CALL):
            raise ValidationError(f"kind must be 'P' or 'C', got {self.kind!r}")
        if not self.strike > 0:
            raise ValidationError(f"strike must be positive, got {self.strike}")
        if self.bid < 0 or self.ask <= 0 or self.ask < self.bid:
            raise ValidationError(
                f"prices must satisfy ask >= bid >= 0 and ask > 0 "
                f"(strike {self.strike}{self.kind}: bid={self.bid}, ask={self.ask})"
            )
        if self.bid_size < 0 or self.ask_size < 0:
            raise ValidationError(f"sizes must be nonnegative (strike {self.strike}{self.kind})")

    @property
    def is_call(self) -> bool:
        return self.kind == CALL


@dataclass(frozen=True)
class MoneynessFilter:
    """Retain strikes within [lower, upper] fractions of the current index."""

    lower: float = 0.90
    upper: float = 1.05

    def __post_init__(self) -> None:
        if not (0.0 < self.lower < 1.0 < self.upper):
            raise ValidationError(f"need 0 < lower < 1 < upper, got [{self.lower}, {self.upper}]")

    def admits(self, strike: float, index_level: float) -> bool:
        return self.lower * index_level <= strike <= self.upper * index_level


@dataclass(frozen=True)
class MarketSnapshot:
    """One date's canonical option book plus market observables."""

    trade_date: dt.date
    expiry_date: dt.date
    index_level: float
    risk_free_rate: float
    vol_index: float
    trading_days_to_expiry: int
    quotes: tuple[OptionQuote, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.expiry_date <= self.trade_date:
            raise ValidationError(f"expiry {self.expiry_date} not after trade date {self.trade_date}")
        if self.trading_days_to_expiry < 1:
            raise ValidationError("trading_days_to_expiry must be >= 1")
        if self.index_level <= 0:
            raise ValidationError("index_level must be positive")
        key = [(q.strike, q.is_call) for q in self.quotes]
        if key != sorted(key):
            raise ValidationError("quotes must be sorted by strike, puts before calls at equal strikes")

    @property
    def n_options(self) -> int:
        return len(self.quotes)

    @property
    def strikes(self) -> np.ndarray:
        return np.array([q.strike for q in self.quotes])

    @property
    def is_call(self) -> np.ndarray:
        """Indicator d_i: 1 for calls, 0 for puts."""
        return np.array([q.is_call for q in self.quotes], dtype=bool)

    @property
    def bids(self) -> np.ndarray:
        return np.array([q.bid for q in self.quotes])

    @property
    def asks(self) -> np.ndarray:
        return np.array([q.ask for q in self.quotes])

    @property
    def strike_range(self) -> tuple[float, float]:
        if not self.quotes:
            raise ValidationError("snapshot has no quotes")
        return self.quotes[0].strike, self.quotes[-1].strike

    @property
    def calendar_days_to_expiry(self) -> int:
        return (self.expiry_date - self.trade_date).days


def canonical_order(quotes: Iterable[OptionQuote]) -> tuple[OptionQuote, ...]:
    """Sort by strike ascending, put before call at equal strike (stable)."""
    return tuple(sorted(quotes, key=lambda q: (q.strike, q.is_call)))


@dataclass(frozen=True)
class MarketObservables:
    trade_date: dt.date
    index_level: float
    risk_free_rate: float
    vol_index: float
    trading_days_to_expiry: int


def _parse_date(text: str, path: Path, line: int) -> dt.date:
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError as exc:
        raise ParseError(f"{path}:{line}: bad date {text!r}: {exc}") from None


def _parse_float(text: str, path: Path, line: int, col: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"{path}:{line}: column {col}: not a number: {text!r}") from None


def _reader(path: Path, expected: Sequence[str]):
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        try:
            header = next(rows)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header != list(expected):
            raise ParseError(f"{path}: expected header {','.join(expected)}, got {','.join(header)}")
        for i, row in enumerate(rows, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(expected):
                raise ParseError(f"{path}:{i}: expected {len(expected)} fields, got {len(row)}")
            yield i, row


def load_observables(path: str | Path) -> dict[dt.date, MarketObservables]:
    """Read the market-observables CSV keyed by trade date."""
    path = Path(path)
    out: dict[dt.date, MarketObservables] = {}
    for line, row in _reader(path, _OBS_FIELDS):
        date = _parse_date(row[0], path, line)
        if date in out:
            raise ParseError(f"{path}:{line}: duplicate trade_date {date}")
        tdays = _parse_float(row[4], path, line, "trading_days_to_expiry")
        if tdays != int(tdays):
            raise ParseError(f"{path}:{line}: trading_days_to_expiry must be an integer")
        out[date] = MarketObservables(
            trade_date=date,
            index_level=_parse_float(row[1], path, line, "index_level"),
            risk_free_rate=_parse_float(row[2], path, line, "risk_free_rate"),
            vol_index=_parse_float(row[3], path, line, "vol_index"),
            trading_days_to_expiry=int(tdays),
        )
    return out


def load_exclusions(path: str | Path) -> set[tuple[dt.date, str, float]]:
    """Read an exclusion list: quotes to drop, keyed (trade_date, kind, strike)."""
    path = Path(path)
    out: set[tuple[dt.date, str, float]] = set()
    for line, row in _reader(path, ["trade_date", "kind", "strike"]):
        kind = row[1].strip().upper()
        if kind not in (PUT, CALL):
            raise ParseError(f"{path}:{line}: kind must be P or C, got {row[1]!r}")
        out.add((_parse_date(row[0], path, line), kind, _parse_float(row[2], path, line, "strike")))
    return out


def _quote_rows(path: Path):
    for line, row in _reader(path, _QUOTE_FIELDS):
        trade = _parse_date(row[0], path, line)
        expiry = _parse_date(row[1], path, line)
        kind = row[2].strip().upper()
        if kind not in (PUT, CALL):
            raise ParseError(f"{path}:{line}: kind must be P or C, got {row[2]!r}")
        nums = [_parse_float(row[i], path, line, _QUOTE_FIELDS[i]) for i in range(3, 8)]
        yield line, trade, expiry, kind, nums


def load_snapshot(
    quotes_path: str | Path,
    observables: dict[dt.date, MarketObservables] | str | Path,
    moneyness: MoneynessFilter = MoneynessFilter(),
    trade_date: dt.date | None = None,
    exclusions: set[tuple[dt.date, str, float]] | None = None,
) -> MarketSnapshot:
    """Load, filter and canonically order one snapshot from the quote CSV.

    The quote file may hold several trade dates; pass ``trade_date`` to select
    one (required in that case). Raises ``EmptyFilterError`` when no quote
    survives the moneyness filter.
    """
    snaps = load_snapshots(quotes_path, observables, moneyness, exclusions=exclusions, dates=(trade_date,) if trade_date else None)
    if trade_date is None and len(snaps) != 1:
        raise ParseError(f"{quotes_path}: {len(snaps)} trade dates present; pass trade_date to select one")
    return snaps[0] if trade_date is None else next(s for s in snaps if s.trade_date == trade_date)


def load_snapshots(
    quotes_path: str | Path,
    observables: dict[dt.date, MarketObservables] | str | Path,
    moneyness: MoneynessFilter = MoneynessFilter(),
    exclusions: set[tuple[dt.date, str, float]] | None = None,
    dates: Sequence[dt.date] | None = None,
) -> list[MarketSnapshot]:
    """Load every trade date in the quote CSV as a filtered snapshot, sorted by date."""
    quotes_path = Path(quotes_path)
    if not isinstance(observables, dict):
        observables = load_observables(observables)
    exclusions = exclusions or set()

    grouped: dict[dt.date, list[OptionQuote]] = {}
    expiries: dict[dt.date, dt.date] = {}
    for line, trade, expiry, kind, (strike, bid, ask, bid_size, ask_size) in _quote_rows(quotes_path):
        if dates is not None and trade not in dates:
            continue
        if expiries.setdefault(trade, expiry) != expiry:
            raise ValidationError(f"{quotes_path}:{line}: multiple expiries for trade date {trade}")
        if (trade, kind, strike) in exclusions:
            continue
        grouped.setdefault(trade, []).append(
            OptionQuote(strike=strike, kind=kind, bid=bid, ask=ask, bid_size=bid_size, ask_size=ask_size)
        )

    if dates is not None:
        missing = [d for d in dates if d not in grouped]
        if missing:
            raise ParseError(f"{quotes_path}: no quotes for trade date(s) {', '.join(map(str, missing))}")

    out = []
    for trade in sorted(grouped):
        if trade not in observables:
            raise ValidationError(f"no observables row for trade date {trade}")
        obs = observables[trade]
        kept = [q for q in grouped[trade] if moneyness.admits(q.strike, obs.index_level)]
        if not kept:
            raise EmptyFilterError(
                f"{trade}: no quotes within [{moneyness.lower}, {moneyness.upper}] of index {obs.index_level}"
            )
        out.append(
            MarketSnapshot(
                trade_date=trade,
                expiry_date=expiries[trade],
                index_level=obs.index_level,
                risk_free_rate=obs.risk_free_rate,
                vol_index=obs.vol_index,
                trading_days_to_expiry=obs.trading_days_to_expiry,
                quotes=canonical_order(kept),
            )
        )
    return out


def apply_depth_constraint(snapshot: MarketSnapshot, scale: int) -> tuple[np.ndarray, np.ndarray]:
    """Position caps (v, w) = quoted (ask, bid) sizes divided by the market scale S.

    ``v`` caps long positions, ``w`` caps short positions; entries are real
    numbers (fractional contracts are allowed in the optimization).
    """
    if scale <= 0:
        raise ValidationError(f"scale must be a positive integer, got {scale}")
    v = np.array([q.ask_size for q in snapshot.quotes], dtype=float) / scale
    w = np.array([q.bid_size for q in snapshot.quotes], dtype=float) / scale
    return v, w


def write_snapshot_csv(snapshots: Iterable[MarketSnapshot], path: str | Path) -> None:
    """Serialize snapshots back to the quote CSV schema (round-trip format)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_QUOTE_FIELDS)
        for snap in snapshots:
            for q in snap.quotes:
                writer.writerow(
                    [
                        snap.trade_date.isoformat(),
                        snap.expiry_date.isoformat(),
                        q.kind,
                        repr(q.strike),
                        repr(q.bid),
                        repr(q.ask),
                        repr(q.bid_size),
                        repr(q.ask_size),
                    ]
                )
