"""Owner-side matching of a verified request against the portfolio."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .query import QuerySyntaxError, conditions_hold, parse_terms
from .tickets import DataObjectTicket, VerifiedRequest

log = logging.getLogger(__name__)


@dataclass
class Match:
    dots: list[DataObjectTicket] = field(default_factory=list)
    warning: str | None = None

    def __iter__(self):
        return iter(self.dots)

    def __len__(self) -> int:
        return len(self.dots)


def match_request(
    portfolio: Sequence[DataObjectTicket],
    profile: Mapping[str, str],
    vreq: VerifiedRequest,
) -> Match:
    """DOTs whose metadata satisfies the query, in portfolio order.

    Nothing matches when the owner's profile fails the request conditions.
    An unparseable query yields an empty match with ``warning`` set.
    """
    try:
        terms = parse_terms(vreq.rt.query)
    except QuerySyntaxError as exc:
        log.warning("request %s: %s", vreq.rt.request_id, exc)
        return Match(warning=str(exc))
    if not conditions_hold(vreq.rt.conditions, profile):
        return Match()
    return Match([d for d in portfolio if all(t.holds(d.metadata) for t in terms)])
