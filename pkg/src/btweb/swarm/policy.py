"""The serve decision: who gets a piece and who gets a refusal.

Checks run in a fixed order: share ratio, then transfer cap, then the
rate limiter.  The limiter runs last because it consumes byte credits;
a request doomed by ratio or cap must not burn bandwidth budget.
Publishers are exempt from the ratio check only: a freshly published
site starts at downloaded == 0 and could otherwise never be seeded.
"""

from __future__ import annotations

from ..store.profile import ProfileStore
from ..store.settings import Settings
from .messages import REFUSE_CAP, REFUSE_MISSING, REFUSE_RATIO, REFUSE_THROTTLE
from .ratelimit import TokenBucket
from .session import TransferStats


class ServeRefusal(Exception):
    code = b""

    def __init__(self, message: str = "", retry_after: float | None = None):
        super().__init__(message or self.code.decode())
        self.retry_after = retry_after


class RatioExceeded(ServeRefusal):
    code = REFUSE_RATIO


class CapExceeded(ServeRefusal):
    code = REFUSE_CAP


class Throttled(ServeRefusal):
    code = REFUSE_THROTTLE


class MissingPiece(ServeRefusal):
    code = REFUSE_MISSING


def check_serve(
    length: int,
    *,
    stats: TransferStats,
    settings: Settings,
    publisher: bool,
    bucket: TokenBucket,
    total_uploaded: int,
    now: float,
) -> None:
    """Raise the applicable refusal; return silently when serving is allowed.
    On success the rate limiter has already debited `length` bytes."""
    limit = settings.share_ratio_limit
    if limit is not None and not publisher and not stats.uploaded < limit * stats.downloaded:
        raise RatioExceeded(
            f"uploaded {stats.uploaded} of {limit} * {stats.downloaded} allowed"
        )
    cap = settings.transfer_cap
    if cap is not None and total_uploaded + length > cap:
        raise CapExceeded(f"{total_uploaded} + {length} exceeds cap {cap}")
    if settings.upload_rate is not None and not bucket.try_take(length, now):
        raise Throttled(retry_after=bucket.retry_after(length, now))


def serve_piece(
    store: ProfileStore,
    infohash: bytes,
    index: int,
    *,
    stats: TransferStats,
    settings: Settings,
    publisher: bool,
    bucket: TokenBucket,
    total_uploaded: int,
    now: float,
) -> bytes:
    """Fetch a locally verified piece and account for serving it."""
    data = store.get_piece(infohash, index)
    if data is None:
        raise MissingPiece(f"piece {index} not cached")
    check_serve(
        len(data),
        stats=stats,
        settings=settings,
        publisher=publisher,
        bucket=bucket,
        total_uploaded=total_uploaded,
        now=now,
    )
    stats.add_uploaded(len(data))
    return data
