"""Independent reference implementations used by the tests."""

import math

import mpmath


def pearson_textbook(x, y):
    """Computational formula with exact-ish summation, no numpy."""
    n = len(x)
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = math.fsum((a - mx) ** 2 for a in x)
    syy = math.fsum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def t_two_sided_p(r, n, dps=50):
    """Two-sided p of t = r*sqrt(df/(1-r^2)) by direct integration of the
    Student t density in arbitrary precision."""
    with mpmath.workdps(dps):
        df = mpmath.mpf(n - 2)
        r = mpmath.mpf(r)
        t = abs(r) * mpmath.sqrt(df / (1 - r * r))
        c = mpmath.gamma((df + 1) / 2) / (mpmath.sqrt(df * mpmath.pi) * mpmath.gamma(df / 2))
        tail = mpmath.quad(lambda u: c * (1 + u * u / df) ** (-(df + 1) / 2), [t, mpmath.inf])
        return float(2 * tail)


def markout_straight_line(x, y, pa, pb, fee):
    return x * pa - y * pb - fee


def brute_settle(bids, reserve, close):
    """Independent oracle: keep each bidder's last pre-close bid, sort, price."""
    last = {}
    for i, b in enumerate(bids):
        if b.submitted_at < close and b.submitted_at >= 0:
            prev = last.get(b.bidder)
            if prev is None or (b.submitted_at, i) >= (prev[0].submitted_at, prev[1]):
                last[b.bidder] = (b, i)
    cands = sorted((b for b, _ in last.values()), key=lambda b: (-b.amount.units, b.submitted_at, b.bidder))
    if not cands or cands[0].amount.units < reserve.units:
        return None, None
    second = cands[1].amount.units if len(cands) > 1 else 0
    return cands[0].bidder, max(second, reserve.units)
