"""Brute-force simulator of the sustain/cooldown contract over a boolean
trace. Independent of the trigger engine: a plain loop with a counter and
a cooldown stamp, used as the oracle for fire counts and fire cycles."""


def simulate(trace, sustain, cooldown, cycle_times=None):
    """Return the list of cycle indices (1-based) at which a fire happens.

    trace: list of condition-evaluation booleans, one per cycle.
    cycle_times: the clock value at each cycle (defaults to 1, 2, 3, ...).
    """
    if cycle_times is None:
        cycle_times = list(range(1, len(trace) + 1))
    fires = []
    count = 0
    cooldown_until = None
    for i, (ok, now) in enumerate(zip(trace, cycle_times), start=1):
        if cooldown_until is not None:
            if now >= cooldown_until:
                cooldown_until = None
                count = 0
            else:
                continue
        if ok:
            count += 1
            if count >= sustain:
                fires.append(i)
                count = 0
                cooldown_until = now + cooldown
        else:
            count = 0
    return fires
