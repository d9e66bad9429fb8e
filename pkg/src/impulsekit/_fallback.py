"""Pure-Python stepping kernel.

Reference implementation of :func:`advance`; ``_kernels.pyx`` is a line-by-line
port and the two must produce identical floats. Coefficients are affine,
``drift(x) = a0 + a1*x`` and ``diffusion(x) = b0 + b1*x``.
"""
import math

# bound modes
NONE, REFLECT, ABSORB = 0, 1, 2
# stop rules
RULE_NONE, RULE_HIT_LOWER, RULE_EXIT, RULE_FIXED = 0, 1, 2, 3
# return status
RUNNING, FIRED, NONFINITE, NEGATIVE_DIFFUSION = 0, 1, 2, 3


def advance(states, start, end, noise, a0, a1, b0, b1, dt, sqrt_dt,
            bound_mode, lo, hi, rule, r0, r1, first_check):
    """Step from ``states[start]`` writing ``states[start+1 .. end]``.

    ``noise[j]`` drives the step into index ``start + 1 + j``. Returns
    ``(index, status)``; on ``FIRED`` the rule held at ``index``, on an error
    status ``states[index]`` holds the offending value.
    """
    x = float(states[start])
    noise = noise.tolist()
    out = []
    j = 0
    status = RUNNING
    i = start
    for i in range(start + 1, end + 1):
        if bound_mode == ABSORB and (x <= lo or x >= hi):
            pass
        else:
            diff = b0 + b1 * x
            if diff < 0.0:
                status = NEGATIVE_DIFFUSION
                out.append(diff)
                break
            inc = (a0 + a1 * x) * dt + diff * sqrt_dt * noise[j]
            x = x + inc
            if bound_mode == REFLECT:
                if x < lo:
                    x = 2.0 * lo - x
                if x > hi:
                    x = 2.0 * hi - x
                if x < lo:
                    x = lo
            elif bound_mode == ABSORB:
                if x <= lo:
                    x = lo
                elif x >= hi:
                    x = hi
        j += 1
        out.append(x)
        if not math.isfinite(x):
            status = NONFINITE
            break
        if i >= first_check:
            if rule == RULE_HIT_LOWER:
                if x <= r0:
                    status = FIRED
                    break
            elif rule == RULE_EXIT:
                if x <= r0 or x >= r1:
                    status = FIRED
                    break
            elif rule == RULE_FIXED:
                if i >= r0:
                    status = FIRED
                    break
    if out:
        states[start + 1:start + 1 + len(out)] = out
    else:
        i = start
    return i, status
