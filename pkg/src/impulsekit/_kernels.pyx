# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled stepping kernel; must stay in lockstep with ``_fallback.advance``."""
from libc.math cimport isfinite

cdef enum:
    NONE = 0
    REFLECT = 1
    ABSORB = 2

cdef enum:
    RULE_NONE = 0
    RULE_HIT_LOWER = 1
    RULE_EXIT = 2
    RULE_FIXED = 3

cdef enum:
    RUNNING = 0
    FIRED = 1
    NONFINITE = 2
    NEGATIVE_DIFFUSION = 3


def advance(double[::1] states, Py_ssize_t start, Py_ssize_t end,
            const double[::1] noise,
            double a0, double a1, double b0, double b1,
            double dt, double sqrt_dt,
            int bound_mode, double lo, double hi,
            int rule, double r0, double r1, Py_ssize_t first_check):
    cdef Py_ssize_t i = start
    cdef Py_ssize_t j = 0
    cdef int status = RUNNING
    cdef double x = states[start]
    cdef double diff, inc
    cdef double drift_dt = a0 * dt
    cdef double vol = b0 * sqrt_dt
    if a1 == 0.0 and b1 == 0.0 and bound_mode == NONE and b0 >= 0.0:
        # constant coefficients: a0 + 0*x == a0 exactly for finite x, so hoisting
        # the products leaves every increment bit-identical to the general loop
        with nogil:
            for i in range(start + 1, end + 1):
                x = x + (drift_dt + vol * noise[j])
                j += 1
                states[i] = x
                if not isfinite(x):
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
        return i, status
    with nogil:
        for i in range(start + 1, end + 1):
            if bound_mode == ABSORB and (x <= lo or x >= hi):
                pass
            else:
                diff = b0 + b1 * x
                if diff < 0.0:
                    status = NEGATIVE_DIFFUSION
                    states[i] = diff
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
            states[i] = x
            if not isfinite(x):
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
    return i, status
