"""Compiled inner loop of the OPO servo simulation.

State and parameters travel as flat float64 arrays; the index constants below
are the single source of truth for their layout.
"""
import cmath
import math

import numpy as np
from numba import njit

# -- state vector
S_TIME = 0
S_LF1, S_LF2 = 1, 2
S_LD1, S_LD2 = 3, 4
S_T1, S_T2 = 5, 6
S_PUMP = 7
S_PUMP_SLOPE = 8
S_INTEGRATOR = 9
S_L_ACT = 10
S_V = 11
S_LI_DC, S_LI_LP1, S_LI_LP2 = 12, 13, 14
S_L_REF = 15
S_NU_MINUS_PAIR = 16
S_HOPS = 17
S_SATURATED = 18
S_DELTA = 19
S_NU_MINUS = 20
S_POWER = 21
S_X = 22
S_L = 23
S_DT_TEMP = 24
S_DNU_PUMP = 25
S_ERROR = 26
S_LINES = 27  # two entries per vibration line

# -- parameter vector
P_DT = 0
P_HWHM = 1
P_PMAX = 2
P_MPL, P_MPT, P_MPV = 3, 4, 5
P_MML, P_MMT, P_MMV = 6, 7, 8
P_MPX, P_MMX = 9, 10
P_ASYM = 11
P_HOP_LEN = 12
P_FSR_SUM = 13
P_LF_SIG, P_LF_RHO, P_LF_G = 14, 15, 16
P_LD_SIG, P_LD_RHO, P_LD_G = 17, 18, 19
P_T_SIG, P_T_RHO, P_T_G = 20, 21, 22
P_PUMP_SIG, P_PUMP_RHO, P_PUMP_G = 23, 24, 25
P_LOCKED = 26
P_RESOLVED = 27
P_DITHER_D = 28
P_DITHER_F = 29
P_DITHER_LEN = 30
P_HP_ALPHA = 31
P_LP_ALPHA = 32
P_INV_SLOPE = 33
P_ERR_SIG = 34
P_KP = 35
P_KI = 36
P_ACT_RANGE = 37
P_EO_GAIN = 38
P_EO_RANGE = 39
P_NU_MINUS_SET = 40
N_PARAMS = 41

# -- normals per step
N_LF, N_LD, N_T, N_PUMP, N_ERR = 0, 1, 2, 3, 4
N_LINES = 5


@njit(cache=True)
def dither_discriminant(delta, dither, hwhm):
    """<L(delta + dither sin th) sin th> over a dither period, L = Lorentzian of peak 1."""
    if dither == 0.0:
        return 0.0
    z = complex(delta, -hwhm)
    w = dither / z
    return -(hwhm / dither) * (1.0 / cmath.sqrt(1.0 - w * w)).imag


@njit(cache=True, nogil=True)
def advance(state, params, line_coef, normals, n_steps, decim, out):
    """Integrate ``n_steps`` steps in place.

    ``line_coef`` rows are (a1, a2, b, sigma) per vibration line. ``out``
    receives block averages of (nu_minus, delta, power, hop_flag) every
    ``decim`` steps, for n_steps // decim rows.
    """
    dt = params[P_DT]
    hwhm = params[P_HWHM]
    n_lines = line_coef.shape[0]
    locked = params[P_LOCKED] != 0.0
    resolved = params[P_RESOLVED] != 0.0
    mpl = params[P_MPL]
    hop_half = 0.5 * abs(params[P_HOP_LEN])
    hop_sign = 1.0 if params[P_HOP_LEN] >= 0.0 else -1.0

    acc0 = 0.0
    acc1 = 0.0
    acc2 = 0.0
    hop_in_block = 0.0
    row = 0
    for k in range(n_steps):
        xi = normals[k]
        # noise processes
        rho = params[P_LF_RHO]
        s1 = rho * state[S_LF1] + params[P_LF_G] * xi[N_LF]
        state[S_LF2] = rho * state[S_LF2] + (1.0 - rho) * s1
        state[S_LF1] = s1
        rho = params[P_LD_RHO]
        s1 = rho * state[S_LD1] + params[P_LD_G] * xi[N_LD]
        state[S_LD2] = rho * state[S_LD2] + (1.0 - rho) * s1
        state[S_LD1] = s1
        rho = params[P_T_RHO]
        s1 = rho * state[S_T1] + params[P_T_G] * xi[N_T]
        state[S_T2] = rho * state[S_T2] + (1.0 - rho) * s1
        state[S_T1] = s1
        state[S_PUMP] = params[P_PUMP_RHO] * state[S_PUMP] + params[P_PUMP_G] * xi[N_PUMP]
        x = 0.0
        for j in range(n_lines):
            i0 = S_LINES + 2 * j
            v = line_coef[j, 0] * state[i0] + line_coef[j, 1] * state[i0 + 1] \
                + line_coef[j, 2] * xi[N_LINES + j]
            state[i0 + 1] = state[i0]
            state[i0] = v
            x += line_coef[j, 3] * v
        state[S_TIME] += dt
        t = state[S_TIME]

        l_dist = params[P_LF_SIG] * state[S_LF2] + params[P_LD_SIG] * state[S_LD2]
        d_temp = params[P_T_SIG] * state[S_T2]
        d_pump = params[P_PUMP_SIG] * state[S_PUMP] + state[S_PUMP_SLOPE] * t
        volts = state[S_V]
        l_slow = l_dist + state[S_L_ACT]

        delta = mpl * (l_slow - state[S_L_REF]) + params[P_MPT] * d_temp \
            + params[P_MPV] * volts + params[P_MPX] * x - d_pump
        excursion = delta / mpl
        if abs(excursion) > hop_half:
            direction = 1.0 if excursion > 0.0 else -1.0
            state[S_L_REF] += direction * 2.0 * hop_half
            state[S_NU_MINUS_PAIR] += direction * hop_sign * params[P_FSR_SUM]
            state[S_HOPS] += 1.0
            hop_in_block = 1.0
            delta -= mpl * direction * 2.0 * hop_half

        nu_minus = state[S_NU_MINUS_PAIR] + params[P_MML] * (l_slow - state[S_L_REF]) \
            + params[P_MMT] * d_temp + params[P_MMV] * volts + params[P_MMX] * x \
            - params[P_ASYM] * delta
        ratio = delta / hwhm
        power = params[P_PMAX] / (1.0 + ratio * ratio)

        error = 0.0
        if locked:
            if resolved:
                phase = 2.0 * math.pi * params[P_DITHER_F] * t
                sn = math.sin(phase)
                d_inst = delta + mpl * params[P_DITHER_LEN] * sn
                r2 = d_inst / hwhm
                pn = 1.0 / (1.0 + r2 * r2)
                state[S_LI_DC] += params[P_HP_ALPHA] * (pn - state[S_LI_DC])
                mixed = (pn - state[S_LI_DC]) * sn
            else:
                mixed = dither_discriminant(delta, params[P_DITHER_D], hwhm)
            mixed += params[P_ERR_SIG] * xi[N_ERR]
            a = params[P_LP_ALPHA]
            state[S_LI_LP1] += a * (mixed - state[S_LI_LP1])
            state[S_LI_LP2] += a * (state[S_LI_LP1] - state[S_LI_LP2])
            error = state[S_LI_LP2] * params[P_INV_SLOPE]

            integ = state[S_INTEGRATOR] + params[P_KI] * error * dt
            u = params[P_KP] * error + integ
            l_act = -u / mpl
            lim = params[P_ACT_RANGE]
            if abs(l_act) > lim:
                l_act = lim if l_act > 0.0 else -lim
                integ = -l_act * mpl - params[P_KP] * error
                state[S_SATURATED] = 1.0
            state[S_INTEGRATOR] = integ
            state[S_L_ACT] = l_act

            if params[P_EO_GAIN] > 0.0:
                v_new = volts - params[P_EO_GAIN] * dt * (nu_minus - params[P_NU_MINUS_SET]) \
                    / params[P_MMV]
                vlim = params[P_EO_RANGE]
                if abs(v_new) > vlim:
                    v_new = vlim if v_new > 0.0 else -vlim
                    state[S_SATURATED] = 1.0
                state[S_V] = v_new

        state[S_DELTA] = delta
        state[S_NU_MINUS] = nu_minus
        state[S_POWER] = power
        state[S_X] = x
        state[S_L] = l_slow
        state[S_DT_TEMP] = d_temp
        state[S_DNU_PUMP] = d_pump
        state[S_ERROR] = error

        acc0 += nu_minus
        acc1 += delta
        acc2 += power
        if (k + 1) % decim == 0:
            out[row, 0] = acc0 / decim
            out[row, 1] = acc1 / decim
            out[row, 2] = acc2 / decim
            out[row, 3] = hop_in_block
            row += 1
            acc0 = 0.0
            acc1 = 0.0
            acc2 = 0.0
            hop_in_block = 0.0
    return row
