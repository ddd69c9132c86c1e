# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled integration kernels.

Same signatures, array layouts and operation order as ``_kernels_py``; see that
module for the conventions.
"""

from libc.math cimport exp, log, pow

cdef double MEAL_HORIZON = 8.0
cdef double HYPO_THRESHOLD = 60.0
cdef double HYPO_EXPONENT = 1.44
cdef double HYPO_GAIN = 10.0


def mvp_integrate(double[::1] y, double[::1] params, double[::1] doses, double h,
                  double[::1] meal_elapsed, double[::1] meal_carbs, double[::1] bg_out=None):
    cdef double i_sc = y[0], i_p = y[1], i_eff = y[2], bg = y[3]
    cdef double c_i = params[0], tau_1 = params[1], tau_2 = params[2], v_g = params[3]
    cdef double p_2 = params[4], egp = params[5], gezi = params[6], s_i = params[7]
    cdef double tau_m = params[8]
    cdef Py_ssize_t n = doses.shape[0], m = meal_elapsed.shape[0], k, j
    cdef double horizon = MEAL_HORIZON * tau_m
    cdef double denom = v_g * tau_m * tau_m
    cdef double ra, e, d_isc, d_ip, d_ieff, d_bg
    cdef bint record = bg_out is not None
    for k in range(n):
        ra = 0.0
        for j in range(m):
            e = meal_elapsed[j]
            if 0.0 <= e <= horizon:
                ra += meal_carbs[j] / denom * e * exp(-e / tau_m)
        d_isc = -(i_sc - doses[k] / c_i) / tau_1
        d_ip = -(i_p - i_sc) / tau_2
        d_ieff = -p_2 * (i_eff - s_i * i_p)
        d_bg = -(gezi + i_eff) * bg + egp + ra
        i_sc = i_sc + h * d_isc
        i_p = i_p + h * d_ip
        i_eff = i_eff + h * d_ieff
        bg = bg + h * d_bg
        if i_sc < 0.0:
            i_sc = 0.0
        if i_p < 0.0:
            i_p = 0.0
        if i_eff < 0.0:
            i_eff = 0.0
        if bg < 0.0:
            bg = 0.0
        for j in range(m):
            meal_elapsed[j] = meal_elapsed[j] + h
        if record:
            bg_out[k] = bg
    y[0] = i_sc
    y[1] = i_p
    y[2] = i_eff
    y[3] = bg


cdef inline double _hypo_risk(double g) nogil:
    cdef double r
    if g >= HYPO_THRESHOLD:
        return 1.0
    if g < 1.0:
        g = 1.0
    r = pow(log(g), HYPO_EXPONENT) - pow(log(HYPO_THRESHOLD), HYPO_EXPONENT)
    return 1.0 + HYPO_GAIN * r * r


def uva_integrate(double[::1] y, double[::1] params, double[::1] doses, double h,
                  double[::1] meal_elapsed, double[::1] meal_carbs, bint hypo,
                  double[::1] bg_out=None):
    cdef double g_p = y[0], g_t = y[1], x_l = y[2], x = y[3]
    cdef double i_sc1 = y[4], i_sc2 = y[5], i_p = y[6]
    cdef double k_1 = params[0], k_2 = params[1], kp_1 = params[2], kp_2 = params[3]
    cdef double kp_3 = params[4], k_i = params[5], u_ii = params[6], v_g = params[7]
    cdef double bw = params[9], v_i = params[10], k_d = params[11]
    cdef double k_a = params[12], k_e = params[13], v_m0 = params[14], v_mx = params[15]
    cdef double k_m0 = params[16], p_2u = params[17], i_b = params[18], tau_m = params[19]
    cdef Py_ssize_t n = doses.shape[0], m = meal_elapsed.shape[0], k, j
    cdef double horizon = MEAL_HORIZON * tau_m
    cdef double denom = bw * tau_m * tau_m
    cdef double ra, e, ins, egp, risk, vm, u_id
    cdef double d_gp, d_gt, d_xl, d_x, d_isc1, d_isc2, d_ip
    cdef bint record = bg_out is not None
    for k in range(n):
        ra = 0.0
        for j in range(m):
            e = meal_elapsed[j]
            if 0.0 <= e <= horizon:
                ra += meal_carbs[j] / denom * e * exp(-e / tau_m)
        ins = i_p / v_i
        egp = kp_1 - kp_2 * g_p - kp_3 * x_l
        if egp < 0.0:
            egp = 0.0
        risk = 1.0
        if hypo:
            risk = _hypo_risk(g_p / v_g)
        vm = v_m0 + v_mx * risk * x
        if vm < 0.0:
            vm = 0.0
        u_id = vm * g_t / (k_m0 + g_t)
        d_gp = egp + ra - u_ii - k_1 * g_p + k_2 * g_t
        d_gt = -u_id + k_1 * g_p - k_2 * g_t
        d_xl = -k_i * (x_l - ins)
        d_x = -p_2u * x + p_2u * (ins - i_b)
        d_isc1 = doses[k] / bw - k_d * i_sc1
        d_isc2 = k_d * i_sc1 - k_a * i_sc2
        d_ip = k_a * i_sc2 - k_e * i_p
        g_p = g_p + h * d_gp
        g_t = g_t + h * d_gt
        x_l = x_l + h * d_xl
        x = x + h * d_x
        i_sc1 = i_sc1 + h * d_isc1
        i_sc2 = i_sc2 + h * d_isc2
        i_p = i_p + h * d_ip
        if g_p < 0.0:
            g_p = 0.0
        if g_t < 0.0:
            g_t = 0.0
        if x_l < 0.0:
            x_l = 0.0
        if i_sc1 < 0.0:
            i_sc1 = 0.0
        if i_sc2 < 0.0:
            i_sc2 = 0.0
        if i_p < 0.0:
            i_p = 0.0
        for j in range(m):
            meal_elapsed[j] = meal_elapsed[j] + h
        if record:
            bg_out[k] = g_p / v_g
    y[0] = g_p
    y[1] = g_t
    y[2] = x_l
    y[3] = x
    y[4] = i_sc1
    y[5] = i_sc2
    y[6] = i_p


def insulin_cascade(double[::1] y, double[::1] params, double[::1] doses, double h,
                    double[::1] out):
    cdef double i_sc = y[0], i_p = y[1], i_eff = y[2]
    cdef double c_i = params[0], tau_1 = params[1], tau_2 = params[2]
    cdef double p_2 = params[3], s_i = params[4]
    cdef Py_ssize_t n = doses.shape[0], k
    cdef double d_isc, d_ip, d_ieff
    for k in range(n):
        out[k] = i_eff
        d_isc = -(i_sc - doses[k] / c_i) / tau_1
        d_ip = -(i_p - i_sc) / tau_2
        d_ieff = -p_2 * (i_eff - s_i * i_p)
        i_sc = i_sc + h * d_isc
        i_p = i_p + h * d_ip
        i_eff = i_eff + h * d_ieff
        if i_sc < 0.0:
            i_sc = 0.0
        if i_p < 0.0:
            i_p = 0.0
        if i_eff < 0.0:
            i_eff = 0.0
    y[0] = i_sc
    y[1] = i_p
    y[2] = i_eff
