"""Pure-Python integration kernels.

Reference twin of ``_kernels.pyx``. Both modules expose the same functions with
the same argument order and perform the floating-point operations in the same
order, so either backend produces the same trajectories.

Array conventions (all ``float64`` numpy arrays, mutated in place):

MVP state   ``[i_sc, i_p, i_eff, bg]``
MVP params  ``[c_i, tau_1, tau_2, v_g, p_2, egp, gezi, s_i, tau_m]``
UVA state   ``[g_p, g_t, x_l, x, i_sc1, i_sc2, i_p]``
UVA params  ``[k_1, k_2, kp_1, kp_2, kp_3, k_i, u_ii, v_g, g_pb, bw, v_i,
              k_d, k_a, k_e, v_m0, v_mx, k_m0, p_2u, i_b, tau_m]``

Meals are passed as two parallel arrays: elapsed minutes since ingestion
(negative means not yet eaten) and carbohydrate mass in mg. A meal contributes
while ``0 <= elapsed <= 8 * tau_m``.
"""

from math import exp, log

MEAL_HORIZON = 8.0
HYPO_THRESHOLD = 60.0
HYPO_EXPONENT = 1.44
HYPO_GAIN = 10.0


def mvp_integrate(y, params, doses, h, meal_elapsed, meal_carbs, bg_out=None):
    i_sc, i_p, i_eff, bg = (float(v) for v in y)
    c_i, tau_1, tau_2, v_g, p_2, egp, gezi, s_i, tau_m = (float(v) for v in params)
    elapsed = [float(v) for v in meal_elapsed]
    carbs = [float(v) for v in meal_carbs]
    dose_list = [float(v) for v in doses]
    m = len(elapsed)
    horizon = MEAL_HORIZON * tau_m
    denom = v_g * tau_m * tau_m
    for k in range(len(dose_list)):
        ra = 0.0
        for j in range(m):
            e = elapsed[j]
            if 0.0 <= e <= horizon:
                ra += carbs[j] / denom * e * exp(-e / tau_m)
        d_isc = -(i_sc - dose_list[k] / c_i) / tau_1
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
            elapsed[j] = elapsed[j] + h
        if bg_out is not None:
            bg_out[k] = bg
    y[0] = i_sc
    y[1] = i_p
    y[2] = i_eff
    y[3] = bg
    for j in range(m):
        meal_elapsed[j] = elapsed[j]


def _hypo_risk(g):
    if g >= HYPO_THRESHOLD:
        return 1.0
    if g < 1.0:
        g = 1.0
    r = log(g) ** HYPO_EXPONENT - log(HYPO_THRESHOLD) ** HYPO_EXPONENT
    return 1.0 + HYPO_GAIN * r * r


def uva_integrate(y, params, doses, h, meal_elapsed, meal_carbs, hypo, bg_out=None):
    g_p, g_t, x_l, x, i_sc1, i_sc2, i_p = (float(v) for v in y)
    (k_1, k_2, kp_1, kp_2, kp_3, k_i, u_ii, v_g, g_pb, bw, v_i,
     k_d, k_a, k_e, v_m0, v_mx, k_m0, p_2u, i_b, tau_m) = (float(v) for v in params)
    elapsed = [float(v) for v in meal_elapsed]
    carbs = [float(v) for v in meal_carbs]
    dose_list = [float(v) for v in doses]
    m = len(elapsed)
    horizon = MEAL_HORIZON * tau_m
    denom = bw * tau_m * tau_m
    for k in range(len(dose_list)):
        ra = 0.0
        for j in range(m):
            e = elapsed[j]
            if 0.0 <= e <= horizon:
                ra += carbs[j] / denom * e * exp(-e / tau_m)
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
        d_isc1 = dose_list[k] / bw - k_d * i_sc1
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
            elapsed[j] = elapsed[j] + h
        if bg_out is not None:
            bg_out[k] = g_p / v_g
    y[0] = g_p
    y[1] = g_t
    y[2] = x_l
    y[3] = x
    y[4] = i_sc1
    y[5] = i_sc2
    y[6] = i_p
    for j in range(m):
        meal_elapsed[j] = elapsed[j]


def insulin_cascade(y, params, doses, h, out):
    """Advance the three insulin lags and write the insulin-effect state.

    ``y`` is ``[i_sc, i_p, i_eff]``, ``params`` is ``[c_i, tau_1, tau_2, p_2, s_i]``.
    ``out[k]`` receives ``i_eff`` *before* substep ``k`` is applied.
    """
    i_sc, i_p, i_eff = (float(v) for v in y)
    c_i, tau_1, tau_2, p_2, s_i = (float(v) for v in params)
    dose_list = [float(v) for v in doses]
    for k in range(len(dose_list)):
        out[k] = i_eff
        d_isc = -(i_sc - dose_list[k] / c_i) / tau_1
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
