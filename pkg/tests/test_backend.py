import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apstestbed import _kernels_py, io, mvp, uva
from apstestbed._backend import BACKEND
from apstestbed.engine import run_closed_loop

compiled = pytest.importorskip("apstestbed._kernels")


@settings(max_examples=25)
@given(seed=st.integers(0, 2**31), minutes=st.integers(1, 400), hypo=st.booleans())
def test_backends_agree_bit_for_bit(seed, minutes, hypo):
    rng = np.random.default_rng(seed)
    doses = rng.uniform(0.0, 0.1, minutes)
    t = -rng.uniform(0, 300, 2)
    g = rng.uniform(0, 9e4, 2)
    for name, y0, params, scale in (
        ("mvp", np.array([7.0, 7.0, 0.005, 140.0]), mvp.NOMINAL.as_array(), 1e6),
        ("uva", uva.initial_state(uva.NOMINAL, 140.0).as_array(), uva.NOMINAL.as_array(), 6000.0),
    ):
        outs = []
        for k in (_kernels_py, compiled):
            y = y0.copy()
            out = np.empty(minutes)
            if name == "mvp":
                k.mvp_integrate(y, params, doses * scale, 1.0, t.copy(), g, out)
            else:
                k.uva_integrate(y, params, doses * scale, 1.0, t.copy(), g, hypo, out)
            outs.append((y, out))
        assert np.array_equal(outs[0][0], outs[1][0])
        assert np.array_equal(outs[0][1], outs[1][1])


def test_compiled_backend_selected_by_default():
    assert BACKEND == "cython"


def test_pure_python_fallback_matches(tmp_path):
    code = ("import sys; from apstestbed import io, BACKEND; from apstestbed.engine import run_closed_loop;"
            "s = io.load_experiment('nominal_uva.json'); assert BACKEND == 'python';"
            "sys.stdout.write(io.trace_csv(run_closed_loop(s), s.to_dict()))")
    env = dict(os.environ, APSTESTBED_PURE_PYTHON="1")
    res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    spec = io.load_experiment("nominal_uva.json")
    assert res.stdout == io.trace_csv(run_closed_loop(spec), spec.to_dict())
