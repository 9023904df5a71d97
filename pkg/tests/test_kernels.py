import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from cmdse import kernels
from cmdse.matching import tie_break_keys

IMPLS = sorted(kernels.available())


@pytest.fixture(params=IMPLS)
def impl(request):
    return kernels.available()[request.param]


def test_python_fallback_always_present():
    assert "python" in kernels.available()
    assert kernels.BACKEND in ("compiled", "python")


@pytest.mark.parametrize("shape", [(1, 1), (5, 3), (8, 8), (24, 8), (30, 2)])
def test_lsa_total_matches_scipy(impl, shape):
    rng = np.random.default_rng(shape)
    for _ in range(20):
        cost = rng.random(shape)
        rows = kernels.lsa_lex(cost, np.zeros(shape), impl=impl)
        assert len(set(rows.tolist())) == shape[1]
        r, c = linear_sum_assignment(cost)
        assert cost[rows, np.arange(shape[1])].sum() == pytest.approx(cost[r, c].sum(), abs=1e-12)


def test_lsa_secondary_breaks_ties(impl):
    cost = np.zeros((4, 2))
    rows = kernels.lsa_lex(cost, tie_break_keys(4, 2), impl=impl)
    assert rows.tolist() == [0, 1]


def test_implementations_agree_on_integer_costs():
    rng = np.random.default_rng(9)
    impls = kernels.available()
    for _ in range(50):
        cost = rng.integers(0, 3, size=(9, 5)).astype(float)
        out = {k: kernels.lsa_lex(cost, tie_break_keys(9, 5), impl=m).tolist() for k, m in impls.items()}
        assert len({tuple(v) for v in out.values()}) == 1


def test_lsa_shape_validation():
    with pytest.raises(ValueError):
        kernels.lsa_lex(np.zeros((3, 2)), np.zeros((2, 3)))
    assert kernels.lsa_lex(np.zeros((3, 0)), np.zeros((3, 0))).size == 0


def test_greedy_match_basic(impl):
    box = [0.5, 0.5, 0.2, 0.2]
    far = [0.1, 0.1, 0.1, 0.1]
    # two detections on the same GT: only the first (higher ranked) claims it
    out = kernels.greedy_match([0, 0, 1], [box, box, box], [box, box, box], [0], [box], [box], 0.5, impl=impl)
    assert out.tolist() == [0, -1, -1]
    out = kernels.greedy_match([0], [far], [box], [0], [box], [box], 0.5, impl=impl)
    assert out.tolist() == [-1]


def test_greedy_match_implementations_agree():
    rng = np.random.default_rng(4)
    impls = kernels.available()
    for _ in range(30):
        nd, ng = 15, 6

        def boxes(n):
            return np.column_stack([rng.uniform(0.3, 0.7, (n, 2)), rng.uniform(0.2, 0.4, (n, 2))])

        args = (rng.integers(0, 3, nd), boxes(nd), boxes(nd), rng.integers(0, 3, ng), boxes(ng), boxes(ng), 0.5)
        outs = [kernels.greedy_match(*args, impl=m).tolist() for m in impls.values()]
        assert all(o == outs[0] for o in outs)


def test_env_forces_python_backend():
    import subprocess
    import sys
    out = subprocess.run([sys.executable, "-c", "from cmdse import kernels; print(kernels.BACKEND)"],
                         env={"CMDSE_PURE_PYTHON": "1", "PATH": ""}, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@pytest.mark.skipif(kernels.compiled_impl is None, reason="compiled extension not built")
def test_benchmark_runs(capsys):
    import runpy
    from pathlib import Path
    bench = runpy.run_path(str(Path(__file__).parents[1] / "benchmarks" / "bench_kernels.py"))
    assert bench["main"](["--repeat", "1"]) == 0
    assert "lsa_lex 24x8" in capsys.readouterr().out
