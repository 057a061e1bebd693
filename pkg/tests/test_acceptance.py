"""Acceptance suite: one check per criterion, each printing a PASS/FAIL line.

Run under pytest, or directly with ``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import json
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import COUPLED, DECOUPLED, TRACKING  # noqa: E402

from mfglq import (  # noqa: E402
    GraphonModel,
    LqCoefficients,
    PopulationModel,
    SimConfig,
    SolverOptions,
    controlled_mean,
    convergence_sweep,
    make_grid,
    newton_solve,
    picard_solve,
    price_of_anarchy,
    residual,
    simulate_population,
    social_cost,
    solve_gmfg,
    solve_mfg,
    solve_mpmfg,
    solve_riccati,
    step_from_weights,
)
from mfglq.cli import run  # noqa: E402
from mfglq.mfc import optimize  # noqa: E402

TOL_FB = 1e-9


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


# ---------------------------------------------------------------------------


def criterion_1():
    """Closed-form Riccati p_0 = 1/2 and RK4 order under halving."""
    c = LqCoefficients(Q_T=1.0)

    def work():
        p0 = solve_riccati(c, make_grid(1.0, 1000)).initial
        errs = []
        # error at n = 1000 is already at round-off, so the order is measured on coarse grids
        for n in (10, 20, 40):
            g = make_grid(1.0, n)
            errs.append(float(np.max(np.abs(solve_riccati(c, g).values - 1.0 / (2.0 - g.times)))))
        return p0, errs

    (p0, errs), dt = _timed(work)
    ratios = [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]
    ok = abs(p0 - 0.5) <= 1e-6 and min(ratios) >= 12 and dt < 1.0
    return ok, f"|p0-0.5|={abs(p0 - 0.5):.2e}, halving ratios={[round(r, 2) for r in ratios]}, {dt:.2f}s"


def criterion_2():
    """Decoupled case: r vanishes for the three game-class solvers (both fb methods)."""
    c = LqCoefficients(A=0.3, Q=1.0, Q_T=0.5, sigma=0.4, x0_mean=1.0)
    g = make_grid(1.0, 200)

    def work():
        worst = 0.0
        for method in ("picard", "newton"):
            opts = SolverOptions(method=method)
            sols = [
                solve_mfg(PopulationModel.single(c), g, opts),
                solve_mpmfg(PopulationModel((c, c), np.array([[1.0, 0.5], [0.5, 1.0]])), g, opts),
                solve_gmfg(GraphonModel((c,), step_from_weights([[1.0, 0.3], [0.3, 2.0]]), 8), g, opts),
            ]
            worst = max([worst] + [float(np.max(np.abs(s.r))) for s in sols])
        return worst

    worst, dt = _timed(work)
    return worst <= 1e-12 and dt < 1.0, f"max|r|={worst:.1e}, {dt:.2f}s"


def criterion_3():
    """Reduction chain GMFG(step) = MPMFG = MFG."""
    g = make_grid(1.0, 400)
    cs = (
        LqCoefficients(A=0.1, Abar=0.5, Qbar=1.0, S=0.5, Qbar_T=0.5, S_T=1.0, sigma=0.3, x0_mean=1.0),
        LqCoefficients(A=-0.2, Abar=0.3, Qbar=2.0, S=0.5, Q=0.5, sigma=0.2, x0_mean=-1.0),
        LqCoefficients(A=0.0, Abar=0.8, Qbar=1.5, S=1.0, Q_T=1.0, sigma=0.1, x0_mean=0.5),
    )
    w = np.array([[1.0, 0.5, 0.2], [0.5, 2.0, 0.0], [0.2, 0.0, 1.0]])

    def work():
        direct = solve_mpmfg(PopulationModel(cs, w), g)
        via = solve_gmfg(GraphonModel(cs, step_from_weights(w), 30), g)
        gm_diff = max(
            float(np.max(np.abs(getattr(via, f) - np.repeat(getattr(direct, f), 10, axis=1)))) for f in ("z", "r", "p")
        )
        gm_diff = max(gm_diff, float(np.max(np.abs(via.value - np.repeat(direct.value, 10)))))
        one = PopulationModel.single(LqCoefficients(**COUPLED))
        a, b = solve_mfg(one, g), solve_mpmfg(one, g)
        mf_diff = max(float(np.max(np.abs(getattr(a, f) - getattr(b, f)))) for f in ("z", "r", "p", "value"))
        return gm_diff, mf_diff

    (gm_diff, mf_diff), dt = _timed(work)
    ok = gm_diff <= 1e-9 and mf_diff <= 1e-12 and dt < 10
    return ok, f"GMFG-MPMFG={gm_diff:.1e}, MPMFG-MFG={mf_diff:.1e}, {dt:.2f}s"


def _random_instances(seed=20240607, count=12):
    """Coefficients drawn from A, Abar in [-0.5, 0.5], Q, Qbar, Q_T, Qbar_T in [0, 2],
    S, S_T in [0, 1], B in [0.5, 1.5], C in [0.5, 2], sigma in [0, 1], x0_mean in [-2, 2],
    x0_std in [0.1, 1]; K in {1, 2, 3} with weights in [0, 1]."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        k = 1 + i % 3
        cs = tuple(
            LqCoefficients(
                A=rng.uniform(-0.5, 0.5),
                Abar=rng.uniform(-0.5, 0.5),
                B=rng.uniform(0.5, 1.5),
                C=rng.uniform(0.5, 2.0),
                Q=rng.uniform(0, 2),
                Qbar=rng.uniform(0, 2),
                S=rng.uniform(0, 1),
                Q_T=rng.uniform(0, 2),
                Qbar_T=rng.uniform(0, 2),
                S_T=rng.uniform(0, 1),
                sigma=rng.uniform(0, 1),
                x0_mean=rng.uniform(-2, 2),
                x0_std=rng.uniform(0.1, 1),
            )
            for _ in range(k)
        )
        w = np.ones((1, 1)) if k == 1 else rng.uniform(0, 1, (k, k))
        out.append(PopulationModel(cs, w))
    return out


def criterion_4():
    """Picard vs Newton on randomized instances; FD residual at n = 1000."""
    from mfglq import FbProblem
    from mfglq.model import validate

    g = make_grid(1.0, 1000)

    def work():
        diffs, residuals, converged = [], [], 0
        models = _random_instances()
        for m in models:
            validate(m)
            interaction = None if m.n_populations == 1 else m.weights
            pb = FbProblem.from_coefficients(m.coeffs, g, interaction)
            a = picard_solve(pb, tol_fb=TOL_FB)
            b = newton_solve(pb, tol_fb=TOL_FB)
            if not (a.converged and b.converged):
                continue
            converged += 1
            diffs.append(max(float(np.max(np.abs(a.z.values - b.z.values))), float(np.max(np.abs(a.r.values - b.r.values)))))
            residuals.append(max(residual(pb, a), residual(pb, b)))
        return len(models), converged, max(diffs), max(residuals)

    (n_inst, n_conv, dmax, rmax), dt = _timed(work)
    ok = n_conv >= 10 and dmax <= max(10 * TOL_FB, 1e-8) and rmax <= 1e-4 and dt < 30
    return ok, f"{n_conv}/{n_inst} converged, max diff={dmax:.1e}, max residual={rmax:.1e}, {dt:.2f}s"


def criterion_5():
    """Consistency: controlled mean = z; simulated mean/variance within 3 SE of z, v."""
    m = PopulationModel.single(LqCoefficients(**COUPLED))
    # n = 500 keeps the Euler-Maruyama mean bias below one standard error
    g = make_grid(1.0, 500)

    def work():
        sol = solve_mfg(m, g)
        cm = float(np.max(np.abs(controlled_mean(sol).values - sol.z)))
        res = simulate_population(m, sol, SimConfig(n_players=2000, n_reps=100, seed=5))
        zs = np.abs(res.means - sol.z)[1:] / res.mean_stderr[1:]
        vs = np.abs(res.variances - sol.variance)[1:] / res.variance_stderr[1:]
        return cm, float(zs.max()), float(vs.max())

    (cm, zmax, vmax), dt = _timed(work)
    ok = cm <= 10 * TOL_FB and zmax <= 3 and vmax <= 3 and dt < 60
    return ok, f"controlled-mean gap={cm:.1e}, max |mean z-score|={zmax:.2f}, max |var z-score|={vmax:.2f}, N*reps=2e5, {dt:.1f}s"


def criterion_6():
    """Monte-Carlo cost vs closed-form value."""
    m = PopulationModel.single(LqCoefficients(**COUPLED))
    g = make_grid(1.0, 100)

    def work():
        sol = solve_mfg(m, g)
        res = simulate_population(m, sol, SimConfig(n_players=1000, n_reps=100, seed=6))
        mc, se = res.average_cost()
        return mc, se, float(sol.value[0])

    (mc, se, value), dt = _timed(work)
    allowance = 3 * se + abs(value) * 10 * g.dt
    ok = abs(mc - value) <= allowance and dt < 60
    return ok, f"MC={mc:.5f}, value={value:.5f}, |diff|={abs(mc - value):.2e} <= {allowance:.2e}, {dt:.1f}s"


def criterion_7():
    """Empirical epsilon-Nash decay (coupled) and null gaps (decoupled)."""
    g = make_grid(1.0, 50)
    ns = [5, 20, 100, 500]
    cfg = SimConfig(n_players=5, n_reps=50, seed=7)

    def work():
        coupled = PopulationModel.single(LqCoefficients(**TRACKING))
        rc = convergence_sweep(coupled, solve_mfg(coupled, g), ns, cfg)
        decoupled = PopulationModel.single(LqCoefficients(**DECOUPLED))
        rd = convergence_sweep(decoupled, solve_mfg(decoupled, g), ns, cfg)
        return rc, rd

    (rc, rd), dt = _timed(work)
    gaps = [e.gap for e in rc.entries]
    ok_c = rc.monotone_flag and gaps[-1] < gaps[0]
    ok_d = all(e.gap <= 2 * e.std_error for e in rd.entries)
    ok = ok_c and ok_d and dt < 600
    fmt = lambda r: ", ".join(f"{e.n_players}:{e.gap:.4f}±{e.std_error:.4f}" for e in r.entries)  # noqa: E731
    return ok, f"coupled [{fmt(rc)}] monotone={rc.monotone_flag}; decoupled [{fmt(rd)}]; {dt:.1f}s"


def criterion_8():
    """Price of anarchy and evaluator-vs-simulation agreement."""
    coarse = make_grid(1.0, 50)

    def work():
        d = price_of_anarchy(PopulationModel.single(LqCoefficients(**DECOUPLED)), coarse)
        reports = [d]
        for kw in (COUPLED, TRACKING, dict(A=-0.3, Abar=1.0, Q=0.5, Qbar=2.0, S=0.5, Q_T=1.0, sigma=0.3, x0_mean=-1.0)):
            reports.append(price_of_anarchy(PopulationModel.single(LqCoefficients(**kw)), coarse))
        # evaluator vs Monte-Carlo on the (non-equilibrium) optimized MFC policy
        m = PopulationModel.single(LqCoefficients(**COUPLED))
        policy, _ = optimize(m, make_grid(1.0, 100))
        fine = make_grid(1.0, 500)
        fine_policy = policy.resample(fine)
        exact = social_cost(m, fine_policy, fine)
        res = simulate_population(m, solve_mfg(m, fine), SimConfig(n_players=1000, n_reps=100, seed=8), policy=fine_policy)
        mc, se = res.average_cost()
        return d, reports, exact, mc, se

    (d, reports, exact, mc, se), dt = _timed(work)
    ok_d = abs(d.price_of_anarchy - 1) <= 1e-6
    ok_all = all(r.price_of_anarchy >= 1 - 1e-6 and r.mfc_cost <= r.mfg_social_cost + 1e-6 for r in reports)
    ok_mc = abs(mc - exact) <= 3 * se
    ok = ok_d and ok_all and ok_mc and dt < 60
    ratios = [round(r.price_of_anarchy, 6) for r in reports]
    return ok, f"PoA={ratios}, evaluator={exact:.5f} vs MC={mc:.5f}±{se:.5f}, {dt:.1f}s"


VERIFY_CONFIG = """
[model]
game_class = mfg
Qbar = 8
S = 1
sigma = 0.2
x0_mean = 2

[grid]
horizon = 1
n_steps = 50

[simulate]
sweep = 5, 20, 100
n_reps = 20
seed = 424242
"""


def criterion_9():
    """Two verify runs with one seed give byte-identical reports."""

    def work():
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            cfg = tmp / "run.ini"
            cfg.write_text(VERIFY_CONFIG)
            codes = [run(["verify", str(cfg), "--out", str(tmp / d)]) for d in ("a", "b")]
            a = (tmp / "a" / "nash_gap.json").read_bytes()
            b = (tmp / "b" / "nash_gap.json").read_bytes()
            ca = (tmp / "a" / "nash_gap.csv").read_bytes()
            cb = (tmp / "b" / "nash_gap.csv").read_bytes()
            json.loads(a)
            return codes, a == b and ca == cb, len(a)

    (codes, same, size), dt = _timed(work)
    ok = codes == [0, 0] and same and dt < 120
    return ok, f"exit codes={codes}, identical={same} ({size} bytes), {dt:.1f}s"


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8, criterion_9]


def _line(i, ok, detail):
    return f"[{'PASS' if ok else 'FAIL'}] criterion {i}: {detail}"


@pytest.mark.parametrize("index", range(1, len(CRITERIA) + 1))
def test_criterion(index, capsys):
    ok, detail = CRITERIA[index - 1]()
    with capsys.disabled():
        print("\n" + _line(index, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    failed = 0
    for i, fn in enumerate(CRITERIA, 1):
        ok, detail = fn()
        failed += not ok
        print(_line(i, ok, detail), flush=True)
    sys.exit(1 if failed else 0)
