import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridctl import expr as ex
from hybridctl.controls import ConstantControl, TableControl
from hybridctl.grid import split_steps
from hybridctl.model import (
    ControlSet,
    CostSpec,
    HybridSystem,
    ImpulseSchedule,
    InterpolationOperator,
    SampledDataSystem,
    ValidationError,
    interpolate,
    lq_to_general,
    reduce_sampled_data,
    validate_system,
)
from hybridctl.riccati import LQSystem
from hybridctl.sim import integrate

U1 = ControlSet.finite([[0.0]])


def scalar(f="x1", **kw):
    return HybridSystem(n=1, f=(f,), U=U1, T=1.0, **kw)


class TestValidate:
    def test_minimal_system(self):
        prob = validate_system(scalar())
        assert prob.n == 1 and prob.T == 1.0

    def test_undeclared_state(self):
        with pytest.raises(ValidationError) as info:
            validate_system(scalar("x2"))
        assert any("'x2'" in e for e in info.value.errors)

    def test_times_not_increasing(self):
        sysm = scalar(I=("w1",), schedule=ImpulseSchedule(times=(0.5, 0.5)))
        with pytest.raises(ValidationError, match="times not strictly increasing"):
            validate_system(sysm)

    def test_times_outside_horizon(self):
        with pytest.raises(ValidationError, match=r"\(0, T\)"):
            validate_system(scalar(I=("w1",), schedule=ImpulseSchedule(times=(1.0,))))

    def test_empty_control_set(self):
        with pytest.raises(ValidationError, match="empty"):
            validate_system(HybridSystem(n=1, f=("0",), U=ControlSet.finite([]), T=1.0))

    def test_all_errors_reported_together(self):
        sysm = HybridSystem(n=1, f=("x2",), U=U1, T=-1.0, I=("w1",), schedule=ImpulseSchedule(times=(0.5, 0.4)))
        with pytest.raises(ValidationError) as info:
            validate_system(sysm, CostSpec(F="u9", F0="t"))
        assert len(info.value.errors) >= 4

    def test_terminal_cost_reads_state_only(self):
        with pytest.raises(ValidationError, match="F0"):
            validate_system(scalar(), CostSpec(F0="u1"))

    def test_aftereffect_needs_finite_W_and_b0(self):
        sysm = scalar(I=("w1*b1",), W=ControlSet.box([0], [1], [3]), schedule=ImpulseSchedule(times=(0.5,)),
                      variant="aftereffect")
        with pytest.raises(ValidationError) as info:
            validate_system(sysm)
        msg = str(info.value)
        assert "finite" in msg and "b0" in msg

    def test_variant_variables(self):
        sysm = scalar(I=("a1*w1",), schedule=ImpulseSchedule(times=(0.5,)))
        with pytest.raises(ValidationError, match="'a1'"):
            validate_system(sysm)
        validate_system(scalar(I=("a1*w1",), schedule=ImpulseSchedule(times=(0.5,)), variant="parametrized"))


class TestControlSet:
    def test_finite_keeps_order(self):
        np.testing.assert_array_equal(ControlSet.finite([[1], [-1], [0]]).sample(), [[1], [-1], [0]])

    def test_box_lattice_is_lexicographic(self):
        s = ControlSet.box([0, 10], [1, 11], [2, 3]).sample()
        np.testing.assert_array_equal(s[:3], [[0, 10], [0, 10.5], [0, 11]])
        assert s.shape == (6, 2)

    def test_single_sample_is_midpoint(self):
        np.testing.assert_array_equal(ControlSet.box([-1], [3], [1]).sample(), [[1.0]])

    @pytest.mark.parametrize(
        "cs",
        [ControlSet.finite([]), ControlSet.box([1], [0], [3]), ControlSet.box([0], [1], [0]),
         ControlSet.finite([[0], [0, 1]])],
    )
    def test_problems(self, cs):
        assert cs.problems("U")

    @given(st.integers(1, 4), st.integers(1, 6))
    def test_samples_inside_box(self, dim, k):
        cs = ControlSet.box([-1.0] * dim, [2.0] * dim, [k] * dim)
        s = cs.sample()
        assert s.shape == (k**dim, dim)
        assert all(cs.contains(v) for v in s)


class TestInterpolate:
    def test_zero_order_hold(self):
        assert interpolate(InterpolationOperator(), [[2.0]], 0.5, times=(1.0,), T=2.0) == pytest.approx([2.0])

    def test_linear_basis(self):
        op = InterpolationOperator((("t",),))
        assert interpolate(op, [[3.0]], 0.5, times=(1.0,), T=2.0) == pytest.approx([1.5])

    def test_out_of_range(self):
        with pytest.raises(ValueError, match="outside"):
            interpolate(InterpolationOperator(), [[1.0]], 3.0, times=(), T=2.0)

    def test_missing_sample(self):
        with pytest.raises(ValueError, match="no sample"):
            interpolate(InterpolationOperator(), [[1.0]], 1.5, times=(1.0,), T=2.0)

    def test_basis_relative_to_interval_start(self):
        op = InterpolationOperator((("t - tau",),))
        assert interpolate(op, [[1.0], [4.0]], 1.25, times=(1.0,), T=2.0) == pytest.approx([1.0])

    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=3), st.floats(0.01, 0.99))
    def test_hold_reproduces_constants(self, z, frac):
        times = (0.5, 1.0, 1.5)
        samples = [z] * 4
        t = 2.0 * frac
        np.testing.assert_array_equal(interpolate(InterpolationOperator(), samples, t, times, 2.0), z)


# -- sampled-data reduction ---------------------------------------------------


def direct_alternation(sd: SampledDataSystem, y0, u, w, h):
    """Oracle: RK4 on y with the held discrete state, then the recursion for z."""
    f = [ex.compile_expr(ex.parse(s)) for s in sd.f]
    g = [ex.compile_expr(ex.parse(s)) for s in sd.g]
    y = np.asarray(y0, dtype=float)
    z = np.asarray(sd.z0, dtype=float)
    breaks = [0.0, *sd.times, sd.T]

    def rhs(t, y, z):
        env = {"t": t, **{f"y{i + 1}": y[i] for i in range(sd.n_y)}, **{f"pz{i + 1}": z[i] for i in range(sd.n_z)}}
        env.update({f"u{i + 1}": v for i, v in enumerate(u)})
        return np.array([fn(env) for fn in f])

    out = []
    for k in range(len(breaks) - 1):
        a, b = breaks[k], breaks[k + 1]
        n, dt = split_steps(a, b, h)
        for i in range(n):
            t = a + i * dt
            step = b - t if i == n - 1 else dt
            k1 = rhs(t, y, z)
            k2 = rhs(t + step / 2, y + step / 2 * k1, z)
            k3 = rhs(t + step / 2, y + step / 2 * k2, z)
            k4 = rhs(t + step, y + step * k3, z)
            y = y + step / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(np.concatenate([y, z]))
        if k < len(breaks) - 2:
            env = {"t": b, **{f"y{i + 1}": y[i] for i in range(sd.n_y)}, **{f"z{i + 1}": z[i] for i in range(sd.n_z)}}
            env.update({f"w{i + 1}": v for i, v in enumerate(w)})
            z = np.array([fn(env) for fn in g])
    return np.array(out)


def test_reduction_example():
    sd = SampledDataSystem("C2D2", 1, 1, f=("-y1",), g=("z1 + w1",), times=(0.5,), T=1.0,
                           U=U1, W=ControlSet.finite([[1.0]]), z0=(0.0,))
    system, costs = reduce_sampled_data(sd, CostSpec())
    assert ex.evaluate(ex.parse(system.I[1]), {"t": 0.5, "x1": 3.0, "x2": 0.0, "w1": 1.0}) == 1.0
    prob = validate_system(system, costs)
    traj = integrate(prob, ConstantControl([0.0]), ConstantControl([1.0]), 0.0, sd.initial_state([1.0]), h=0.01)
    assert traj.x[-1, 1] == 1.0
    assert traj.at(0.5, "-")[1] == 0.0


def test_reduction_without_samples_is_plain_ode():
    sd = SampledDataSystem("C2D2", 1, 1, f=("-y1 + pz1",), g=("z1 + w1",), times=(), T=1.0,
                           U=U1, W=ControlSet.finite([[1.0]]), z0=(2.0,))
    system, costs = reduce_sampled_data(sd, CostSpec())
    assert system.schedule.times == ()
    traj = integrate(validate_system(system, costs), ConstantControl([0.0]), ConstantControl([1.0]), 0.0,
                     sd.initial_state([0.0]), h=0.01)
    assert np.all(traj.x[:, 1] == 2.0)
    assert traj.x[-1, 0] == pytest.approx(2 * (1 - np.exp(-1)), abs=1e-9)


@st.composite
def sampled_instances(draw):
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    n_y, n_z = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    c = lambda: f"{rng.uniform(-1, 1):.4f}"
    f = tuple(
        f"{c()}*y{i + 1} + {c()}*sin(pz{(i % n_z) + 1}) + {c()}*u1 + {c()}*cos(t)" for i in range(n_y)
    )
    g = tuple(f"{c()}*z{j + 1} + {c()}*y{(j % n_y) + 1} + w1" for j in range(n_z))
    K = int(rng.integers(0, 4))
    times = tuple(sorted(set(np.round(rng.uniform(0.1, 0.9, K), 3)))) if K else ()
    sd = SampledDataSystem("C2D2", n_y, n_z, f=f, g=g, times=times, T=1.0, U=ControlSet.finite([[0.3]]),
                           W=ControlSet.finite([[-0.2]]), z0=tuple(rng.uniform(-1, 1, n_z)))
    return sd, rng.uniform(-1, 1, n_y)


@settings(max_examples=25, deadline=None)
@given(sampled_instances())
def test_reduction_matches_direct_alternation(inst):
    sd, y0 = inst
    system, costs = reduce_sampled_data(sd, CostSpec())
    prob = validate_system(system, costs)
    h = 0.01
    traj = integrate(prob, ConstantControl([0.3]), ConstantControl([-0.2]), 0.0, sd.initial_state(y0), h=h)
    ref = direct_alternation(sd, y0, [0.3], [-0.2], h)
    ends = [traj.at(t, "-") for t in sd.times] + [traj.x[-1]]
    np.testing.assert_allclose(np.array(ends), ref, rtol=0, atol=1e-10)


def test_d1_reduction_reads_left_limit_of_u():
    sd = SampledDataSystem("C2D1", 1, 1, f=("u1",), g=("z1 + u1*w1",), times=(0.5,), T=1.0,
                           U=ControlSet.finite([[-1.0], [2.0]]), W=ControlSet.finite([[1.0]]), z0=(0.0,))
    system, costs = reduce_sampled_data(sd, CostSpec(Phi="u1^2"))
    assert system.variant == "parametrized"
    prob = validate_system(system, costs)
    u = TableControl([0.0, 0.25], [[-1.0], [2.0]])
    traj = integrate(prob, u, ConstantControl([1.0]), 0.0, sd.initial_state([0.0]), h=0.05)
    assert traj.x[-1, 1] == pytest.approx(2.0)
    assert float(prob.impulse_cost(0.5, traj.jumps[0].x_minus, [1.0], a=traj.jumps[0].a)) == pytest.approx(4.0)


def test_c1_reduction_holds_discrete_control():
    sd = SampledDataSystem("C1D2", 1, 1, f=("qw1",), g=("z1",), times=(0.5,), T=1.0, U=U1,
                           W=ControlSet.finite([[3.0]]), z0=(0.0,), w0=(1.0,))
    system, costs = reduce_sampled_data(sd, CostSpec())
    prob = validate_system(system, costs)
    traj = integrate(prob, ConstantControl([0.0]), ConstantControl([3.0]), 0.0, sd.initial_state([0.0]), h=0.01)
    assert traj.x[-1, 0] == pytest.approx(0.5 * 1.0 + 0.5 * 3.0, abs=1e-12)


def test_interpolated_reduction_uses_clock():
    # pz = (t - tau) * z: the clock component records tau
    sd = SampledDataSystem("C2D2", 1, 1, f=("pz1",), g=("1",), times=(0.5,), T=1.0, U=U1, W=U1, z0=(0.0,),
                           p=InterpolationOperator((("t - tau",),)))
    system, costs = reduce_sampled_data(sd, CostSpec())
    assert system.n == 3
    prob = validate_system(system, costs)
    traj = integrate(prob, ConstantControl([0.0]), ConstantControl([0.0]), 0.0, sd.initial_state([0.0]), h=0.01)
    # y' = t - 0.5 on (0.5, 1): y(1) = 0.125
    assert traj.x[-1, 0] == pytest.approx(0.125, abs=1e-12)
    assert traj.x[-1, 2] == 0.5


def test_sampled_data_problems():
    sd = SampledDataSystem("C2D2", 1, 1, f=("qw1 + u1",), g=("u1",), times=(0.5, 0.2), T=1.0, U=U1, W=U1, z0=())
    errs = sd.problems(CostSpec())
    text = " ".join(errs)
    assert "qw1" in text and "u1" in text and "z0" in text and "not strictly increasing" in text


# -- linear-quadratic expansion -------------------------------------------------


def test_lq_to_general_scalar():
    lq = LQSystem(P=[[0]], Q=[[1]], A=[[0]], B=[[0]], C=[[1]], A0=[[1]], T=1.0)
    system, costs = lq_to_general(lq)
    assert system.f == ("u1",)
    assert costs.F == "u1*u1"
    assert costs.F0 == "x1*x1"
    prob = validate_system(system, costs)
    assert prob.flow(0, [2.0], [3.0])[0] == 3
    assert prob.running_cost(0, [2.0], [3.0]) == 9
    assert prob.terminal_cost([2.0]) == 4


def test_lq_to_general_zero():
    z = [[0.0, 0.0], [0.0, 0.0]]
    lq = LQSystem(P=z, Q=z, A=z, B=z, C=np.eye(2), A0=z, T=1.0, times=(0.5,), M=z, N=z)
    system, costs = lq_to_general(lq)
    prob = validate_system(system, CostSpec(F="0", Phi=costs.Phi, F0=costs.F0))
    rng = np.random.default_rng(0)
    for _ in range(5):
        x, u = rng.normal(size=2), rng.normal(size=2)
        assert np.all(prob.flow(0.3, x, u) == 0) and np.all(prob.jump(0.5, x, u) == 0)
        assert prob.terminal_cost(x) == 0


def test_lq_to_general_random_2x2():
    rng = np.random.default_rng(7)
    sym = lambda m: (m + m.T) / 2
    P, Q, B, M, N, beta = (rng.normal(size=(2, 2)) for _ in range(6))
    A, alpha, A0 = (sym(rng.normal(size=(2, 2))) for _ in range(3))
    C = np.eye(2) + 0.1 * sym(rng.normal(size=(2, 2)))
    gamma = 2 * np.eye(2)
    lq = LQSystem(P=P, Q=Q, A=A, B=B, C=C, A0=A0, T=1.0, times=(0.5,), M=M, N=N, alpha=alpha, beta=beta,
                  gamma=gamma)
    prob = validate_system(*lq_to_general(lq))
    worst = 0.0
    for _ in range(100):
        x, u, w = rng.normal(size=(3, 2))
        checks = [
            (prob.flow(0.1, x, u), P @ x + Q @ u),
            (prob.jump(0.5, x, w), M @ x + N @ w),
            (prob.running_cost(0.1, x, u), x @ A @ x + 2 * x @ B @ u + u @ C @ u),
            (prob.impulse_cost(0.5, x, w), x @ alpha @ x + 2 * x @ beta @ w + w @ gamma @ w),
            (prob.terminal_cost(x), x @ A0 @ x),
        ]
        worst = max(worst, max(float(np.max(np.abs(a - b))) for a, b in checks))
    assert worst <= 1e-12


def test_lq_to_general_time_varying():
    lq = LQSystem(P=[["-t"]], Q=[[1]], A=[["1 + t^2"]], B=[[0]], C=[[1]], A0=[[1]], T=1.0)
    prob = validate_system(*lq_to_general(lq))
    assert prob.flow(0.5, [2.0], [0.0])[0] == pytest.approx(-1.0)
    assert prob.running_cost(0.5, [2.0], [0.0]) == pytest.approx(5.0)


def test_lq_to_general_dimension_mismatch():
    lq = LQSystem(P=[[0, 0], [0, 0]], Q=[[1]], A=[[0]], B=[[0]], C=[[1]], A0=[[1]], T=1.0)
    with pytest.raises(ValueError, match="shape"):
        lq_to_general(lq)


def test_lq_to_general_needs_uniform_jumps():
    lq = LQSystem(P=[[0]], Q=[[1]], A=[[0]], B=[[0]], C=[[1]], A0=[[1]], T=1.0, times=(0.3, 0.6),
                  N=[[[1.0]], [[2.0]]])
    with pytest.raises(ValueError, match="differ"):
        lq_to_general(lq)
