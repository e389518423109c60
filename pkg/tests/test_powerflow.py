import math

import numpy as np
import pytest

from ecogrid.model import load_case
from ecogrid.powerflow import (
    ac_operating_point,
    bus_injections,
    check_limits,
    compute_losses,
    dc_operating_point,
    ptdf_matrix,
    solve_ac,
    solve_dc,
)
from synthetic import base_dispatch, make_network, three_bus_ring, two_bus

from test_model import CASE5


# -- DC ----------------------------------------------------------------------

def test_two_bus_dc_angles_and_flow():
    net = two_bus(p_load=100.0, x=0.1)
    sol = solve_dc(net, np.array([100.0]))
    assert sol.theta[0] == 0.0  # slack reference
    # theta2 = -P*x in per-unit: -1.0 * 0.1
    assert sol.theta[1] == pytest.approx(-0.1, abs=1e-12)
    assert sol.p_flow[0] == pytest.approx(100.0, abs=1e-9)
    assert not sol.any_islanded


def test_ring_flow_split():
    # Equal reactances: direct path carries 2/3 of the load, the two-hop
    # path carries 1/3.
    net = three_bus_ring(load=90.0)
    sol = solve_dc(net, np.array([90.0]))
    assert sol.p_flow == pytest.approx([30.0, 30.0, 60.0], abs=1e-9)


def test_require_balance():
    net = two_bus()
    with pytest.raises(ValueError, match="imbalance"):
        solve_dc(net, np.array([150.0]))
    sol = solve_dc(net, np.array([150.0]), require_balance=False)
    # Slack generator absorbs the surplus.
    assert sol.p_gen[0] == pytest.approx(100.0)


def test_islanded_bus_handling():
    with pytest.warns(UserWarning, match="not connected"):
        net = make_network(
            buses=[(1, 0.0), (2, 50.0), (3, 0.0), (4, 80.0)],
            branches=[(1, 2, 0.1, 200.0), (2, 3, 0.1, 200.0)],
            generators=[(1, 0.0, 200.0), (4, 0.0, 100.0)],
            slack_bus=1,
        )
    sol = solve_dc(net, np.array([50.0, 80.0]), require_balance=False)
    assert list(sol.islanded) == [False, False, False, True]
    assert sol.theta[3] == 0.0
    assert sol.p_gen[1] == 0.0  # generator on the island delivers nothing
    assert sol.p_gen[0] == pytest.approx(50.0)  # serves only energized load


def test_ptdf_matches_angle_solve():
    net = load_case(CASE5)
    dispatch = base_dispatch(net)
    sol = solve_dc(net, dispatch, require_balance=False)
    h = ptdf_matrix(net)
    inj = bus_injections(net, sol.p_gen)
    assert h @ inj * net.base_mva == pytest.approx(sol.p_flow, abs=1e-8)


def test_dc_operating_point_balances():
    net = three_bus_ring()
    sol = solve_dc(net, np.array([90.0]))
    op = dc_operating_point(net, sol)
    assert op.balance_residual() == pytest.approx(0.0, abs=1e-9)
    assert op.p_loss.sum() == 0.0


def test_check_limits_dc():
    net = make_network(
        buses=[(1, 0.0), (2, 100.0)],
        branches=[(1, 2, 0.1, 120.0)],
        generators=[(1, 0.0, 200.0), (2, 0.0, 200.0)],
        slack_bus=1,
    )
    sol = solve_dc(net, np.array([0.0, 250.0]), require_balance=False)
    v = check_limits(net, sol)
    # Slack absorbs -150 MW (below its 0 MW minimum), gen 2 exceeds its max,
    # and the 150 MW counterflow overloads the branch.
    assert len(v.gen_violations) == 2
    assert len(v.branch_overloads) == 1
    label, flow, limit = v.branch_overloads[0]
    assert label == "1-2" and flow == pytest.approx(150.0) and limit == 120.0
    assert v.count() == 3 and not v.empty


def test_check_limits_clean():
    net = two_bus()
    v = check_limits(net, solve_dc(net, np.array([100.0])))
    assert v.empty


# -- AC ----------------------------------------------------------------------

def test_two_bus_ac_closed_form():
    # Lossless line, PV source at 1.0 pu: delta = asin(2 P x / V1^2) / 2 and
    # V2 = V1 cos(delta) when the load draws no reactive power.
    net = two_bus(p_load=100.0, x=0.1, r=0.0)
    sol = solve_ac(net, np.array([100.0]))
    assert sol.converged
    delta = 0.5 * math.asin(2 * 1.0 * 0.1)
    assert sol.v_ang[1] == pytest.approx(-delta, abs=1e-8)
    assert sol.v_mag[1] == pytest.approx(math.cos(delta), abs=1e-8)
    assert sol.p_flow[0] == pytest.approx(1.0, abs=1e-8)
    assert sol.p_loss_i2r.sum() == pytest.approx(0.0, abs=1e-9)


def test_ac_bus_power_residuals():
    net = make_network(
        buses=[(1, 0.0), (2, 40.0), (3, 90.0)],
        branches=[(1, 2, 0.2, 200.0, "existing", 0.02),
                  (2, 3, 0.2, 200.0, "existing", 0.02),
                  (1, 3, 0.2, 200.0, "existing", 0.02)],
        generators=[(1, 0.0, 300.0)],
    )
    sol = solve_ac(net, np.array([130.0]))
    assert sol.converged and sol.mismatch < 1e-8
    # Branch-flow bookkeeping: sending-end flows out of each bus must equal
    # the bus's net injection.
    inj_p = np.zeros(3)
    inj_q = np.zeros(3)
    for k, br in enumerate(net.active_branches):
        i, j = net.bus_index(br.from_bus), net.bus_index(br.to_bus)
        inj_p[i] += sol.p_flow[k]
        inj_q[i] += sol.q_flow[k]
        inj_p[j] += sol.p_flow_to[k]
        inj_q[j] += sol.q_flow_to[k]
    v = sol.v_mag * np.exp(1j * sol.v_ang)
    s = v * np.conj(_ybus(net) @ v)
    assert inj_p == pytest.approx(s.real, abs=1e-8)
    assert inj_q == pytest.approx(s.imag, abs=1e-8)


def _ybus(net):
    from ecogrid.powerflow import _ybus as yb
    return yb(net)


def test_ac_losses_two_conventions():
    net = two_bus(p_load=100.0, x=0.1, r=0.01)
    sol = solve_ac(net, np.array([100.0]))
    assert sol.converged
    # Exact series losses close the balance.
    op = ac_operating_point(net, sol)
    assert op.balance_residual() == pytest.approx(0.0, abs=1e-6)
    # The susceptance-denominator loss formula is an approximation with a
    # different (here larger) value; both are positive.
    assert sol.p_loss_i2r.sum() > 0
    assert sol.p_loss.sum() > 0
    assert sol.p_loss.sum() != pytest.approx(sol.p_loss_i2r.sum(), rel=1e-3)
    # Denominator structure: B = x / z^2, so the formula tracks |I|^2 z^2 / x,
    # roughly |I|^2 x when r << x.
    i2 = (sol.p_flow[0] ** 2 + sol.q_flow[0] ** 2) / sol.v_mag[0] ** 2
    assert sol.p_loss.sum() == pytest.approx(i2 * (0.01**2 + 0.1**2) / 0.1, rel=0.05)


def test_ac_nonconvergence_reported():
    net = two_bus(p_load=100.0, x=0.1)
    sol = solve_ac(net, np.array([100.0]), v_setpoints={1: 1.0, 2: 1.0},
                   max_iter=1)
    # One iteration from flat start cannot satisfy 1e-8.
    assert not sol.converged
    with pytest.raises(ValueError, match="converged"):
        compute_losses(sol, net)


def test_ac_limit_screening():
    net = make_network(
        buses=[(1, 0.0), (2, 180.0)],
        branches=[(1, 2, 0.1, 150.0, "existing", 0.01)],
        generators=[(1, 0.0, 300.0)],
    )
    sol = solve_ac(net, np.array([180.0]))
    assert sol.converged
    v = check_limits(net, sol)
    assert len(v.branch_overloads) == 1
    # Heavily loaded line drags the PQ bus voltage below 0.94.
    assert any(bus_id == 2 for bus_id, _, _ in v.voltage_violations) or sol.v_mag[1] >= 0.94
