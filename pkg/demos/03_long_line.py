# A 63 km line with 18 stations
#
# The regional-line case: 63 km, 16 intermediate stops, 87 minutes, sampled
# every 10 m.  That is about 6300 driving samples and 77 000 variables in one
# second-order cone program.  The KKT system is banded along the route, so a
# sparse LU with a fill-reducing ordering keeps each iteration cheap.

# %%
import time

from h2rail.pipeline import run_concurrent
from h2rail.powertrain import BatteryParams, TrainParams, default_fuelcell_map, default_motor_map, fit_all
from h2rail.route import discretize, synthetic_route
from h2rail.trajectory import check_tightness

params, batt = TrainParams(), BatteryParams()
fits = fit_all(params, batt, default_motor_map(params), default_fuelcell_map(params))
route = synthetic_route(63_000, 18, 7).with_target_time(87 * 60.0)
grid = discretize(route, 10.0)
print(f"{int(grid.driving_intervals.sum())} driving samples, {grid.N} intervals")

# %%
t0 = time.perf_counter()
run = run_concurrent(grid, params, batt, fits)
res = run.results["concurrent"]
print(f"status {res.status} after {res.iterations} iterations in {time.perf_counter() - t0:.1f} s")
print(f"program: {run.programs['concurrent'].n} variables; KKT nonzeros {res.fill['kkt_nnz']}, "
      f"LU nonzeros {res.fill['factor_nnz']}")

# %%
rep = check_tightness(run.traj, fits, params, grid)
print(f"tight: {rep.tight}, journey time {run.traj.journey_time:.1f} s of {grid.target_time:g} s")
