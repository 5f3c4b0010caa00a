# Convex surrogates for the powertrain maps
#
# The optimiser never sees the efficiency maps directly.  It sees three convex
# surrogates: a quadratic for the electric-side motor force, a linear fuel use
# per metre and a quadratic discharge rate for the battery.  This script fits
# them on the shipped maps and looks at where the fits are worst.

# %%
import numpy as np

from h2rail.powertrain import (BatteryParams, TrainParams, default_fuelcell_map, default_motor_map,
                               exact_soc_rate, fit_all, motor_fit_samples)

params, batt = TrainParams(), BatteryParams()
motor_map, fc_map = default_motor_map(params), default_fuelcell_map(params)
fits = fit_all(params, batt, motor_map, fc_map)

# %% The motor map peaks near 0.92 and falls off towards the force limits.
print(f"motor efficiency: peak {motor_map.eta.max():.3f}, min {motor_map.eta.min():.3f}")

# %% Motor surrogate: residuals relative to the electric force, floored at 5% of peak.
m = fits.motor
f, z, target = motor_fit_samples(motor_map, params)
rel = np.abs(m(f, z) - target) / np.maximum(np.abs(target), 0.05 * np.abs(target).max())
worst = np.argmax(rel)
print(f"motor fit: max rel {m.stats.max_rel:.4f} at F = {f[worst] / 1e3:.1f} kN, v = {np.sqrt(z[worst]):.1f} m/s")
print(f"  quadratic form min eigenvalue {m.min_eigenvalue():.2e} (convex: {m.is_convex()})")

# %% Fuel-cell surrogate: fuel per metre linear in the fictitious force and in z.
fc = fits.fuel_cell
print(f"fuel-cell fit: p0 = {fc.p0:.4f}, p1 = {fc.p1:.4g}, max rel {fc.stats.max_rel:.4f}")

# %% Battery: the exact discharge rate against its quadratic surrogate.
p = np.linspace(batt.p_min, batt.p_max, 9)
exact = -exact_soc_rate(p, batt)
for pi, e, s in zip(p, exact, fits.soc(p)):
    print(f"  P = {pi / 1e3:7.1f} kW  exact {e * 1e3:8.4f}  surrogate {s * 1e3:8.4f}  m%/s")
print(f"SOC fit: max error {fits.soc.stats.max_rel:.4f} of peak ({fits.soc.method})")
