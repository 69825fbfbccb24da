"""Loop-gain algebra: the open-loop transfer matrix, the feedback matrix,
their product, and the calibration that zeroes the sag cross-coupling."""

import numpy as np

from beccool import calibrate_gains, loop_gain, nominal_gain_matrix, nominal_transfer_matrix

np.set_printoptions(precision=4, suppress=False)

G = nominal_transfer_matrix()
K = nominal_gain_matrix()
L = loop_gain(G, K)

print("open-loop transfer matrix G (rows: dx_trap, dz_trap, domega_x^2):")
print(G)
print("\nfeedback matrix K (V/um):")
print(K * 1e-6)
print("\nloop gain L = G K:")
print(f"  L_xx = {L[0, 0]:+.4f}           (x dipole, dimensionless)")
print(f"  L_zz = {L[1, 1]:+.4f}           (z dipole)")
print(f"  L_zw = {L[1, 2]:+.4f}           (width -> z sag cross-coupling)")
print(f"  L_ww = {L[2, 2] * 1e-6:+.1f} (rad/s)^2/um"
      f"  = -(2 pi x {np.sqrt(-L[2, 2] * 1e-6) / (2 * np.pi):.2f} Hz)^2/um")

# calibration: same diagonal targets, exactly zero cross-coupling
K_cal = calibrate_gains(G, L[0, 0], L[1, 1], L[2, 2])
L_cal = loop_gain(G, K_cal)
print("\ncalibrated K (V/um) — power channels re-balanced:")
print(K_cal * 1e-6)
print(f"residual sag coupling after calibration: {L_cal[1, 2]:.2e}")
print("\npower-channel opposition: V64/V90 gain ratio "
      f"{K_cal[2, 2] / K_cal[3, 2]:+.4f} (the two beams push the sag in "
      "opposite directions so it cancels)")
