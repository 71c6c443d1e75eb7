"""
Tilt and the link budget
========================

A multirotor tilts to accelerate, and a body-fixed dipole tilts with it.
This walks through the gain pattern and how much SNR a hard acceleration
costs on a horizontal link.
"""

# %%
import numpy as np

from tiltrelay import AntennaPattern, LinkParams, Pose, attitude_from_acceleration
from tiltrelay.channel import dipole_gain, link_snr

# %%
# The pattern: 1 broadside, 0 along the axis, about 0.39 at 45 degrees.
for deg in (90, 60, 45, 30, 10, 0):
    th = np.deg2rad(deg)
    print(f"theta={deg:3d} deg  gain={dipole_gain([np.sin(th), 0.0, np.cos(th)]):.4f}")

# %%
# A relay at 10 m talks to a node 100 m away at the same height. Level flight
# keeps the dipole broadside; accelerating forward pitches it.
dip = AntennaPattern.dipole()
link = LinkParams(tx_power_w=1.0, noise_w=1e-4)
rx = Pose([100.0, 0.0, 10.0])
for ax in (0.0, 1.0, 3.0, 6.0, 10.0):
    q = attitude_from_acceleration([ax, 0.0, 0.0])
    snr = link_snr(Pose([0.0, 0.0, 10.0], q), rx, dip, dip, link)
    tilt = np.degrees(np.arctan2(ax, 9.81))
    print(f"a_x={ax:5.1f} m/s^2  tilt={tilt:5.1f} deg  snr={snr:8.3f}  rate={np.log2(1 + snr):.3f} b/s/Hz")

# %%
# Sideways acceleration rolls about the link direction instead, which leaves
# the pattern toward the receiver unchanged.
q = attitude_from_acceleration([0.0, 6.0, 0.0])
print("lateral 6 m/s^2:", link_snr(Pose([0.0, 0.0, 10.0], q), rx, dip, dip, link))
