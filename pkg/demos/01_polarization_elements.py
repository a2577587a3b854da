"""Polarization algebra basics.

Builds the rotated optical-element matrices, checks physical validity via
the coherency spectrum, repairs an unphysical matrix with the validity
projection, and decomposes elements into their physical factors.
"""

import numpy as np

import eventpol as ep

np.set_printoptions(precision=4, suppress=True)

print("=== optical elements ===")
lp0 = ep.linear_polarizer(0.0)
qwp45 = ep.quarter_wave_plate(np.pi / 4)
depol = ep.ideal_depolarizer(0.8)
print("linear polarizer at 0 deg:\n", lp0)
print("quarter-wave plate at 45 deg:\n", qwp45)

s_out = qwp45 @ lp0 @ ep.unpolarized_stokes()
print("\nunpolarized light through LP(0) then QWP(45):", s_out)
print("degree of polarization:", ep.degree_of_polarization(s_out))

print("\n=== physical validity ===")
print("coherency eigenvalues of LP(0):", ep.coherency_eigenvalues(lp0))
broken = np.eye(4)
broken[1, 1] = 1.5  # more polarization preservation than total intensity
print("eigenvalues of a broken matrix:", ep.coherency_eigenvalues(broken))
repaired = ep.cloude_filter(broken)
print("repaired matrix:\n", repaired)
print("repaired eigenvalues:", ep.coherency_eigenvalues(repaired))
print("valid matrices are fixed points:",
      np.allclose(ep.cloude_filter(qwp45), qwp45, atol=1e-12))

print("\n=== polar decomposition ===")
maps = ep.lu_chipman_maps(qwp45)
print("QWP(45):", maps)
print("depolarizer(0.8):", ep.lu_chipman_maps(depol))

m = depol @ qwp45
m_depol, m_ret, m_diat = ep.lu_chipman_decompose(m)
print("\ncomposite depolarizer*QWP factors recompose:",
      np.allclose(m_depol @ m_ret @ m_diat, m, atol=1e-10))
print("retarder factor:\n", m_ret)
