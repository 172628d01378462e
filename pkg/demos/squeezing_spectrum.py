"""Intensity-difference noise relative to shot noise, with and without balancing.

Run: python3 demos/squeezing_spectrum.py
"""
import math

import numpy as np

from twinbeam_opo.detection import DetectorPair, DifferenceModel, difference_spectrum, fit_squeezing

xt = 10 ** -5.2
det = DetectorPair.calibrated(-4.0, 200e3, 3e6, crosstalk_power=xt)
model = DifferenceModel()
print(f"calibrated detection efficiency: {det.eta:.3f} "
      f"(escape {det.escape_efficiency:.3f} x quantum {det.quantum_efficiency:.2f})")

f = np.geomspace(50e3, 50e6, 4000)
twin = difference_spectrum(0.0, det, model, f, crosstalk_power=xt)
shot = difference_spectrum(math.pi / 8, det, model, f)
depth, hwhm = fit_squeezing(twin, exclude=[model.beat_frequency])
print(f"fitted depth {10 * np.log10(1 - depth):.2f} dB at DC, HWHM {hwhm / 1e6:.2f} MHz\n")
print(f"{'f [MHz]':>8} {'twin [dB]':>10} {'split [dB]':>11}")
for f0 in (0.1, 0.2, 0.5, 1, 2, 3, 3.9, 4.0, 6, 10, 30):
    i = np.argmin(np.abs(f - f0 * 1e6))
    print(f"{f[i] / 1e6:8.2f} {10 * np.log10(twin.psd[i]):10.2f} {10 * np.log10(shot.psd[i]):11.2f}")
