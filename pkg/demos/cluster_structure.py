"""Walk the cavity length across two clusters and print where each mode pair resonates.

Run: python3 demos/cluster_structure.py
"""
from twinbeam_opo.cavity import (
    CavityGeometry,
    cluster_spacing,
    find_cluster_modes,
    mode_hop_spacing,
    waists,
)
from twinbeam_opo.crystal import calibrate_derivatives

geometry = CavityGeometry()
crystal = calibrate_derivatives(geometry, (-2.12e9, 0.24e9), (1.34e6, 0.59e6))

print(f"hop spacing inside a cluster: {mode_hop_spacing(crystal, geometry) * 1e9:.3f} nm")
print(f"cluster period:               {cluster_spacing(geometry) * 1e9:.1f} nm")
ws, wi = waists(geometry, crystal)
print(f"waists: {ws * 1e6:.1f} um (confocal), {wi * 1e6:.1f} um (optimum focusing)\n")

modes = find_cluster_modes(crystal, geometry, (-300e-9, 300e-9), max_beat=8e9)
print(f"{'dL [nm]':>10} {'p_s':>7} {'p_i':>7} {'beat [GHz]':>11}  cluster/intra")
for m in modes:
    print(f"{m.l_offset * 1e9:10.2f} {m.pair.p_signal:7d} {m.pair.p_idler:7d} "
          f"{m.pair.beat / 1e9:11.3f}  {m.cluster_label:+d}/{m.intra_label:+d}")

