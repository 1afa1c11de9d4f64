"""Spin-photon coupling of molecular spin ensembles to superconducting resonators.

Pipeline: :mod:`geometry` (film layout, mesh) -> :mod:`current_solver`
(London sheet currents) -> :mod:`field_map` (Biot-Savart field) ->
:mod:`deposit` (voxelized molecules) -> :mod:`coupling` (per-cell and
collective couplings) -> :mod:`spectroscopy` (transmission and fits).
"""

__version__ = "0.1.0"
