"""fraclab: a numerical laboratory for nonlocal phase-transition energies.

Core objects: cell lattices and voxel sets (`lattice`), double-well
potentials (`potential`), singular-kernel weight tables (`kernels`),
energy and fractional-Laplacian evaluation (`energies`), constrained
minimization (`minimize`), supersolution barriers (`barrier`), and set
interaction / isoperimetric diagnostics (`setgeom`).  The `lab`
subpackage wires these into reproducible experiments and a CLI.
"""

__version__ = "0.1.0"
