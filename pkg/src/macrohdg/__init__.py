"""Macro-element hybridized discontinuous Galerkin solver for compressible flow.

The package is organized around the pipeline

    mesh -> basis -> physics -> assembly -> condense -> krylov -> stepper

with benchmark drivers (``cases``, ``bench``) and a command line front end
(``cli``) on top.  Hot pointwise kernels live in ``kernels`` and come in two
interchangeable flavors (numba-jitted and pure numpy), selected through the
``MACROHDG_KERNELS`` environment variable.
"""

__version__ = "0.1.0"
