"""Text-to-CAD pipeline harness.

Subpackages cover the full pipeline: restricted bpy-script interpretation
(`scene`), scene complexity metrics (`complexity`), headless rendering
(`render`), model backends (`backends`), instruction/pair generation
(`datagen`), the two-stage quality gate (`filtering`), the iterative
self-improvement loop (`selfimprove`), benchmark scoring (`bench`),
run persistence (`store`), and the human review service (`review`).
"""

__version__ = "0.1.0"
