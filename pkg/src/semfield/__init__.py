"""Multi-view descriptor fusion into 3D semantic fields driving a diffusion policy.

The package is organized bottom-up:

- ``geometry``: pinhole cameras, bilinear sampling, back-projection, FPS.
- ``fusion``: per-view sampling of 3D points and distance-weighted fusion
  into descriptor fields.
- ``semantics``: reference descriptors, cosine similarity fields, policy
  observations.
- ``netcore``: minimal reverse-mode autodiff substrate (dense / Mish /
  layer-norm / concat / sinusoidal time embedding), Adam, grad checks,
  checkpoint serialization.
- ``encoder``: hierarchical point-set encoder producing the conditioning
  embedding.
- ``policy``: DDPM noise schedule, training loss, ancestral sampler, and
  receding-horizon execution.
- ``sim``: planar tabletop environment with an analytic feature/depth
  renderer, scripted expert, and success checkers.
- ``harness``: CLI, dataset/checkpoint persistence, training, evaluation,
  heatmap export, and report figures.
"""

__version__ = "0.1.0"
