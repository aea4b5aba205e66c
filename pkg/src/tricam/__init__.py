"""Three-camera gaze tracking on a laptop-class screen.

Submodules: ``geometry`` (pinhole rig, triangulation, screen mapping),
``synthgen`` / ``dataset`` (synthetic eye-image scenes and their container),
``autodiff`` / ``network`` (the fusion network and its training step),
``harness`` (experiment protocol), ``clickcalib`` (implicit calibration from
mouse clicks) and ``cli``.
"""

__version__ = "0.1.0"
