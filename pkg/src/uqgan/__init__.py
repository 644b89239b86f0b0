"""One-vs-all classifier trained with a class-conditional latent WGAN-GP that
generates out-of-class examples, separating aleatoric and epistemic uncertainty.

Modules: ``ova_core`` (posterior calculus), ``losses``, ``models``, ``trainer``,
``data``, ``metrics``, ``baselines``, ``evaluate``, ``config``, ``experiment``,
``figures`` and ``cli``.
"""

__version__ = "0.1.0"
