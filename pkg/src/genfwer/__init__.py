"""Generalized familywise error rate and FDP-controlling multiple testing."""
from .core import *  # noqa: F401,F403
from .errors import *  # noqa: F401,F403
from .procedures import *  # noqa: F401,F403
from .adversarial import *  # noqa: F401,F403
from .simulation import *  # noqa: F401,F403

__version__ = "0.1.0"
