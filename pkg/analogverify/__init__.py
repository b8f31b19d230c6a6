"""analogverify - verification workbench for analog quantum simulators.

Simulates time-reversal, multi-basis and randomized analog verification
protocols on small spin models under parametric noise, compiles approximate
inverses of random Hamiltonian-term sequences, and reproduces dephased
ideal-versus-actual dynamics.

License: Apache 2.0
"""

__version__ = "0.1.0"
__license__ = "Apache-2.0"

from analogverify.app import main

__all__ = ["main", "__version__", "__license__"]
