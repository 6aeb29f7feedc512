"""In-jail runner executable for candidate-code execution."""

from .runner import main, run_verdict

__version__ = "0.1.0"
