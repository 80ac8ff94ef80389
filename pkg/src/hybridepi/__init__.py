"""hybridepi: hybrid agent-based / reaction-diffusion epidemic simulator."""

__version__ = "0.1.0"
