"""Analysis and resynthesis of one-shot drums with sines, filtered noise and a FiLM-conditioned TCN."""

__version__ = "0.1.0"
