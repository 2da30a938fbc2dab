from .pcn import run_chain, run_chains

__all__ = ["run_chain", "run_chains"]
