from hieragg._backend import BACKEND

__all__ = ["BACKEND"]
__version__ = "0.1.0"
