"""Efficient diffusion transformer with training-free attention modulation.

Submodules are imported lazily so that the CLI can pin thread-related
environment variables before numpy is loaded.
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "numerics",
    "kernels",
    "amm",
    "architecture",
    "masking",
    "diffusion",
    "flops",
    "harness",
    "cli",
    "errors",
)


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        module = importlib.import_module(f".{name}", __name__)
        globals()[name] = module
        return module
    raise AttributeError(f"module 'edt' has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
