"""Environment report for bug reports: interpreter, platform, relevant packages and variables."""

from __future__ import annotations

import os
import platform
import sys
from dataclasses import dataclass
from importlib import metadata

import numpy as np

PACKAGES = ("recallgym", "numpy", "jinja2", "ansimarkup")
# Thread counts of the BLAS backends change float summation order.
THREAD_VARIABLES = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


@dataclass
class Variable:
    """An environment variable."""

    name: str
    value: str


@dataclass
class Package:
    """An installed distribution."""

    name: str
    version: str


@dataclass
class Environment:
    """What `recallgym --debug-info` prints."""

    interpreter_name: str
    interpreter_version: str
    interpreter_path: str
    platform: str
    packages: list[Package]
    variables: list[Variable]
    bit_generator: str
    cpu_count: int


def _interpreter_name_version() -> tuple[str, str]:
    impl = sys.implementation.version
    version = f"{impl.major}.{impl.minor}.{impl.micro}"
    if impl.releaselevel != "final":
        version += impl.releaselevel[0] + str(impl.serial)
    return sys.implementation.name, version


def get_version(dist: str = "recallgym") -> str:
    """Get version of the given distribution.

    Parameters:
        dist: A distribution name.

    Returns:
        A version number, `0.0.0` when the distribution is not installed.
    """
    try:
        return metadata.version(dist)
    except metadata.PackageNotFoundError:
        return "0.0.0"


def get_debug_info() -> Environment:
    """Collect environment information.

    Returns:
        Environment information.
    """
    py_name, py_version = _interpreter_name_version()
    variables = [
        "PYTHONPATH",
        *THREAD_VARIABLES,
        *sorted(var for var in os.environ if var.startswith("RECALLGYM")),
    ]
    return Environment(
        interpreter_name=py_name,
        interpreter_version=py_version,
        interpreter_path=sys.executable,
        platform=platform.platform(),
        variables=[Variable(var, val) for var in variables if (val := os.getenv(var))],
        packages=[Package(pkg, get_version(pkg)) for pkg in PACKAGES],
        bit_generator=type(np.random.default_rng().bit_generator).__name__,
        cpu_count=os.cpu_count() or 1,
    )


def print_debug_info() -> None:
    """Print environment information as a Markdown list."""
    info = get_debug_info()
    print(f"- __System__: {info.platform}")
    print(f"- __Python__: {info.interpreter_name} {info.interpreter_version} ({info.interpreter_path})")
    print(f"- __Random bit generator__: {info.bit_generator}")
    print(f"- __CPUs__: {info.cpu_count}")
    print("- __Environment variables__:")
    for var in info.variables:
        print(f"  - `{var.name}`: `{var.value}`")
    print("- __Installed packages__:")
    for pkg in info.packages:
        print(f"  - `{pkg.name}` v{pkg.version}")


if __name__ == "__main__":
    print_debug_info()
