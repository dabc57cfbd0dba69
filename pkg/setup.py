"""
Install aggne and its dependencies.

Run

    python -m pip install .

from the repository root.
"""

from __future__ import annotations

from pathlib import Path

from setuptools import setup

long_description = (Path(__file__).parent / "README.md").read_text()

setup(
    long_description=long_description,
    long_description_content_type="text/markdown",
)
