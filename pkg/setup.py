"""Setup script for eer-cli."""

from setuptools import setup

setup()
