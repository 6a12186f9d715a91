#!/usr/bin/env python
# -*- coding: utf-8 -*-

from __future__ import absolute_import
from __future__ import unicode_literals

import codecs
import os

from setuptools import find_packages
from setuptools import setup


# read file content
def read(*parts):
    path = os.path.join(os.path.dirname(__file__), *parts)
    with codecs.open(path, encoding="utf-8") as fobj:
        return fobj.read()


# setup main
# required modules
install_requires = [
    "setuptools_scm>=6.3.2",
    "click>=8.1.3",
    "pyyaml>=6.0",
    "tqdm>=4.62.3",
    "numpy>=1.24",
    "torch>=2.1",
]

setup(
    name="vpt-nullspace",
    use_scm_version={"root": ".", "relative_to": __file__, "local_scheme": "node-and-timestamp"},
    description="Null-space projected visual prompt tuning for class-incremental learning",
    long_description=read("README.md"),
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests.*", "tests"]),
    include_package_data=True,
    install_requires=install_requires,
    extras_require={"test": ["pytest>=7.0"]},
    python_requires=">=3.9",
    classifiers=[
        "Development Status :: 4 - Beta",
        "Environment :: Console",
        "Intended Audience :: Science/Research",
        "Programming Language :: Python :: 3",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
    entry_points="""
        [console_scripts]
        vptns=vpt_nullspace.commands.vptns:vptns
    """,
)
