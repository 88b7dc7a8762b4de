import pathlib
import subprocess

import setuptools
from setuptools import setup

# The directory containing this file
HERE = pathlib.Path(__file__).parent

# get module version from git tag
package_version = subprocess.run(['git', 'describe', '--tags'],
                                 stdout=subprocess.PIPE).stdout.decode("utf-8").strip() or "0.1.0"
# The text of the README file
README = (HERE / "README.md").read_text()

setup(
    name="molecular_sync",
    version=package_version,
    description="Timing-offset estimation for quantity-based modulation over inverse Gaussian diffusion channels",
    long_description=README,
    long_description_content_type="text/markdown",
    license="MIT",
    classifiers=[
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Operating System :: OS Independent",
        "Topic :: Scientific/Engineering"
    ],
    packages=setuptools.find_packages(exclude=["tests"]),
    include_package_data=True,
    install_requires=["pydantic>=1.9.1,<2", "numpy>=1.22", "scipy>=1.8", "pandas>=1.4"],
    entry_points={"console_scripts": ["molecular-sync=molecular_sync.__main__:main"]},
    python_requires=">=3.9"
)
