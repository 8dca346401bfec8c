from setuptools import (
    setup,
    find_packages,
)  # Always prefer setuptools over distutils

install_requires = ["numpy>=1.17", "scipy>=1.4", "numdifftools>=0.9.20",
                    "pandas>=1.5"]

extras_require = {
    "dev": ["pytest", "pytest-cov", "sphinx", "sphinx_rtd_theme"]
}

setup(
    name="scikit-mechreg",
    version="0.0.1",
    description="Deformable image registration with biomechanical "
                "regularisation",
    long_description="""scikit-mechreg
==============

Deformable 3D image registration with rigidity, shearing and Jacobian
regularisation driven by anatomy masks""",
    url="",
    author="",
    author_email="",
    license="MIT",
    classifiers="""Development Status :: 3 - Alpha
Topic :: Scientific/Engineering :: Medical Science Apps.
License :: OSI Approved :: MIT License
Programming Language :: Python :: 3
Programming Language :: Python :: 3.8""",
    keywords="registration deformable medical imaging regularisation",
    python_requires=">=3.8",
    packages=find_packages(exclude=["tests"]),
    install_requires=install_requires,
    extras_require=extras_require,
    package_data={"skmechreg.datasets": ["*.json"]},
    entry_points={"console_scripts": ["skmechreg=skmechreg.cli:main"]},
)
