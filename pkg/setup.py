import setuptools

about = {}  # type: ignore
with open("sslchrono/__about__.py") as f:
    exec(f.read(), about)

with open("Readme.md", "r") as f:
    long_description = f.read()
description = long_description.splitlines()[1].strip("> ")

setuptools.setup(
    name="sslchrono",
    version=about["__version__"],
    description=description,
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=setuptools.find_packages(exclude=["tests"]),
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.7",
    install_requires=[
        "matplotlib>=3.3",
        "numpy>=1.20",
        "pandas>=1.3",
        "pyyaml",
        "toml",
        "traitlets>=5.0",
    ],
    entry_points={"console_scripts": ["sslchrono = sslchrono.main:main"]},
)
