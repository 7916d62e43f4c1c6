import setuptools
from distutils.util import convert_path


PACKAGE_NAME = "eosedit"
PIP_NAME = "eosedit"
REPO_NAME = "eosedit"

version = {}
version_path = convert_path(f"{PACKAGE_NAME}/version.py")
with open(version_path) as version_file:
    exec(version_file.read(), version)

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

with open("requirements/core.txt") as f:
    core_required = f.read().splitlines()

with open("requirements/sd14.txt") as f:
    sd14_required = f.read().splitlines()
    sd14_required = [req for req in sd14_required if req and "-r" not in req]

setuptools.setup(
    name=PIP_NAME,
    version=version["__version__"],
    description="Zero-shot prompt editing through the <EOS> slot of a text-to-image conditioning",
    long_description=long_description,
    long_description_content_type="text/markdown",
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    packages=setuptools.find_packages(exclude=["tests", "tests.*", "examples", "examples.*"]),
    python_requires=">=3.8",
    install_requires=core_required,
    extras_require={"sd14": sd14_required},
    entry_points={"console_scripts": ["eosedit=eosedit.__main__:run"]},
)
