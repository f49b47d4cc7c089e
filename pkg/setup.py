from setuptools import setup, find_packages  # type: ignore


with open("README.md", "r") as f:
    readme = f.read()


setup(
    name="tisdyn",
    version="0.1.0",
    description="Coupled Lotka-Volterra simulator for competing technological innovation systems",
    long_description=readme,
    long_description_content_type="text/markdown",
    url="",
    license="",
    python_requires=">=3.8",
    packages=find_packages(exclude=("tests", "sample-output")),
    package_data={"tisdyn": ["data/*.yaml"]},
    install_requires=["click", "numpy", "pandas>=1.5", "scipy", "PyYAML", "pydantic>=2"],
    entry_points="""
        [console_scripts]
        tisdyn=tisdyn.tisdyn:tisdyn
    """,
)
