#!/usr/bin/env python3
import setuptools

with open("README.md", "r") as fh:
    long_description = fh.read()

setuptools.setup(
    name="pcapbd",
    version="0.1.0",
    author="pcapbd developers",
    author_email="author@example.com",
    description="PCAP backdoor toolkit: trigger injection, stealth audit, flow features, IDS model and defense",
    long_description=long_description,
    long_description_content_type="text/markdown",
    include_package_data=True,
    packages=setuptools.find_packages(exclude=["tests"]),
    package_data={"pcapbd": ["pcapbd_default_config.txt", "templates/*.jinja"]},
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    python_requires='>=3.8',
    install_requires=[
        "numpy>=1.20",
        "scipy>=1.6",
        "pandas>=1.2",
        "click>=7.1",
        "jinja2>=2.11",
        "scikit-learn>=1.1",
    ],
    extras_require={
        "test": ["pytest>=6", "scapy>=2.4"],
    },
    entry_points={
        "console_scripts": [
            "pcapbd = pcapbd.cli:run",
        ],
    },
)
