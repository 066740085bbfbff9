"""
Скрипт установки пакета.
"""
from setuptools import setup, find_packages
from pathlib import Path

# Чтение README для длинного описания
readme_file = Path(__file__).parent / "README.md"
long_description = ""
if readme_file.exists():
    with open(readme_file, "r", encoding="utf-8") as f:
        long_description = f.read()

setup(
    name="meta-fault-recovery",
    version="1.0.0",
    description="Мета-обучение и коррекция опорной траектории квадрокоптера при отказах винтов",
    long_description=long_description,
    long_description_content_type="text/markdown",
    author="Meta Fault Recovery",
    packages=find_packages(exclude=["tests", "tests.*", "examples", "examples.*"]),
    install_requires=[
        "numpy>=1.24",
        "matplotlib>=3.7",
        "jsonschema>=4.17",
    ],
    extras_require={
        "test": ["pytest>=7.4"],
    },
    data_files=[
        ("schemas", ["schemas/metrics_report.schema.json"]),
        ("scenarios", [str(p) for p in sorted(Path("scenarios").glob("*.json"))]),
        ("", ["config.json"]),
    ],
    python_requires=">=3.9",
    entry_points={
        "console_scripts": [
            "meta-recovery=src.main:main",
        ],
    },
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Topic :: Scientific/Engineering",
    ],
)
