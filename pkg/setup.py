from setuptools import setup, find_packages

tests_require = [
    'pytest>=7',
]

setup(
    name='wsa-separation',
    version='0.1.0',
    description='windowed sink attention for mel-band transformer source separation',
    packages=find_packages(exclude=["bin", "tests"]),
    entry_points={
        "console_scripts": [
            "wsa-separation-cli=wsa_separation.bin.wsa_cli:main",
        ],
    },
    tests_require=tests_require,
    extras_require={
        "tests": tests_require,
    },
    install_requires=[
        'six',
        'numpy',
        'torch',
        'soundfile',
        'librosa',
        'pandas',
    ]
)
