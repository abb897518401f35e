"""
Setup for the space-time scale mixture simulator
"""

# Always prefer setuptools over distutils
from setuptools import setup, find_packages
# To use a consistent encoding
from codecs import open
from os import path

here = path.abspath(path.dirname(__file__))

# Get the long description from the README file
with open(path.join(here, 'README.rst'), encoding='utf-8') as f:
    long_description = f.read()

setup(
    name='ScaleMixSim',

    version='1.0.0',

    description='Simulation and neural fitting of space-time random scale mixtures for extreme rainfall',
    long_description=long_description,

    license='MIT',

    classifiers=[
        'Development Status :: 3 - Alpha',

        'Intended Audience :: Science/Research',
        'Topic :: Scientific/Engineering :: Atmospheric Science',
        'Topic :: Scientific/Engineering :: Mathematics',

        'License :: OSI Approved :: MIT License',

        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
    ],

    keywords='extremes rainfall copula random fields tail dependence simulation neural estimation',

    packages=find_packages(exclude=['contrib', 'docs', 'tests']),

    python_requires='>=3.9',

    # List run-time dependencies here.  These will be installed by pip when
    # your project is installed.
    install_requires=[
        'numpy>=1.22',
        'scipy>=1.8',
        'pandas>=1.4',
        'joblib>=1.1',
    ],

    # $ pip install -e .[dev,test]
    extras_require={
        'dev': ['check-manifest'],
        'test': ['coverage', 'hypothesis', 'pytest'],
    },

    # The bundled station layout is read at run time
    package_data={
        'scalemix_sim': ['data/*.csv'],
    },

    entry_points={
        'console_scripts': [
            'scalemix-sim=scalemix_sim.simulator:main',
        ],
    },
)
