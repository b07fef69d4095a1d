from setuptools import setup

install_requires = [
    'click>=6.7',
    'h5py>=2.7.1',
    'networkx>=1.11',
    'numpy>=1.13.1',
    'pandas>=0.22.0',
    'progressbar2>=3.36.0',
    'scipy>=1.0.0'
]

setup(
    name='gridtrack',
    version='0.1',
    packages=['gridtrack', 'scripts'],
    package_data={'gridtrack': ['cases/*.json']},
    entry_points='''
        [console_scripts]
        gridtrack=scripts.runner:main
    ''',
    install_requires=install_requires,
    extras_require={'test': ['pytest>=7.0']}
)
