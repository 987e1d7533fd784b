from setuptools import find_packages, setup

setup(
        name='tbrm_sim',
        version='0.1',
        description='Slotted cross-layer scheduling simulator with token bucket rate modifiers',
        packages=find_packages(exclude=['tests']),
        python_requires='>=3.8',
        install_requires=[
            'hydra-core>=1.2',
            'omegaconf>=2.2,<2.4',
            'PyYAML>=5.4',
            'python-dotenv',
            'tqdm',
            'numpy>=1.22',
            'scipy>=1.9',
            'pandas>=1.5',
        ],
        data_files=[('.', ['.env'])],
        entry_points={
            'console_scripts': [
                'tbrm-run=src.experiments.run:main',
                'tbrm-sweep-sigma=src.experiments.sweep_sigma:main',
                'tbrm-sweep-tau=src.experiments.sweep_tau:main',
                'tbrm-metrics=src.experiments.metrics:main',
            ],
        },
    )
