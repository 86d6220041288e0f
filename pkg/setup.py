'''asynccredit setup

To install: python setup.py install
'''

import sys

try:
    import setuptools
except ImportError:
    sys.exit('Please install setuptools.')

VERSION = '0.1.0'
AUTHOR  = 'asynccredit Development Team'

# Installing requirements.txt dependencies
dependencies=[]
requirements = open('requirements.txt', 'r')
for dependency in requirements:
    dependencies.append(str(dependency))

setuptools.setup(
    name='asynccredit',
    author=AUTHOR,
    version=VERSION,
    license='MIT',
    description='asynccredit: credit assignment for multi-agent reinforcement learning with asynchronous actions',
    long_description="Agents whose actions take several environment steps are trained centrally with a shared recurrent network. Every agent is paired with a proxy slot that replays its running action, so executing agents keep contributing to the joint value, and a multiplicative value decomposition mixer scores interactions between deciding agents and the proxies of the executing ones. Exhaustive tabular oracles and gradient checks verify the construction on small instances.",
    keywords=['multi-agent reinforcement learning', 'credit assignment', 'value decomposition'],
    platforms=['Linux','MacOS'],
    install_requires=dependencies,
    classifiers=[
        'Programming Language :: Python',
        'Operating System :: MacOS',
        'Operating System :: Unix',
        'Programming Language :: Python :: 3.7',
        'Topic :: Scientific/Engineering :: Artificial Intelligence'
      ],
    packages=setuptools.find_packages(exclude=['tests']),
    package_data={
        'asynccredit': ['config.yaml']
    },
    entry_points={
        'console_scripts': [
            'asynccredit = scripts.async_credit:main',
        ]
    },
    test_suite= 'tests',
 )
