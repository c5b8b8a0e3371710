from setuptools import setup

setup(
    use_scm_version={"write_to": "lsfem/_version.py", "fallback_version": "0.1.0"},
    setup_requires=["setuptools_scm"],
)
