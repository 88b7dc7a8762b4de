import os
import subprocess

# bump when the layout of cached statistics or weights changes
CACHE_FORMAT_VERSION = 1

FALLBACK_VERSION = "0.1.0"


def _describe() -> str:
    try:
        described = subprocess.run(['git', 'describe', '--tags'], stdout=subprocess.PIPE,
                                   stderr=subprocess.DEVNULL,
                                   cwd=os.path.dirname(os.path.abspath(__file__))).stdout.decode("utf-8").strip()
    except OSError:
        return FALLBACK_VERSION
    return described or FALLBACK_VERSION


__version__ = _describe()
