"""Random drcov logs for round-trip and set-algebra tests."""

import numpy as np

from neurofuzz.coverage import make_log

PATHS = ["/usr/lib/libxul.so", "/lib/x86_64-linux-gnu/libc.so.6", "/opt/app/renderer",
         "/usr/lib/libxul.so.debug", "C:\\Program Files\\app, with comma\\core.dll"]


def random_log(rng: np.random.Generator, max_blocks: int = 500, max_modules: int = 4):
    n_mod = int(rng.integers(1, max_modules + 1))
    modules = []
    for i in range(n_mod):
        base = int(rng.integers(0, 2**40)) * 0x1000
        modules.append((PATHS[i % len(PATHS)], base, base + int(rng.integers(1, 2**24))))
    n = int(rng.integers(0, max_blocks + 1))
    blocks = zip(rng.integers(0, 2**32, n, dtype=np.uint64).tolist(),
                 rng.integers(1, 2**16, n).tolist(),
                 rng.integers(0, n_mod, n).tolist())
    return make_log(modules, blocks)


def naive_block_set(log, module_filter=""):
    """Reference: a plain loop over every record."""
    paths = {m.id: m.path for m in log.modules}
    out = set()
    for rec in log.blocks:
        path = paths[rec.module_id]
        if module_filter in path:
            out.add((path, rec.start_offset))
    return out
