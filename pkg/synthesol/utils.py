#! /usr/bin/env python
# -*- coding: utf-8 -*-

"""Output helpers and the worker pool."""

import errno
import json
import logging
import math
import os

import numpy as np
from astropy.io import ascii
from astropy.table import Table
from pathos.pools import ProcessPool

log = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'


def mkdir_p(path):
    """Create a directory, ignoring it if it already exists."""
    try:
        os.makedirs(path)
    except OSError as exc:
        if exc.errno == errno.EEXIST and os.path.isdir(path):
            pass
        else:
            raise


def worker_count(threads=None):
    """Number of workers: CPU count capped by SYNTHESOL_THREADS and threads."""
    count = os.cpu_count() or 1
    env = os.environ.get('SYNTHESOL_THREADS')
    if env:
        try:
            count = min(count, max(1, int(env)))
        except ValueError:
            log.warning('ignoring SYNTHESOL_THREADS=%r', env)
    if threads:
        count = min(count, max(1, int(threads)))
    return count


def parallel_map(func, items, threads=None):
    """Map ``func`` over ``items`` in a process pool; results keep order."""
    items = list(items)
    workers = min(worker_count(threads), len(items))
    if workers <= 1:
        return [func(item) for item in items]
    log.debug('mapping %d items over %d workers', len(items), workers)
    pool = ProcessPool(nodes=workers)
    try:
        return pool.map(func, items)
    finally:
        pool.close()
        pool.join()
        pool.clear()


def _jsonable(obj):
    """Plain Python values for json; non-finite floats become None."""
    if isinstance(obj, dict):
        return {str(key): _jsonable(value) for key, value in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(value) for value in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def dumps(obj, indent=2):
    """JSON text; floats are written with round-trip precision."""
    return json.dumps(_jsonable(obj), indent=indent, allow_nan=False)


def write_json(obj, path):
    with open(path, 'w') as fh:
        fh.write(dumps(obj) + '\n')
    log.info('wrote %s', path)


def write_table(columns, path):
    """Write named columns as CSV with 17 significant digits."""
    table = Table(columns)
    formats = {name: FLOAT_FORMAT for name in table.colnames
               if table[name].dtype.kind == 'f'}
    ascii.write(table, path, format='csv', formats=formats, overwrite=True)
    log.info('wrote %s (%d rows)', path, len(table))
    return table


def read_table(path):
    return ascii.read(path, format='csv')
