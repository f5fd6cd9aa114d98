#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""Tests for `synthesol.utils`."""

import json
import os

import numpy as np

from synthesol import utils


def test_mkdir_p(tmp_path):
    target = str(tmp_path / 'a' / 'b')
    utils.mkdir_p(target)
    utils.mkdir_p(target)
    assert os.path.isdir(target)


def test_worker_count(monkeypatch):
    monkeypatch.setenv('SYNTHESOL_THREADS', '1')
    assert utils.worker_count() == 1
    monkeypatch.setenv('SYNTHESOL_THREADS', 'many')
    assert utils.worker_count(1) == 1
    monkeypatch.delenv('SYNTHESOL_THREADS')
    assert utils.worker_count() == (os.cpu_count() or 1)


def test_parallel_map_serial():
    assert utils.parallel_map(abs, [-1, 2, -3], threads=1) == [1, 2, 3]


def test_dumps():
    text = utils.dumps({'pass': True, 'value': 0.1, 'missing': float('nan'),
                        'count': np.int64(3), 'q': np.array([1.0, 2.5]),
                        'nested': [{'a': None}], 'third': 1.0 / 3.0})
    assert '"missing": null' in text
    loaded = json.loads(text)
    assert loaded['pass'] is True
    assert loaded['value'] == 0.1
    assert loaded['third'] == 1.0 / 3.0
    assert loaded['count'] == 3
    assert loaded['q'] == [1.0, 2.5]
    assert loaded['nested'] == [{'a': None}]


def test_dumps_escapes_text():
    message = 'line one\nline "two"\t\\ \x01'
    loaded = json.loads(utils.dumps({message: message, 7: 'seven'}))
    assert loaded[message] == message
    assert loaded['7'] == 'seven'


def test_table_round_trip(tmp_path):
    path = str(tmp_path / 'field.csv')
    utils.write_table({'q1': np.array([0.1, np.pi]),
                       'chart': np.array([0, 1])}, path)
    with open(path) as fh:
        assert fh.readline().strip() == 'q1,chart'
        assert fh.readline().strip() == '0.10000000000000001,0'
    table = utils.read_table(path)
    assert table['q1'][1] == np.pi
    assert list(table['chart']) == [0, 1]
