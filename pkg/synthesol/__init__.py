# -*- coding: utf-8 -*-

"""Top-level package for synthesol."""

__author__ = """The synthesol developers"""
__email__ = ''
__version__ = '0.1.0'
