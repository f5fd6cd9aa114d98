#!/usr/bin/env python
# -*- coding: utf-8 -*-
#
# Sphinx configuration of the synthesol documentation.

import os
import sys

sys.path.insert(0, os.path.abspath('..'))

import synthesol  # noqa: E402

extensions = ['sphinx.ext.autodoc', 'sphinx.ext.napoleon',
              'sphinx.ext.viewcode']
autodoc_member_order = 'bysource'
napoleon_google_docstring = False

source_suffix = '.rst'
master_doc = 'index'
exclude_patterns = ['_build']

project = 'synthesol'
author = 'The synthesol developers'
copyright = '2026, ' + author
version = release = synthesol.__version__

pygments_style = 'sphinx'
html_theme = 'sphinx_rtd_theme'

man_pages = [
    (master_doc, 'synthesol', 'synthesol Documentation', [author], 1),
]
