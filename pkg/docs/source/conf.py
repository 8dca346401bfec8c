# -*- coding: utf-8 -*-
#
# Configuration file for the Sphinx documentation builder.

import os
import sys
sys.path.insert(0, os.path.abspath('../..'))


# -- Project information -----------------------------------------------------

project = 'skmechreg'
copyright = '2026, the scikit-mechreg developers'
author = 'the scikit-mechreg developers'

version = ''
release = ''


# -- General configuration ---------------------------------------------------

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.mathjax',
    'sphinx.ext.viewcode',
    'sphinx_rtd_theme'
]

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'
language = 'en'
exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store']
pygments_style = None


# -- Options for HTML output -------------------------------------------------

html_theme = 'sphinx_rtd_theme'
html_static_path = []
htmlhelp_basename = 'skmechregdoc'


# -- Options for LaTeX and manual page output --------------------------------

latex_documents = [
    (master_doc, 'skmechreg.tex', 'skmechreg Documentation',
     author, 'manual'),
]

man_pages = [
    (master_doc, 'skmechreg', 'skmechreg Documentation',
     [author], 1)
]
