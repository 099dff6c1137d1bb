# Configuration file for the Sphinx documentation builder.
#
# For a full list of options see the documentation:
# https://www.sphinx-doc.org/en/master/usage/configuration.html

import os
import sys
from packaging.version import parse

sys.path.insert(0, os.path.abspath('../'))

import sksits  # noqa: E402

# -- Project information -----------------------------------------------------
project = 'scikit-sits'
copyright = '2026, scikit-sits team'
author = 'scikit-sits team'

parsed_version = parse(sksits.__version__)
if parsed_version.is_postrelease:
    release = parsed_version.base_version
else:
    release = sksits.__version__


# -- General configuration ---------------------------------------------------

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.viewcode',
    'sphinx.ext.autosummary',
    'sphinx.ext.doctest',
    'sphinx.ext.intersphinx',
    'sphinx.ext.mathjax',
    'sphinx.ext.napoleon',
]

autodoc_default_options = {
    'members': True,
    'inherited-members': False
}

autosummary_generate = True

autodoc_member_order = 'bysource'

# torch is heavy to import on documentation builders
autodoc_mock_imports = ['torch']

napoleon_use_ivar = True

templates_path = ['_templates']

exclude_patterns = [
    '_build',
    'Thumbs.db',
    '.DS_Store',
    'modules.rst',
    'sksits*.rst',
]

source_suffix = '.rst'

master_doc = 'index'

# -- Options for HTML output -------------------------------------------------

html_theme = 'sphinx_rtd_theme'
html_scaled_image_link = False

intersphinx_mapping = {
    'python': ('https://docs.python.org/3', None),
    'numpy': ('https://numpy.org/doc/stable/', None),
    'pandas': ('https://pandas.pydata.org/docs/', None),
    'torch': ('https://pytorch.org/docs/stable/', None),
}
