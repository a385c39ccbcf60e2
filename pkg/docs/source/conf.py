import datetime

import iterlog

project = "iterlog"
author = "iterlog contributors"
copyright = f"{datetime.date.today().year}"
release = version = iterlog.__version__

extensions = [
    "myst_parser",
    "sphinx.ext.intersphinx",
]

myst_enable_extensions = ["dollarmath"]

html_theme = "furo"

intersphinx_mapping = {
    "python": ("https://docs.python.org/3", None),
    "numpy": ("https://numpy.org/doc/stable", None),
    "scipy": ("https://docs.scipy.org/doc/scipy", None),
}

nitpicky = True
