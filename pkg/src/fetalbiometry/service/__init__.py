"""HTTP service wrapping the analysis library.

Handlers in `handlers` are the single implementation of every command;
`app` binds them to FastAPI routes and the CLI calls them in-process.
"""

from .app import create_app

__all__ = ["create_app"]
