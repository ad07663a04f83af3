"""Privacy and fidelity audit toolkit for synthetic social-media corpora."""

__version__ = "0.1.0"
