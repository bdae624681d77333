"""
semdrive test suite; run `pytest -m "not slow"` for the fast subset
"""
