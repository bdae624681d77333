"""
Configuration, logging setup and the error hierarchy
"""
