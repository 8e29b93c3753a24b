"""
Domain models for the spectral dynamics toolkit
"""
