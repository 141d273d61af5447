"""
Test package for Stock Valuation Tool
"""
