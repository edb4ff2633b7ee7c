"""
BPTD test suite
"""
