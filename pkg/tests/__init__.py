"""analogverify test suite.

Unit tests per module, CLI tests, and slow end-to-end protocol checks
(marked ``slow``, deselected by default).
"""
