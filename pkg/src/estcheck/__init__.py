"""Static call-sequence checking for a C++ subset.

Pipeline: sources or facts -> call graph -> execution sequence trees ->
condition-selected variants -> CTL rules.
"""

__version__ = "0.1.0"
