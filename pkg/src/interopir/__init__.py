"""Interoperability toolchain over a small kinded IR.

Two stub generators (an IDL marshaling compiler and a C-header embedding
compiler) emit IR modules that run on a bundled interpreter with a simulated
byte-addressable memory.
"""

__version__ = "0.1.0"
