"""Writes cube_2x2x3.fdc with the struct module only.

Value at (y, x, b) is 100*y + 10*x + b + 0.25; pixel (1, 0) is masked (NaN).
Variance at band b is 1 + b/2 (0 on the masked pixel). Band origin 4700.
"""
import math
import struct

ny, nx, l = 2, 2, 3
flags = 1 | 2
out = bytearray(b"FDC1")
out += struct.pack("<4I", ny, nx, l, flags)
out += struct.pack("<q", 4700)
for y in range(ny):
    for x in range(nx):
        for b in range(l):
            v = math.nan if (y, x) == (1, 0) else 100 * y + 10 * x + b + 0.25
            out += struct.pack("<d", v)
for y in range(ny):
    for x in range(nx):
        for b in range(l):
            out += struct.pack("<d", 0.0 if (y, x) == (1, 0) else 1 + b / 2)
open(__file__.replace("make_cube_2x2x3.py", "cube_2x2x3.fdc"), "wb").write(out)
