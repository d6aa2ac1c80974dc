"""Small numeric helpers shared by the simulator and the reference kernels."""

import ctypes
import ctypes.util
import struct

_libm = ctypes.CDLL(ctypes.util.find_library("m") or "libm.so.6")
_libm.fma.restype = ctypes.c_double
_libm.fma.argtypes = [ctypes.c_double, ctypes.c_double, ctypes.c_double]


def fma(a, b, c):
    """Fused multiply-add with a single rounding, like the FPU."""
    return _libm.fma(a, b, c)


_pack_d = struct.Struct("<d").pack
_unpack_d = struct.Struct("<d").unpack
_pack_q = struct.Struct("<Q").pack
_unpack_q = struct.Struct("<Q").unpack


def double_to_bits(x):
    return _unpack_q(_pack_d(x))[0]


def bits_to_double(b):
    return _unpack_d(_pack_q(b & 0xFFFF_FFFF_FFFF_FFFF))[0]
