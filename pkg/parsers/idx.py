"""
Parser du format binaire IDX (MNIST et apparentés).

Format (big endian):
    u8  0x00
    u8  0x00
    u8  type des éléments (0x08 u8, 0x09 i8, 0x0B i16, 0x0C i32, 0x0D f32, 0x0E f64)
    u8  nombre de dimensions n
    n × u32  dimensions
    éléments, ordre row-major

Les fichiers gzip (.gz) sont décompressés de façon transparente.
"""
import gzip
import logging
import struct
from typing import Optional, Tuple

import numpy as np

from utils.errors import ParseError

logger = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}

GZIP_MAGIC = b"\x1f\x8b"


def read_header(data: bytes) -> Tuple[np.dtype, Tuple[int, ...], int]:
    """
    Lit l'en-tête IDX.

    Returns:
        (dtype big-endian, dimensions, offset du premier élément)
    """
    if len(data) < 4:
        raise ParseError(f"en-tête IDX tronqué: {len(data)} octets, 4 attendus", offset=len(data))
    zero, type_code, ndim = struct.unpack(">HBB", data[:4])
    if zero != 0:
        raise ParseError(f"magic IDX invalide: 0x{data[:4].hex()}", offset=0)
    if type_code not in IDX_DTYPES:
        raise ParseError(f"type d'élément IDX inconnu: 0x{type_code:02x}", offset=2)
    end = 4 + 4 * ndim
    if len(data) < end:
        raise ParseError(f"dimensions IDX tronquées: {len(data)} octets, {end} attendus", offset=len(data))
    dims = struct.unpack(f">{ndim}I", data[4:end]) if ndim else ()
    return IDX_DTYPES[type_code], tuple(int(d) for d in dims), end


def parse_idx(data: bytes, as_pixels: Optional[bool] = None) -> np.ndarray:
    """
    Décode un blob IDX (éventuellement gzip).

    Args:
        data: Contenu du fichier
        as_pixels: Convertit des octets u8 en float64 dans [0, 1] (/255).
            None = automatique: vrai pour les fichiers u8 de rang >= 2 (images),
            faux pour les vecteurs (labels, renvoyés en int64)

    Returns:
        Tableau numpy aux dimensions du fichier (ordre natif)

    Raises:
        ParseError: magic invalide ou contenu tronqué (avec offset)
    """
    if data[:2] == GZIP_MAGIC:
        try:
            data = gzip.decompress(data)
        except (OSError, EOFError) as e:
            raise ParseError(f"flux gzip invalide: {e}", offset=0) from e

    dtype, dims, start = read_header(data)
    count = int(np.prod(dims)) if dims else 1
    expected = start + count * dtype.itemsize
    if len(data) < expected:
        raise ParseError(
            f"contenu IDX tronqué: {len(data)} octets, {expected} attendus",
            offset=len(data),
        )
    if len(data) > expected:
        logger.warning(f"IDX: {len(data) - expected} octets en trop ignorés")

    values = np.frombuffer(data, dtype=dtype, count=count, offset=start).reshape(dims)
    pixels = as_pixels if as_pixels is not None else (dtype.kind == "u" and len(dims) >= 2)
    if pixels:
        if dtype.itemsize != 1:
            raise ParseError("conversion en pixels réservée aux fichiers u8", offset=2)
        return values.astype(np.float64) / 255.0
    if dtype.kind in "ui":
        return values.astype(np.int64)
    return values.astype(np.float64)


def encode_idx(values: np.ndarray, type_code: int = 0x08) -> bytes:
    """Encode un tableau au format IDX (fixtures de test, exports)."""
    if type_code not in IDX_DTYPES:
        raise ParseError(f"type d'élément IDX inconnu: 0x{type_code:02x}", offset=2)
    values = np.asarray(values)
    header = struct.pack(">HBB", 0, type_code, values.ndim)
    header += struct.pack(f">{values.ndim}I", *values.shape) if values.ndim else b""
    return header + values.astype(IDX_DTYPES[type_code]).tobytes()


def read_idx_file(path: str, as_pixels: Optional[bool] = None) -> np.ndarray:
    """Lit un fichier IDX (gzip ou non) depuis le disque."""
    with open(path, "rb") as f:
        data = f.read()
    try:
        return parse_idx(data, as_pixels=as_pixels)
    except ParseError as e:
        raise ParseError(f"{path}: {e.detail}", offset=e.offset) from e
