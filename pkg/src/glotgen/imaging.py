"""Plain-text PPM (P3) export of token grids.

The palette is fixed and documented here: index 0 is the background, 1-7
the object colors, 8-15 a reserved gray ramp. Images are written with
nearest-neighbor upscaling so a 16x16 grid becomes a 256x256 image by
default; a reader can invert the mapping exactly by sampling block corners
and matching palette entries.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .vocab import TokenGrid

# palette index -> (r, g, b)
PALETTE: tuple[tuple[int, int, int], ...] = (
    (24, 24, 24),      # 0 background
    (220, 50, 47),     # 1 red
    (64, 160, 43),     # 2 green
    (38, 110, 210),    # 3 blue
    (238, 200, 20),    # 4 yellow
    (235, 125, 20),    # 5 orange
    (130, 60, 180),    # 6 purple
    (240, 130, 170),   # 7 pink
) + tuple((40 + 24 * i, 40 + 24 * i, 40 + 24 * i) for i in range(8))


class ImagingError(RuntimeError):
    pass


def grid_to_ppm_text(grid: TokenGrid, scale: int = 16) -> str:
    """Render the grid to a P3 PPM string with nearest-neighbor upscaling."""
    side = grid.side
    size = side * scale
    lines = [f"P3 {size} {size} 255"]
    for row in range(side):
        row_pixels = []
        for col in range(side):
            row_pixels.extend([PALETTE[int(grid.cells[row, col])]] * scale)
        text_row = " ".join(f"{r} {g} {b}" for r, g, b in row_pixels)
        lines.extend([text_row] * scale)
    return "\n".join(lines) + "\n"


def write_ppm(grid: TokenGrid, path, scale: int = 16) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(grid_to_ppm_text(grid, scale=scale), encoding="ascii")
    except OSError as exc:
        raise ImagingError(f"cannot write image {path}: {exc}") from exc


def read_ppm_to_grid(path, side: int = 16) -> TokenGrid:
    """Invert write_ppm by sampling block corners and nearest-palette lookup."""
    tokens = Path(path).read_text(encoding="ascii").split()
    if tokens[0] != "P3":
        raise ImagingError(f"{path} is not a plain P3 PPM")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if width != height or width % side:
        raise ImagingError(f"image {width}x{height} does not tile into {side}x{side}")
    scale = width // side
    values = np.asarray(tokens[4:], dtype=np.int64)
    if values.size != width * height * 3:
        raise ImagingError(f"pixel data truncated in {path}")
    pixels = values.reshape(height, width, 3)
    palette = np.asarray(PALETTE, dtype=np.int64)
    cells = np.zeros((side, side), dtype=np.uint8)
    for r in range(side):
        for c in range(side):
            px = pixels[r * scale, c * scale]
            dist = np.sum((palette - px) ** 2, axis=1)
            cells[r, c] = int(np.argmin(dist))
    return TokenGrid(side=side, cells=cells)


def export_images(grids: dict[str, TokenGrid], out_dir, scale: int = 16) -> list[Path]:
    """Write one PPM per named grid; keys become file stems."""
    out_dir = Path(out_dir)
    paths = []
    for name, grid in grids.items():
        path = out_dir / f"{name}.ppm"
        write_ppm(grid, path, scale=scale)
        paths.append(path)
    return paths
