#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Writes the synthetic chest radiograph used by the case1 fixture (binary PGM)."""
import math
import sys

W, H = 256, 256


def pixel(x, y):
    # soft body silhouette with two darker lung fields and a bright spine
    cx = (x - W / 2) / (W * 0.42)
    cy = (y - H * 0.55) / (H * 0.5)
    body = max(0.0, 1.0 - (cx * cx + cy * cy))
    v = 40 + 150 * math.sqrt(body)
    for lx in (W * 0.33, W * 0.67):
        dx = (x - lx) / (W * 0.14)
        dy = (y - H * 0.52) / (H * 0.26)
        if dx * dx + dy * dy < 1.0:
            v -= 80 * (1.0 - (dx * dx + dy * dy))
    if abs(x - W / 2) < W * 0.035 and y > H * 0.15:
        v += 60
    for k in range(6):
        ry = H * (0.32 + 0.07 * k)
        if abs(y - ry - 0.0006 * (x - W / 2) ** 2) < 2.0 and abs(x - W / 2) > W * 0.05:
            v += 35
    return v


def marker(x, y):
    # block letter L in the upper right corner
    x0, y0 = int(W * 0.82), int(H * 0.05)
    return (x0 <= x < x0 + 6 and y0 <= y < y0 + 30) or (x0 <= x < x0 + 20 and y0 + 24 <= y < y0 + 30)


def main(path):
    data = bytearray()
    for y in range(H):
        for x in range(W):
            v = 250 if marker(x, y) else pixel(x, y)
            data.append(max(0, min(255, int(round(v)))))
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (W, H))
        f.write(bytes(data))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "case1_chest.pgm")
