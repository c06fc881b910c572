#!/usr/bin/env python3
"""Regenerates the digit glyph atlas under core/assets/glyphs.

Each digit is rendered with DejaVu Sans Bold, binarized, cropped to its ink
bounding box and rescaled (nearest neighbour) to a common height so every
glyph has the same nominal height. Output is binary PGM (P5).
"""
import argparse
import pathlib

from PIL import Image, ImageDraw, ImageFont

FONT = "/usr/share/fonts/truetype/dejavu/DejaVuSans-Bold.ttf"


def render(digit: str, height: int) -> Image.Image:
    font = ImageFont.truetype(FONT, size=height * 2)
    canvas = Image.new("L", (height * 3, height * 3), 0)
    ImageDraw.Draw(canvas).text((height // 2, height // 4), digit, fill=255, font=font)
    canvas = canvas.point(lambda v: 255 if v >= 128 else 0)
    glyph = canvas.crop(canvas.getbbox())
    width = max(1, round(glyph.width * height / glyph.height))
    return glyph.resize((width, height), Image.NEAREST)


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "core/assets/glyphs"))
    parser.add_argument("--height", type=int, default=160)
    args = parser.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for d in range(10):
        render(str(d), args.height).save(out / f"digit_{d}.pgm")


if __name__ == "__main__":
    main()
