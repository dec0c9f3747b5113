"""
Region layout: split strings to pixel rectangles
================================================

A layout is written as rows separated by ';' and column width ratios
separated by ','. A row may carry its own height ratio with an
'h:RATIO:' prefix. Resolving a layout against a canvas produces
non-overlapping rectangles that tile it exactly.
"""

from rpg.layout import Canvas, parse_split, resolve_regions, serialize_split, validate_partition

canvas = Canvas(width=24, height=12)

for text in ("1", "1,1", "2,1,1", "h:2:1;h:1:3,1", "1,1;1,1,1"):
    spec = parse_split(text)
    regions = resolve_regions(spec, canvas)
    print(f"split {text!r} -> {len(regions)} regions on {canvas.width}x{canvas.height}")

    # draw the index map as ASCII so the tiling is visible
    grid = [["." for _ in range(canvas.width)] for _ in range(canvas.height)]
    for index, rect in enumerate(regions):
        for y in range(rect.y0, rect.y1):
            for x in range(rect.x0, rect.x1):
                grid[y][x] = str(index % 10)
    for row in grid:
        print("   ", "".join(row))

    report = validate_partition(regions, canvas)
    print("    partition ok:", report.ok)

    # serialization is stable: text -> spec -> text -> the same spec
    assert parse_split(serialize_split(spec)) == spec
    print("    canonical form:", serialize_split(spec))
    print()

# ratios are relative, so the same split adapts to any canvas size
small = resolve_regions(parse_split("2,1,1"), Canvas(width=8, height=4))
print("same split on 8x4:", [(r.x0, r.width) for r in small])
