"""
Masks in UV space
=================

A mask template is pasted into the UV texture of a face and the result is
splatted back to the image through the position map.  Here the "face" is a
synthetic canvas and the position map is the identity shifted by a few
pixels, so the rendered mask moves with it.
"""

from pathlib import Path

import numpy as np

from hsstlab import masksynth as ms
from hsstlab.data import gen_identity_canvas

out = Path("demo_out/masks")
out.mkdir(parents=True, exist_ok=True)

texture = gen_identity_canvas(seed=7, identity=3)
h, w = texture.shape[:2]

# shift the face 3 px right and 2 px down; texels that fall off the image are invalid
position = ms.identity_position_map(h, w, dx=3, dy=2)
validity = (position[..., 0] < w) & (position[..., 1] < h)
assets = ms.UVAssets(texture, position, validity)

for template in ms.template_library(h):
    image = ms.synthesize_masked(assets, template, (h, w), background=(0.0, 0.0, 0.0))
    ms.write_png(out / f"{template.name}.png", image)
    print(f"{template.name:9s} covers {template.region.mean():.1%} of the UV raster")

# texels outside the mask region are untouched by the compositing step
tpl = ms.procedural_template("cloth", h)
masked_texture = ms.composite(texture, tpl)
print("outside region unchanged:", np.array_equal(masked_texture[~tpl.region], texture[~tpl.region]))

# the same pipeline is available as `hsstlab synth-mask`
ms.write_png(out / "texture.png", texture)
ms.write_position_map(out / "position.uva", position, validity)
print("try: hsstlab synth-mask --texture", out / "texture.png", "--posmap", out / "position.uva",
      "--template n95 --out", out / "cli.png", "--bg 0,0,0")
