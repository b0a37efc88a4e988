"""
From a depth frame to network inputs
====================================

A synthetic hand is rendered, segmented by its centre of mass, cropped to
a 250 mm cube, and turned into a 96x96 patch plus 24x24 joint heatmaps.
Images land in ``notebooks_out/01``.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from hmtnet.camera import cube_pixel_bounds, project
from hmtnet.data_io import SyntheticSpec, generate_synthetic
from hmtnet.heatmap import decode_argmax, labels_to_heatmaps, patch_to_grid, save_heatmap_image
from hmtnet.preprocessing import compute_com, crop_normalize, normalize_labels

out = Path("notebooks_out/01")
out.mkdir(parents=True, exist_ok=True)

# a seeded synthetic frame: 21 joints (MSRA layout) rendered as spheres
data = generate_synthetic(SyntheticSpec(seed=3), 1)
frame, joints = data.frame(0), data.joints(0)
print(data.topo.describe())
print("depth range of the hand:", frame.depth[frame.depth > 0].min(), frame.depth.max(), "mm")

# centre of mass of the nearest 200 mm band, and the crop cube around it
crop = compute_com(frame)
print("COM (mm):", np.round(crop.center_array, 1), " planted:", np.round(data.samples[0].com, 1))
bounds = cube_pixel_bounds(crop, frame.intrinsics)
print("crop rectangle u [%.1f, %.1f] v [%.1f, %.1f]" % (bounds.u_min, bounds.u_max, bounds.v_min, bounds.v_max))

# joints projected into the image
uvd = project(joints, frame.intrinsics)
print("wrist at pixel (%.1f, %.1f), depth %.1f mm" % tuple(uvd[0]))

# the normalised patch: hand in [-1, 1], background at +1
patch = crop_normalize(frame, crop)
img = ((1.0 - patch.values) * 127.5).astype(np.uint8)
Image.fromarray(img).save(out / "patch.png")

# labels in cube units and their heatmaps
labels = normalize_labels(joints, crop)
maps = labels_to_heatmaps(labels, data.topo.J)
for j in (0, 4, 20):
    save_heatmap_image(maps[j], out / f"heatmap_{j:02d}.png")
    print("joint %2d: label grid (%.2f, %.2f), heatmap peak %s" % (
        j, *patch_to_grid(labels.reshape(-1, 3)[j, :2]), decode_argmax(maps[j])))

# the sum of all maps shows the whole hand skeleton at 24x24
save_heatmap_image(maps.max(axis=0), out / "all_joints.png")
print("wrote", sorted(p.name for p in out.iterdir()))
