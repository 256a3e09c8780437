"""Render one procedural scene and print every training example it yields."""

from minipali.tasks import TASKS, expand, random_scene, render_array, tokenize

scene = random_scene(7, language="EN")
print("objects:", [(o.cls, o.color, o.bbox) for o in scene.objects])
print("glyphs:", [g.text for g in scene.glyphs])
print("image:", render_array(scene, 56).shape)

for ex in expand(scene, TASKS, resolution=224):
    print(f"{ex.task:>8} | {ex.input_text!r} -> {ex.target_text!r} ({len(tokenize(ex.target_text))} tokens)")
