"""
Scheduling and rendering tampering
==================================

A schedule places one event per period, cycling through covered, defocussed and
moved. Extent sets how strong an event gets; rate_frames turns the onset into a
linear ramp instead of a jump.
"""
import numpy as np

from camtamper.frames import sobel_gradient
from camtamper.synth import make_schedule, synthesize, toy_scene

# a whole day at 3 fps: one event every ten minutes, two to three minutes long
day = make_schedule(24 * 3600 * 3, fps=3, period_s=600, dur_min_s=120, dur_max_s=180, seed=0)
labels = day.labels()
print("events:", len(day.events), " tampered share:", round(np.mean([l != "normal" for l in labels]), 3))

# a short clip with gradual onsets
scene = toy_scene(900, 96, 96, seed=1)
sched = make_schedule(900, fps=3, period_s=100, dur_min_s=40, dur_max_s=60, seed=4, extent=0.6, rate_frames=30)
out = list(synthesize(scene, sched))

for ev in sched.events:
    idx = [ev.start_frame, ev.start_frame + 10, ev.start_frame + 29, ev.end_frame - 1]
    # edge energy against the untouched frame shows the ramp for defocus and movement
    energy = [sobel_gradient(out[i][0]).magnitude.sum() / sobel_gradient(scene[i]).magnitude.sum() for i in idx]
    changed = [np.mean(out[i][0] != scene[i]) for i in idx]
    print(f"{ev.kind:>10} frames {ev.start_frame}-{ev.end_frame}: edge ratio {np.round(energy, 2)}, "
          f"changed px {np.round(changed, 2)}")
