"""
Harvesting calibration samples from mouse clicks
=================================================

Replay a synthetic usage log through the three click filters (application
context, press duration, corner proximity) and look at what survives.
"""
import numpy as np

from tricam.clickcalib import FilterCriteria, detect_clicks, extract_samples, random_log, replay, run_stages

rng = np.random.default_rng(0)
events = random_log(rng, n_events=400, gaze_noise_px=60.0)
print(f"{len(events)} events spanning {events[-1].t - events[0].t:.0f} s")

report = replay(events)
print()
print(report.stage_table())
print(report.context_table())
print(f"{report.n_samples} aligned samples, {report.samples_per_click:.2f} per click, "
      f"{report.samples_per_minute:.1f} per minute")

# each kept click yields frames while the button is down plus six after release
opp = run_stages(detect_clicks(events), FilterCriteria())["C"][0]
for s in extract_samples(opp):
    print(f"  t = {s.capture_t:9.4f} s  {s.phase:13s} label {np.round(s.cursor, 1)}")

# a square corner zone is stricter than the default circular one
square = replay(events, FilterCriteria(corner_metric="chebyshev"))
print("final clicks, euclidean vs chebyshev corner zone:", report.stage_counts["C"], square.stage_counts["C"])
