"""
Force closure of chord grasps on a sphere
=========================================

Closing the jaws along a chord at offset h from a sphere's center makes
both contact lines meet the surface normal at asin(h / r). Two frictional
contacts hold when that angle fits inside the friction cone, atan(mu).
The table below comes from ray casting the fingers against the analytic
sphere, and it reproduces the closed form.
"""

import math

import numpy as np

from nvsgrasp.geometry import RigidTransform
from nvsgrasp.graspeval import FrictionSweep, compute_contacts, contact_angles, fc_sweep
from nvsgrasp.graspgen import Grasp, GripperSpec
from nvsgrasp.synthscene import Primitive, SceneSpec

r = 0.05
center = np.array([0.0, 0.0, 0.1])
scene = SceneSpec((Primitive("sphere", RigidTransform(np.eye(3), center), (r,), (0.7, 0.7, 0.7), 1),),
                  table=None)
gripper = GripperSpec(max_width=0.12)
sweep = FrictionSweep()

print("offset   contact angle   closed form   smallest passing mu")
for h in (0.0, 0.01, 0.02, 0.025, 0.03, 0.035, 0.04):
    grasp = Grasp(RigidTransform(np.eye(3), center + [0, 0, h]), 2 * r + 0.01, 1.0, 0, "real")
    c = compute_contacts(grasp, gripper, scene)
    a1, _ = contact_angles(c.c1, c.c2, c.n1, c.n2)
    ok, mu = fc_sweep(grasp, gripper, scene, sweep)
    print(f"{h:6.3f}   {math.degrees(a1):10.2f} deg   {math.degrees(math.asin(h / r)):8.2f} deg   "
          f"{mu if ok else 'none'}")

print("friction cone half-angles:",
      ", ".join(f"mu {m}: {math.degrees(math.atan(m)):.1f} deg" for m in sweep.coefficients))
