"""
DenseNet-40 and its desk-scale relatives
========================================

DenseNet-40 keeps the first two dense blocks of DenseNet-121 and ends in two
1x1 projections on an 8x8 grid, which is where attention maps are tapped.
Building it prints the parameter count next to the published figure.
"""

import dataclasses

import numpy as np

from atx.experiments import desk_student_arch, desk_teacher_arch
from atx.models import attach_adapter, build_densenet40, build_densenet_scaled, forward_with_taps
from atx.tensor import Tensor, no_grad

model = build_densenet40(num_classes=14)
for name, shape in model.spatial_trace(256):
    print(f"{name:>12}  {shape[1]:>5} x {shape[2]:>3} x {shape[3]:<3}")
print("tap:", model.primary_tap)

# small teacher (three blocks) and student (two blocks) used for CPU runs
teacher = build_densenet_scaled(desk_teacher_arch(), seed=0)
student = build_densenet_scaled(desk_student_arch(), seed=0)
print(f"teacher {teacher.num_parameters():,} params, student {student.num_parameters():,} params")
print("tap shapes at 64px:", teacher.tap_shape(64), student.tap_shape(64))

# a student with a narrower tap gets a 1x1 adapter so the maps line up
narrow = build_densenet_scaled(dataclasses.replace(desk_student_arch(), projection_widths=(16, 16)))
attach_adapter(narrow, teacher.tap_shape(64), 64)
narrow.eval()
with no_grad():
    _, taps = forward_with_taps(narrow, Tensor(np.zeros((1, 3, 64, 64))))
print("adapted student tap:", taps[narrow.primary_tap].shape)
