"""Attention-transfer knowledge distillation on a numpy autodiff core."""
