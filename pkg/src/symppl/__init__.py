"""Hybrid particle filtering with per-variable encoding annotations."""

from .checker import apply_plan, check, enumerate_plans, rv_sites
from .parser import parse, print_program

__all__ = ["parse", "print_program", "check", "apply_plan", "enumerate_plans", "rv_sites"]
