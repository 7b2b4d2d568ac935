"""Explicit curve constructions: branched cover, Zorich, IVV counterexample, Rosay, Möbius."""
from .branched import branched_cover_A, measure_cover, zorich
from .field import Annulus, Ball, BlockRuns, Box, CurveField, DomainError, Strip, Whole
from .ivv import ivv_choose_k, ivv_F, ivv_G, ivv_h, ivv_H, ivv_s
from .mobius import (MobiusMap, calibrated_mobius, mobius_component_curve, mobius_derivative, mobius_eval,
                     random_mobius)
from .rosay import RosayN0Error, rosay_F, rosay_u

__all__ = [
    "Annulus", "Ball", "BlockRuns", "Box", "CurveField", "DomainError", "MobiusMap", "RosayN0Error", "Strip",
    "Whole", "branched_cover_A", "calibrated_mobius", "ivv_F", "ivv_G", "ivv_H", "ivv_choose_k", "ivv_h",
    "ivv_s", "measure_cover", "mobius_component_curve", "mobius_derivative", "mobius_eval", "random_mobius",
    "rosay_F", "rosay_u", "zorich",
]
