"""Unit conversion constants used at device/model boundaries."""

MICROUNITS_PER_UNIT = 1.0e6
PMOL_PER_UNIT = 6000.0
MIN_PER_HOUR = 60.0
MG_PER_G = 1000.0


def u_per_hr_to_u_per_min(rate):
    return rate / MIN_PER_HOUR


def u_per_min_to_u_per_hr(rate):
    return rate * MIN_PER_HOUR


def u_to_microunits(units):
    return units * MICROUNITS_PER_UNIT


def u_to_pmol(units):
    return units * PMOL_PER_UNIT
