"""Angle rigidity, angle-based localization and rigidity-maintenance control."""
