"""Mobility-flow analytics from pseudonymized phone event records.

Pipeline: CDR/XDR files -> per-user events -> dwell-validated trips -> daily
origin-destination matrices -> flow volume series, entropy flow diversity
(with province clustering), and map-equation communities (local job markets).
"""

__version__ = "0.1.0"
