"""suturesim: deterministic simulator and analysis toolkit for an
OCT-guided autonomous vascular-anastomosis robot."""

__version__ = "0.1.0"
