"""Cross-modal threat hunting: provenance subgraphs aligned with CTI report text."""

__version__ = "0.1.0"
